// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/io/topology.hpp"
#include "g2v/io/trajectory.hpp"

#include <cstdint>
#include <vector>

namespace g2v::io {

/// Four-bead chain with a two-well torsion U(phi) = cos(2 phi), integrated by
/// overdamped Langevin dynamics. Energies are in units where the torsion
/// amplitude is 1; kT = kToyBaseKT * temperature_factor.
struct ToyParams {
  double bond_k = 200.0;
  double angle_k = 40.0;
  double angle0 = 1.9106332362490186;  // tetrahedral
  double dt = 1e-3;
  std::size_t steps_per_frame = 200;
  double frame_interval = 0.2;  // ns attached to the output trajectory
};

inline constexpr double kToyBaseKT = 0.4;

struct ToySystem {
  Trajectory trajectory;
  Topology topology;
  std::vector<int> labels;  // sign(phi_t): -1 or +1
};

/// Starts from the phi = -pi/2 minimum. Requires n_frames >= 1000.
ToySystem generate_toy_trajectory(std::size_t n_frames, double temperature_factor, std::uint64_t seed,
                                  const ToyParams& params = {});

/// Potential energy of one chain configuration (4 x 3) and its gradient.
double toy_energy(const Frame& x, const ToyParams& params, Frame* grad);

/// Places d so that |cd| = bond, angle(b,c,d) = angle, dihedral(a,b,c,d) = torsion.
Eigen::Vector3d place_atom(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                           double bond, double angle, double torsion);

}  // namespace g2v::io
