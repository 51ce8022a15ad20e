// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/toy.hpp"

#include "g2v/error.hpp"
#include "g2v/io/features.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace g2v::io {

namespace {

using Vec = Eigen::Vector3d;

Vec row(const Frame& x, int i) { return x.row(i).transpose(); }

}  // namespace

Eigen::Vector3d place_atom(const Vec& a, const Vec& b, const Vec& c, double bond, double angle, double torsion) {
  const Vec bc = (c - b).normalized();
  const Vec n = (b - a).cross(bc).normalized();
  const Vec m = n.cross(bc);
  const Vec local(-bond * std::cos(angle), bond * std::sin(angle) * std::cos(torsion),
                  bond * std::sin(angle) * std::sin(torsion));
  return c + local.x() * bc + local.y() * m + local.z() * n;
}

double toy_energy(const Frame& x, const ToyParams& p, Frame* grad) {
  double energy = 0.0;
  if (grad) grad->setZero(4, 3);

  for (int i = 0; i < 3; ++i) {
    const Vec d = row(x, i + 1) - row(x, i);
    const double len = d.norm();
    const double dev = len - 1.0;
    energy += 0.5 * p.bond_k * dev * dev;
    if (grad) {
      const Vec g = p.bond_k * dev * d / len;
      grad->row(i + 1) += g.transpose();
      grad->row(i) -= g.transpose();
    }
  }

  for (int j = 1; j < 3; ++j) {
    const Vec u = row(x, j - 1) - row(x, j);
    const Vec v = row(x, j + 1) - row(x, j);
    const double nu = u.norm();
    const double nv = v.norm();
    const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
    const double theta = std::acos(c);
    const double dev = theta - p.angle0;
    energy += 0.5 * p.angle_k * dev * dev;
    if (grad) {
      const double s = std::max(std::sqrt(1.0 - c * c), 1e-12);
      const double dE_dc = -p.angle_k * dev / s;
      const Vec dc_du = v / (nu * nv) - c * u / (nu * nu);
      const Vec dc_dv = u / (nu * nv) - c * v / (nv * nv);
      grad->row(j - 1) += (dE_dc * dc_du).transpose();
      grad->row(j + 1) += (dE_dc * dc_dv).transpose();
      grad->row(j) -= (dE_dc * (dc_du + dc_dv)).transpose();
    }
  }

  const double phi = dihedral(row(x, 0), row(x, 1), row(x, 2), row(x, 3));
  energy += std::cos(2.0 * phi);
  if (grad) {
    // Blondel-Karplus gradient of phi.
    const Vec f = row(x, 0) - row(x, 1);
    const Vec g = row(x, 1) - row(x, 2);
    const Vec h = row(x, 3) - row(x, 2);
    const Vec a = f.cross(g);
    const Vec b = h.cross(g);
    const double gn = g.norm();
    const double a2 = a.squaredNorm();
    const double b2 = b.squaredNorm();
    const Vec d0 = -gn / a2 * a;
    const Vec d3 = gn / b2 * b;
    const Vec d1 = gn / a2 * a + f.dot(g) / (a2 * gn) * a - h.dot(g) / (b2 * gn) * b;
    const Vec d2 = -gn / b2 * b - f.dot(g) / (a2 * gn) * a + h.dot(g) / (b2 * gn) * b;
    const double dE = -2.0 * std::sin(2.0 * phi);
    grad->row(0) += (dE * d0).transpose();
    grad->row(1) += (dE * d1).transpose();
    grad->row(2) += (dE * d2).transpose();
    grad->row(3) += (dE * d3).transpose();
  }
  return energy;
}

ToySystem generate_toy_trajectory(std::size_t n_frames, double temperature_factor, std::uint64_t seed,
                                  const ToyParams& params) {
  if (n_frames < 1000) throw ConfigError("toy trajectory needs at least 1000 frames");
  if (!(temperature_factor > 0.0)) throw ConfigError("temperature_factor must be positive");

  Frame x(4, 3);
  const Vec p0(0.0, 0.0, 0.0);
  const Vec p1(1.0, 0.0, 0.0);
  const Vec p2 = p1 + Vec(-std::cos(params.angle0), std::sin(params.angle0), 0.0);
  const Vec p3 = place_atom(p0, p1, p2, 1.0, params.angle0, -M_PI / 2);
  x.row(0) = p0.transpose();
  x.row(1) = p1.transpose();
  x.row(2) = p2.transpose();
  x.row(3) = p3.transpose();

  const double kT = kToyBaseKT * temperature_factor;
  const double noise = std::sqrt(2.0 * kT * params.dt);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ToySystem sys;
  sys.trajectory.frame_interval = params.frame_interval;
  sys.trajectory.element_symbols.assign(4, "C");
  sys.trajectory.frames.reserve(n_frames);
  sys.labels.reserve(n_frames);
  Frame grad(4, 3);
  for (std::size_t t = 0; t < n_frames; ++t) {
    if (t > 0) {
      for (std::size_t s = 0; s < params.steps_per_frame; ++s) {
        toy_energy(x, params, &grad);
        for (int i = 0; i < 4; ++i) {
          for (int k = 0; k < 3; ++k) x(i, k) += -params.dt * grad(i, k) + noise * normal(rng);
        }
      }
      // The center of mass carries no information; keep the chain near the origin.
      const Eigen::RowVector3d com = x.colwise().mean();
      x.rowwise() -= com;
    }
    sys.trajectory.frames.push_back(x);
    const double phi = dihedral(row(x, 0), row(x, 1), row(x, 2), row(x, 3));
    sys.labels.push_back(phi >= 0.0 ? 1 : -1);
  }

  sys.topology.elements.assign(4, 6);
  sys.topology.atom_names.assign(4, "CA");
  sys.topology.residue_index = {0, 1, 2, 3};
  sys.topology.residue_names.assign(4, "GLY");
  return sys;
}

}  // namespace g2v::io
