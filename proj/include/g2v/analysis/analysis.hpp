// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/ad/tensor.hpp"
#include "g2v/io/topology.hpp"
#include "g2v/io/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace g2v::analysis {

using ad::Index;
using ad::Matrix;

inline constexpr double kBoltzmannKcal = 0.0019872041;  // kcal/mol/K

enum class EnergyUnits { kKT, kKcal };
EnergyUnits parse_units(const std::string& s);

/// Values are NaN in bins that received no samples.
struct Grid2d {
  std::vector<double> edges_x;
  std::vector<double> edges_y;
  Matrix values;  // bins_x x bins_y
};

struct PmfGrid : Grid2d {
  double temperature = 300.0;
  EnergyUnits units = EnergyUnits::kKT;
};

/// Equal-width bins spanning [min, max] of each column (max falls in the last bin).
std::vector<double> bin_edges(const Eigen::VectorXd& values, Index bins);
Index bin_of(double v, const std::vector<double>& edges);

PmfGrid pmf_from_counts(const Matrix& counts, double temperature, EnergyUnits units);
PmfGrid pmf2d(const Matrix& cv_pairs, Index bins_x, Index bins_y, double temperature, EnergyUnits units);

Grid2d conditional_mean_map(const Eigen::VectorXd& cv, const Eigen::VectorXd& coord1, const Eigen::VectorXd& coord2,
                            Index bins1, Index bins2);

void write_grid(const Grid2d& grid, const std::filesystem::path& path, const std::string& title);

struct NativeContacts {
  std::vector<std::pair<std::size_t, std::size_t>> contacts;  // residue pairs
  std::vector<double> q;         // per frame
  std::vector<double> q_smooth;  // centered moving average
  std::size_t window_frames = 1;
};

/// Centered moving average with the window shrunk symmetrically near the ends.
std::vector<double> centered_moving_average(const std::vector<double>& x, std::size_t window);

NativeContacts native_contacts(const io::Frame& reference, const io::Trajectory& traj, const io::Topology& top,
                               double cutoff = 4.5, std::size_t min_separation = 3, double window_ns = 1.0);

/// Signed N-CA-CB-gamma dihedral of one residue; gamma is OG1 for THR,
/// otherwise the first gamma heavy atom by name.
double chi1_dihedral(const io::Topology& top, const io::Frame& frame, std::size_t residue);

/// Optimal-superposition RMSD of two equally sized point sets.
double kabsch_rmsd(const io::Frame& a, const io::Frame& b);
/// RMSD over CA atoms of residues [first, last].
double ca_rmsd(const io::Frame& frame, const io::Frame& reference, const io::Topology& top, std::size_t first,
               std::size_t last);

enum class BenchMode { kInference, kTraining };

struct BenchOptions {
  std::vector<std::uint32_t> hidden{64, 128, 256, 384};
  std::vector<std::uint32_t> layers{1, 2, 3, 4, 5, 6};
  std::size_t n_atoms = 144;
  std::size_t n_frames = 2;
  std::size_t batch = 1;
  std::size_t runs = 3;
  std::size_t warmup = 1;
  std::size_t memory_budget = std::size_t{4} << 30;  // bytes of tracked tensors, 0 = unlimited
  double r_cut = 5.0;
  std::uint64_t seed = 0;
  bool inference = true;
  bool training = true;
};

struct BenchCell {
  std::uint32_t hidden = 0;
  std::uint32_t layers = 0;
  BenchMode mode = BenchMode::kInference;
  double seconds = 0.0;  // median over runs
  std::size_t peak_bytes = 0;
  bool missing = false;
};

struct BenchReport {
  std::size_t n_atoms = 0;
  std::size_t n_frames = 0;
  std::size_t batch = 0;
  std::vector<BenchCell> cells;

  const BenchCell* find(std::uint32_t hidden, std::uint32_t layers, BenchMode mode) const;
};

/// Compact synthetic globule of heavy atoms (protein-like density).
std::pair<io::Frame, std::vector<int>> bench_fixture(std::size_t n_atoms, std::uint64_t seed);

BenchReport bench_grid(const BenchOptions& opt);
void write_bench_text(const BenchReport& r, const std::filesystem::path& path);
void write_bench_csv(const BenchReport& r, const std::filesystem::path& path);

}  // namespace g2v::analysis
