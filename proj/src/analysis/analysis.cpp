// SPDX-License-Identifier: Apache-2.0
#include "g2v/analysis/analysis.hpp"

#include "g2v/encoder/encoder.hpp"
#include "g2v/error.hpp"
#include "g2v/io/features.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

namespace g2v::analysis {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

Eigen::Vector3d row3(const io::Frame& f, std::size_t i) { return f.row(static_cast<Index>(i)).transpose(); }

}  // namespace

EnergyUnits parse_units(const std::string& s) {
  if (s == "kT" || s == "kt") return EnergyUnits::kKT;
  if (s == "kcal" || s == "kcal/mol") return EnergyUnits::kKcal;
  throw ConfigError("unknown energy units '" + s + "' (expected kT or kcal)");
}

std::vector<double> bin_edges(const Eigen::VectorXd& values, Index bins) {
  if (bins < 1) throw ConfigError("bin count must be positive");
  if (values.size() == 0) throw DataError("cannot bin an empty series");
  if (!values.allFinite()) throw DataError("non-finite value in binned series");
  double lo = values.minCoeff(), hi = values.maxCoeff();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> e(static_cast<std::size_t>(bins) + 1);
  for (Index k = 0; k <= bins; ++k) e[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  e.back() = hi;
  return e;
}

Index bin_of(double v, const std::vector<double>& edges) {
  const Index bins = static_cast<Index>(edges.size()) - 1;
  const double lo = edges.front(), hi = edges.back();
  if (v <= lo) return 0;
  if (v >= hi) return bins - 1;
  // upper_bound keeps the assignment consistent with the stored edges
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  return std::clamp<Index>(static_cast<Index>(it - edges.begin()) - 1, 0, bins - 1);
}

PmfGrid pmf_from_counts(const Matrix& counts, double temperature, EnergyUnits units) {
  if (units == EnergyUnits::kKcal && !(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if ((counts.array() < 0.0).any()) throw DataError("negative histogram count");
  const double top = counts.maxCoeff();
  if (!(top > 0.0)) throw DataError("empty histogram");
  const double scale = units == EnergyUnits::kKcal ? kBoltzmannKcal * temperature : 1.0;
  PmfGrid g;
  g.temperature = temperature;
  g.units = units;
  g.values.resize(counts.rows(), counts.cols());
  // -ln(c/total) shifted by its minimum is ln(c_max / c)
  for (Index i = 0; i < counts.rows(); ++i)
    for (Index j = 0; j < counts.cols(); ++j)
      g.values(i, j) = counts(i, j) > 0.0 ? scale * std::log(top / counts(i, j)) : kNaN;
  return g;
}

PmfGrid pmf2d(const Matrix& cv_pairs, Index bins_x, Index bins_y, double temperature, EnergyUnits units) {
  if (cv_pairs.cols() != 2) throw DataError("pmf2d expects two CV columns");
  if (cv_pairs.rows() < 1) throw DataError("pmf2d needs at least one sample");
  if (bins_x < 2 || bins_y < 2) throw ConfigError("pmf2d needs at least 2 bins per axis");
  const Eigen::VectorXd x = cv_pairs.col(0), y = cv_pairs.col(1);
  const auto ex = bin_edges(x, bins_x), ey = bin_edges(y, bins_y);
  Matrix counts = Matrix::Zero(bins_x, bins_y);
  for (Index f = 0; f < cv_pairs.rows(); ++f) counts(bin_of(x(f), ex), bin_of(y(f), ey)) += 1.0;
  PmfGrid g = pmf_from_counts(counts, temperature, units);
  g.edges_x = ex;
  g.edges_y = ey;
  return g;
}

Grid2d conditional_mean_map(const Eigen::VectorXd& cv, const Eigen::VectorXd& coord1, const Eigen::VectorXd& coord2,
                            Index bins1, Index bins2) {
  if (cv.size() != coord1.size() || cv.size() != coord2.size())
    throw DataError("conditional map inputs differ in length (" + std::to_string(cv.size()) + ", " +
                    std::to_string(coord1.size()) + ", " + std::to_string(coord2.size()) + ")");
  Grid2d g;
  g.edges_x = bin_edges(coord1, bins1);
  g.edges_y = bin_edges(coord2, bins2);
  Matrix sum = Matrix::Zero(bins1, bins2), n = Matrix::Zero(bins1, bins2);
  for (Index f = 0; f < cv.size(); ++f) {
    const Index a = bin_of(coord1(f), g.edges_x), b = bin_of(coord2(f), g.edges_y);
    sum(a, b) += cv(f);
    n(a, b) += 1.0;
  }
  g.values.resize(bins1, bins2);
  for (Index a = 0; a < bins1; ++a)
    for (Index b = 0; b < bins2; ++b) g.values(a, b) = n(a, b) > 0.0 ? sum(a, b) / n(a, b) : kNaN;
  return g;
}

void write_grid(const Grid2d& grid, const std::filesystem::path& path, const std::string& title) {
  auto out = open_out(path);
  out << "# " << title << '\n' << "# x_edges";
  for (double e : grid.edges_x) out << ' ' << e;
  out << "\n# y_edges";
  for (double e : grid.edges_y) out << ' ' << e;
  out << '\n';
  for (Index i = 0; i < grid.values.rows(); ++i) {
    for (Index j = 0; j < grid.values.cols(); ++j) {
      if (j) out << ' ';
      if (std::isnan(grid.values(i, j)))
        out << "nan";
      else
        out << grid.values(i, j);
    }
    out << '\n';
  }
}

std::vector<double> centered_moving_average(const std::vector<double>& x, std::size_t window) {
  if (window < 1) throw ConfigError("moving-average window must be at least one frame");
  const std::size_t half = (window - 1) / 2;
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t h = std::min({half, t, n - 1 - t});
    double s = 0.0;
    for (std::size_t k = t - h; k <= t + h; ++k) s += x[k];
    out[t] = s / static_cast<double>(2 * h + 1);
  }
  return out;
}

NativeContacts native_contacts(const io::Frame& reference, const io::Trajectory& traj, const io::Topology& top,
                               double cutoff, std::size_t min_separation, double window_ns) {
  top.validate();
  const std::size_t n = top.atom_count();
  if (static_cast<std::size_t>(reference.rows()) != n) throw DataError("reference frame does not match the topology");
  if (traj.atom_count() != n && traj.frame_count() > 0) throw DataError("trajectory does not match the topology");
  if (!(traj.frame_interval > 0.0)) throw DataError("trajectory has no frame interval");

  std::vector<std::vector<std::size_t>> heavy(top.residue_count());
  for (std::size_t i = 0; i < n; ++i)
    if (top.elements[i] != 1) heavy[top.residue_index[i]].push_back(i);

  auto in_contact = [&](const io::Frame& f, std::size_t r1, std::size_t r2) {
    const double c2 = cutoff * cutoff;
    for (std::size_t a : heavy[r1])
      for (std::size_t b : heavy[r2])
        if ((f.row(static_cast<Index>(a)) - f.row(static_cast<Index>(b))).squaredNorm() < c2) return true;
    return false;
  };

  NativeContacts res;
  for (std::size_t r1 = 0; r1 < heavy.size(); ++r1)
    for (std::size_t r2 = r1 + min_separation; r2 < heavy.size(); ++r2)
      if (in_contact(reference, r1, r2)) res.contacts.emplace_back(r1, r2);
  if (res.contacts.empty()) throw DataError("reference structure has no native contacts");

  res.q.resize(traj.frame_count());
  for (std::size_t t = 0; t < traj.frame_count(); ++t) {
    std::size_t kept = 0;
    for (const auto& [r1, r2] : res.contacts) kept += in_contact(traj.frames[t], r1, r2) ? 1 : 0;
    res.q[t] = static_cast<double>(kept) / static_cast<double>(res.contacts.size());
  }
  const auto w = static_cast<std::size_t>(std::llround(window_ns / traj.frame_interval));
  res.window_frames = std::max<std::size_t>(1, w);
  res.q_smooth = centered_moving_average(res.q, res.window_frames);
  return res;
}

double chi1_dihedral(const io::Topology& top, const io::Frame& frame, std::size_t residue) {
  if (residue >= top.residue_count()) throw DataError("residue " + std::to_string(residue) + " out of range");
  if (static_cast<std::size_t>(frame.rows()) != top.atom_count()) throw DataError("frame does not match the topology");
  const bool thr = top.residue_names[residue] == "THR";
  std::optional<std::size_t> n, ca, cb, g;
  std::string g_name;
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.residue_index[i] != residue) continue;
    const std::string& name = top.atom_names[i];
    if (name == "N") n = i;
    else if (name == "CA") ca = i;
    else if (name == "CB") cb = i;
    else if (top.elements[i] != 1 && name.size() >= 2 && name[1] == 'G') {
      if (thr) {
        if (name == "OG1") g = i, g_name = name;
      } else if (!g || name < g_name) {
        g = i;
        g_name = name;
      }
    }
  }
  if (!n || !ca || !cb || !g)
    throw DataError("residue " + std::to_string(residue) + " (" + top.residue_names[residue] +
                    ") lacks the N, CA, CB and gamma atoms needed for chi1");
  return io::dihedral(row3(frame, *n), row3(frame, *ca), row3(frame, *cb), row3(frame, *g));
}

double kabsch_rmsd(const io::Frame& a, const io::Frame& b) {
  if (a.rows() != b.rows()) throw DataError("RMSD point sets differ in size");
  if (a.rows() < 1) throw DataError("RMSD of an empty point set");
  const Eigen::RowVector3d ca = a.colwise().mean(), cb = b.colwise().mean();
  const Eigen::MatrixX3d p = a.rowwise() - ca;
  const Eigen::MatrixX3d q = b.rowwise() - cb;
  const Eigen::Matrix3d h = p.transpose() * q;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = v * d * u.transpose();  // rotates p onto q
  // explicit residuals avoid the cancellation of the closed-form expression
  const Eigen::MatrixX3d diff = p * r.transpose() - q;
  return std::sqrt(diff.squaredNorm() / static_cast<double>(a.rows()));
}

double ca_rmsd(const io::Frame& frame, const io::Frame& reference, const io::Topology& top, std::size_t first,
               std::size_t last) {
  if (first > last) throw ConfigError("empty residue range");
  io::AtomSelection sel;
  for (std::size_t i : io::ca_indices(top))
    if (top.residue_index[i] >= first && top.residue_index[i] <= last) sel.indices.push_back(i);
  if (sel.indices.size() < 3) throw DataError("RMSD range has fewer than 3 CA atoms");
  return kabsch_rmsd(io::select_atoms(frame, sel), io::select_atoms(reference, sel));
}

const BenchCell* BenchReport::find(std::uint32_t hidden, std::uint32_t layers, BenchMode mode) const {
  for (const auto& c : cells)
    if (c.hidden == hidden && c.layers == layers && c.mode == mode) return &c;
  return nullptr;
}

std::pair<io::Frame, std::vector<int>> bench_fixture(std::size_t n_atoms, std::uint64_t seed) {
  // ~18 A^3 per heavy atom, 1.3 A minimum separation
  const double radius = std::cbrt(3.0 * 18.0 * static_cast<double>(n_atoms) / (4.0 * M_PI));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  std::discrete_distribution<int> pick({0.62, 0.17, 0.19, 0.02});
  const int elements[] = {6, 7, 8, 16};
  io::Frame x(static_cast<Index>(n_atoms), 3);
  std::vector<int> z(n_atoms);
  std::size_t placed = 0, attempts = 0;
  while (placed < n_atoms) {
    if (++attempts > 1000000) throw NumericalError("could not pack the benchmark fixture");
    const Eigen::RowVector3d p(u(rng), u(rng), u(rng));
    if (p.norm() > radius) continue;
    bool ok = true;
    for (std::size_t k = 0; k < placed && ok; ++k) ok = (x.row(static_cast<Index>(k)) - p).norm() >= 1.3;
    if (!ok) continue;
    x.row(static_cast<Index>(placed)) = p;
    z[placed++] = elements[pick(rng)];
  }
  return {x, z};
}

namespace {

double time_pass(const encoder::Encoder& enc, const io::Frame& x, const std::vector<int>& z, std::size_t n_frames,
                 std::size_t batch, BenchMode mode) {
  const auto t0 = std::chrono::steady_clock::now();
  if (mode == BenchMode::kInference) {
    ad::NoGradGuard guard;
    for (std::size_t f = 0; f < n_frames; ++f) (void)enc.forward(x, z);
  } else {
    for (std::size_t start = 0; start < n_frames; start += batch) {
      const std::size_t end = std::min(n_frames, start + batch);
      std::optional<ad::Tensor> loss;
      for (std::size_t f = start; f < end; ++f) {
        const encoder::AtomFeatures out = enc.forward(x, z);
        ad::Tensor l = ad::sum(ad::square(out.scalar));
        for (const auto& c : out.vector.axis) l = ad::add(l, ad::sum(ad::square(c)));
        loss = loss ? ad::add(*loss, l) : l;
      }
      loss->backward();
    }
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BenchReport bench_grid(const BenchOptions& opt) {
  if (opt.hidden.empty() || opt.layers.empty()) throw ConfigError("bench grid is empty");
  if (opt.n_frames < 1 || opt.batch < 1 || opt.runs < 1) throw ConfigError("bench needs frames, batch and runs >= 1");
  const auto [x, z] = bench_fixture(opt.n_atoms, opt.seed);
  BenchReport rep;
  rep.n_atoms = opt.n_atoms;
  rep.n_frames = opt.n_frames;
  rep.batch = opt.batch;
  std::vector<BenchMode> modes;
  if (opt.inference) modes.push_back(BenchMode::kInference);
  if (opt.training) modes.push_back(BenchMode::kTraining);
  const std::size_t saved_budget = ad::MemoryCounter::budget();
  for (BenchMode mode : modes)
    for (std::uint32_t d : opt.hidden)
      for (std::uint32_t layers : opt.layers) {
        BenchCell cell{d, layers, mode};
        encoder::EncoderConfig cfg;
        cfg.d = d;
        cfg.n_layers = layers;
        cfg.r_cut = opt.r_cut;
        try {
          ad::MemoryCounter::set_budget(opt.memory_budget);
          const encoder::Encoder enc(cfg, opt.seed + d * 31 + layers);
          ad::MemoryCounter::reset_peak();
          std::vector<double> t;
          for (std::size_t r = 0; r < opt.warmup + opt.runs; ++r) {
            const double s = time_pass(enc, x, z, opt.n_frames, opt.batch, mode);
            if (r >= opt.warmup) t.push_back(s);
          }
          std::sort(t.begin(), t.end());
          cell.seconds = t[t.size() / 2];
          cell.peak_bytes = ad::MemoryCounter::peak();
        } catch (const MemoryExhausted&) {
          cell.missing = true;
          cell.peak_bytes = opt.memory_budget;
        }
        ad::MemoryCounter::set_budget(saved_budget);
        rep.cells.push_back(cell);
      }
  return rep;
}

namespace {
const char* mode_name(BenchMode m) { return m == BenchMode::kInference ? "inference" : "training"; }
}  // namespace

void write_bench_text(const BenchReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "# " << r.n_atoms << " atoms, " << r.n_frames << " frames, batch " << r.batch << '\n';
  out << std::left << std::setw(10) << "mode" << std::right << std::setw(8) << "hidden" << std::setw(8) << "layers"
      << std::setw(14) << "seconds" << std::setw(14) << "peak_MiB" << '\n';
  for (const auto& c : r.cells) {
    out << std::left << std::setw(10) << mode_name(c.mode) << std::right << std::setw(8) << c.hidden << std::setw(8)
        << c.layers;
    if (c.missing) {
      out << std::setw(14) << "missing" << std::setw(14) << "-" << '\n';
      continue;
    }
    std::ostringstream s, m;
    s << std::fixed << std::setprecision(4) << c.seconds;
    m << std::fixed << std::setprecision(1) << static_cast<double>(c.peak_bytes) / (1024.0 * 1024.0);
    out << std::setw(14) << s.str() << std::setw(14) << m.str() << '\n';
  }
}

void write_bench_csv(const BenchReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mode,hidden,layers,seconds,peak_bytes,missing\n";
  for (const auto& c : r.cells)
    out << mode_name(c.mode) << ',' << c.hidden << ',' << c.layers << ',' << (c.missing ? kNaN : c.seconds) << ','
        << c.peak_bytes << ',' << (c.missing ? 1 : 0) << '\n';
}

}  // namespace g2v::analysis
