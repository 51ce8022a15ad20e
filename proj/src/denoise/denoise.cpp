// SPDX-License-Identifier: Apache-2.0
#include "g2v/denoise/denoise.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace g2v::denoise {

namespace {

constexpr int kElements[3] = {6, 7, 8};
constexpr double kMinNonBonded = 1.3;

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d u;
  do {
    u = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  } while (u.norm() < 1e-6);
  return u.normalized();
}

Tensor frame_tensor(const io::Frame& f) { return Tensor::constant(Matrix(f)); }

}  // namespace

double bond_length(int z1, int z2) {
  const int lo = std::min(z1, z2), hi = std::max(z1, z2);
  if (lo == 6 && hi == 6) return 1.53;
  if (lo == 6 && hi == 7) return 1.47;
  if (lo == 6 && hi == 8) return 1.43;
  if (lo == 7 && hi == 7) return 1.45;
  if (lo == 7 && hi == 8) return 1.40;
  return 1.48;
}

std::vector<Conformer> make_synthetic_corpus(std::size_t count, std::size_t min_atoms, std::size_t max_atoms,
                                             std::uint64_t seed) {
  if (min_atoms < 2 || max_atoms < min_atoms) throw ConfigError("synthetic corpus needs 2 <= min_atoms <= max_atoms");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size_dist(min_atoms, max_atoms);
  std::discrete_distribution<int> element({0.6, 0.2, 0.2});
  std::vector<Conformer> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t n = size_dist(rng);
    Conformer c;
    c.positions = io::Frame::Zero(static_cast<Index>(n), 3);
    std::vector<int> degree(n, 0);
    c.z.push_back(kElements[element(rng)]);
    bool ok = true;
    for (std::size_t i = 1; i < n && ok; ++i) {
      const int zi = kElements[element(rng)];
      ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        const std::size_t parent = pick(rng);
        if (degree[parent] >= 4) continue;
        const Eigen::Vector3d p = c.positions.row(static_cast<Index>(parent)).transpose() +
                                  bond_length(zi, c.z[parent]) * random_unit(rng);
        bool clash = false;
        for (std::size_t j = 0; j < i && !clash; ++j)
          clash = j != parent && (c.positions.row(static_cast<Index>(j)).transpose() - p).norm() < kMinNonBonded;
        if (clash) continue;
        c.positions.row(static_cast<Index>(i)) = p.transpose();
        c.z.push_back(zi);
        ++degree[parent];
        ++degree[i];
        ok = true;
      }
    }
    if (!ok) continue;
    const Eigen::RowVector3d com = c.positions.colwise().mean();
    c.positions.rowwise() -= com;
    out.push_back(std::move(c));
  }
  return out;
}

Corrupted corrupt_frame(const io::Frame& frame, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("noise sigma must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Corrupted c;
  c.displacement.resize(frame.rows(), 3);
  for (Index i = 0; i < frame.rows(); ++i)
    for (Index k = 0; k < 3; ++k) c.displacement(i, k) = normal(rng);
  c.noisy = frame + c.displacement;
  return c;
}

io::Frame DisplacementStats::standardize(const io::Frame& displacement) const {
  io::Frame out = displacement;
  for (Index i = 0; i < out.rows(); ++i) out.row(i) = (out.row(i) - mean).cwiseQuotient(std);
  return out;
}

DisplacementStats displacement_stats(const std::vector<io::Frame>& displacements) {
  std::size_t n = 0;
  Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
  for (const auto& d : displacements) {
    sum += d.colwise().sum();
    n += static_cast<std::size_t>(d.rows());
  }
  if (n < 2) throw DataError("displacement statistics need at least 2 samples");
  DisplacementStats s;
  s.mean = sum / static_cast<double>(n);
  Eigen::RowVector3d sq = Eigen::RowVector3d::Zero();
  for (const auto& d : displacements)
    for (Index i = 0; i < d.rows(); ++i) sq += (d.row(i) - s.mean).cwiseAbs2();
  s.std = (sq / static_cast<double>(n)).cwiseSqrt();
  for (int k = 0; k < 3; ++k)
    if (!(s.std[k] > 0.0)) throw NumericalError("zero variance component in displacements");
  return s;
}

DenoiseHead::DenoiseHead(Index d, std::uint64_t seed) {
  if (d < 2) throw ConfigError("denoise head needs at least 2 channels");
  nn::Rng rng(seed);
  first_ = heads::GatedEquivariantBlock(ps_, "denoise.geb0", d, d / 2, rng);
  second_ = heads::GatedEquivariantBlock(ps_, "denoise.geb1", d / 2, 1, rng);
  // untrained head is the zero predictor, so training starts at the variance baseline
  ps_.assign("denoise.geb1.w2.weight", Matrix::Zero(d / 2, 1));
}

Tensor DenoiseHead::operator()(const encoder::AtomFeatures& atoms) const {
  const auto [x1, v1] = first_(atoms.scalar, atoms.vector);
  const auto [x2, v2] = second_(x1, v1);
  return ad::concat_cols({v2[0], v2[1], v2[2]});
}

void DenoiseConfig::validate() const {
  if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
}

double evaluate_mse(const encoder::Encoder& enc, const DenoiseHead& head, const std::vector<Corrupted>& items,
                    const std::vector<const std::vector<int>*>& z, const DisplacementStats& stats) {
  ad::NoGradGuard guard;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Tensor pred = head(enc.forward(items[k].noisy, *z[k]));
    sum += (pred.value() - Matrix(stats.standardize(items[k].displacement))).squaredNorm();
    count += static_cast<std::size_t>(pred.value().size());
  }
  return sum / static_cast<double>(count);
}

PretrainResult pretrain(encoder::Encoder& enc, DenoiseHead& head, const std::vector<Conformer>& data,
                        const DenoiseConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.size() <= cfg.n_valid) throw ConfigError("validation size leaves no training conformers");
  const std::size_t n_train = data.size() - cfg.n_valid;
  std::mt19937_64 rng(seed);

  PretrainResult res;
  {
    std::vector<io::Frame> sample;
    for (std::size_t k = 0; k < n_train; ++k) sample.push_back(corrupt_frame(data[k].positions, cfg.noise_sigma, rng()).displacement);
    res.stats = displacement_stats(sample);
  }
  std::vector<Corrupted> valid;
  std::vector<const std::vector<int>*> valid_z;
  for (std::size_t k = n_train; k < data.size(); ++k) {
    valid.push_back(corrupt_frame(data[k].positions, cfg.noise_sigma, rng()));
    valid_z.push_back(&data[k].z);
  }

  optim::OptimizerConfig oc;
  oc.mode = optim::OptimizerMode::kAdamWAmsgrad;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  optim::Optimizer opt(oc, {&enc.parameters(), &head.parameters()});

  res.initial_valid_mse = evaluate_mse(enc, head, valid, valid_z, res.stats);
  res.best = optim::snapshot(enc.config(), {&enc.parameters(), &head.parameters()});
  res.best_valid_mse = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs && !res.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t stop = std::min(n_train, start + cfg.batch_size);
      Tensor total;
      std::size_t count = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const Conformer& c = data[order[b]];
        const Corrupted item = corrupt_frame(c.positions, cfg.noise_sigma, rng());
        const Tensor pred = head(enc.forward(item.noisy, c.z));
        const Tensor err = ad::sum(ad::square(ad::sub(pred, frame_tensor(res.stats.standardize(item.displacement)))));
        total = total.defined() ? ad::add(total, err) : err;
        count += static_cast<std::size_t>(pred.rows() * 3);
      }
      const Tensor loss = ad::scale(total, 1.0 / static_cast<double>(count));
      if (!std::isfinite(loss.item())) {
        res.diverged = true;
        break;
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      epoch_sum += total.item();
      epoch_count += count;
    }
    if (res.diverged) break;
    res.train_mse.push_back(epoch_sum / static_cast<double>(epoch_count));
    const double v = evaluate_mse(enc, head, valid, valid_z, res.stats);
    if (!std::isfinite(v)) {
      res.diverged = true;
      break;
    }
    res.valid_mse.push_back(v);
    if (v < res.best_valid_mse) {
      res.best_valid_mse = v;
      res.best_epoch = epoch;
      res.best = optim::snapshot(enc.config(), {&enc.parameters(), &head.parameters()});
    }
  }
  res.best.metadata = {{"kind", "denoise"},
                       {"epoch", res.best_epoch},
                       {"valid_mse", res.best_valid_mse},
                       {"noise_sigma", cfg.noise_sigma},
                       {"stats_mean", {res.stats.mean[0], res.stats.mean[1], res.stats.mean[2]}},
                       {"stats_std", {res.stats.std[0], res.stats.std[1], res.stats.std[2]}}};
  return res;
}

void write_loss_curve(const std::vector<double>& mse, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# epoch mse\n" << std::setprecision(17);
  for (std::size_t e = 0; e < mse.size(); ++e) out << e << ' ' << mse[e] << '\n';
}

}  // namespace g2v::denoise
