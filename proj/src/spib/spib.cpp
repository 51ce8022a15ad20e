// SPDX-License-Identifier: Apache-2.0
#include "g2v/spib/spib.hpp"

#include "g2v/error.hpp"
#include "g2v/io/digest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace g2v::spib {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Index nearest(const Matrix& points, Index i, const Matrix& centroids, double* dist2 = nullptr) {
  Index best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d = (points.row(i) - centroids.row(c)).squaredNorm();
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  if (dist2) *dist2 = bd;
  return best;
}

/// Renumbers labels to 0..n-1 in ascending order of the old ids.
LabelSeries compact(const std::vector<Index>& raw, Index n_old, std::vector<Index>* kept) {
  std::vector<char> used(static_cast<std::size_t>(n_old), 0);
  for (Index l : raw) used[static_cast<std::size_t>(l)] = 1;
  std::vector<Index> remap(static_cast<std::size_t>(n_old), -1);
  std::vector<Index> keep;
  for (Index l = 0; l < n_old; ++l)
    if (used[static_cast<std::size_t>(l)]) {
      remap[static_cast<std::size_t>(l)] = static_cast<Index>(keep.size());
      keep.push_back(l);
    }
  LabelSeries s;
  s.n_labels = static_cast<Index>(keep.size());
  s.labels.reserve(raw.size());
  for (Index l : raw) s.labels.push_back(remap[static_cast<std::size_t>(l)]);
  if (kept) *kept = std::move(keep);
  return s;
}

Matrix rows_of(const Matrix& features, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
               std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), features.cols());
  for (std::size_t k = begin; k < end; ++k) out.row(static_cast<Index>(k - begin)) = features.row(static_cast<Index>(pairs[k].first));
  return out;
}

std::vector<Index> next_labels_of(const LabelSeries& labels, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                  std::size_t begin, std::size_t end) {
  std::vector<Index> out;
  out.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) out.push_back(labels.labels[pairs[k].second]);
  return out;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed, std::size_t max_iter, double tol) {
  const Index n = points.rows();
  if (k < 1) throw ConfigError("k must be at least 1");
  if (k > n) throw DataError("k (" + std::to_string(k) + ") exceeds the number of frames (" + std::to_string(n) + ")");
  if (!points.allFinite()) throw DataError("non-finite values in k-means input");
  std::mt19937_64 rng(seed);

  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  // greedy variant: several D^2 draws per seed, keep the one that lowers the potential most
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  std::vector<double> cand(static_cast<std::size_t>(n)), best_d2(static_cast<std::size_t>(n));
  for (Index c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Index pick = -1;
    double best_pot = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < trials; ++trial) {
      Index p;
      if (total > 0.0) {
        std::discrete_distribution<Index> dist(d2.begin(), d2.end());
        p = dist(rng);
      } else {
        p = first(rng);
      }
      double pot = 0.0;
      for (Index i = 0; i < n; ++i) {
        cand[i] = std::min(d2[i], (points.row(i) - points.row(p)).squaredNorm());
        pot += cand[i];
      }
      if (pot < best_pot) {
        best_pot = pot;
        pick = p;
        best_d2.swap(cand);
      }
    }
    centroids.row(c) = points.row(pick);
    d2.swap(best_d2);
  }

  KMeansResult res;
  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (res.iterations = 0; res.iterations < max_iter;) {
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) assign[i] = nearest(points, i, centroids, &dist[i]);
    Matrix next = Matrix::Zero(k, points.cols());
    std::vector<Index> count(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      next.row(assign[i]) += points.row(i);
      ++count[assign[i]];
    }
    for (Index c = 0; c < k; ++c) {
      if (count[c] > 0) {
        next.row(c) /= static_cast<double>(count[c]);
      } else {
        // Re-seed an empty cluster at the worst-fit point.
        const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
        next.row(c) = points.row(far);
        dist[far] = 0.0;
      }
    }
    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    ++res.iterations;
    if (shift < tol) break;
  }
  std::vector<Index> raw(static_cast<std::size_t>(n));
  res.inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double d;
    raw[i] = nearest(points, i, centroids, &d);
    res.inertia += d;
  }
  std::vector<Index> kept;
  res.series = compact(raw, k, &kept);
  Matrix used(static_cast<Index>(kept.size()), points.cols());
  for (std::size_t c = 0; c < kept.size(); ++c) used.row(static_cast<Index>(c)) = centroids.row(kept[c]);
  res.centroids = std::move(used);
  return res;
}

LabelSeries kmeans_init(const Matrix& points, Index k, std::uint64_t seed) { return kmeans(points, k, seed).series; }

void SpibConfig::validate() const {
  if (d_z < 1) throw ConfigError("d_z must be at least 1");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (n_initial_states < 2) throw ConfigError("n_initial_states must be at least 2");
  if (lag_frames < 1) throw ConfigError("lag must be at least one frame");
  if (refinement_frequency < 1) throw ConfigError("refinement_frequency must be at least 1");
  if (n_pseudo < 1) throw ConfigError("n_pseudo must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (decoder_hidden < 1) throw ConfigError("decoder_hidden must be positive");
}

SpibModel::SpibModel(std::unique_ptr<heads::Lobe> encoder, Index d_z, Index n_labels, Index decoder_hidden,
                     const Matrix& pseudo_init, std::uint64_t seed)
    : encoder_(std::move(encoder)), d_z_(d_z), n_labels_(n_labels) {
  if (encoder_->output_dim() != 2 * d_z) throw ConfigError("SPIB encoder must output 2*d_z values");
  if (pseudo_init.rows() < 1 || pseudo_init.cols() != encoder_->input_dim())
    throw ConfigError("pseudo-inputs must be non-empty rows in feature space");
  if (n_labels < 1) throw ConfigError("SPIB needs at least one label");
  nn::Rng rng(seed);
  dec0_ = nn::Linear(ps_, "spib.decoder.l0", d_z, decoder_hidden, rng);
  dec1_ = nn::Linear(ps_, "spib.decoder.l1", decoder_hidden, n_labels, rng);
  pseudo_ = ps_.add("spib.pseudo", pseudo_init);
  prior_logits_ = ps_.add("spib.prior_logits", Matrix::Zero(1, pseudo_init.rows()));
}

std::pair<Tensor, Tensor> SpibModel::encode(const Tensor& h, const nn::ForwardContext& ctx) const {
  const Tensor out = encoder_->forward(h, ctx);
  return {ad::slice_cols(out, 0, d_z_), ad::slice_cols(out, d_z_, d_z_)};
}

Tensor SpibModel::decoder_log_probs(const Tensor& z, const nn::ForwardContext&) const {
  return ad::log_softmax_rows(dec1_(ad::silu(dec0_(z))));
}

Tensor SpibModel::log_prior(const Tensor& z, const nn::ForwardContext& ctx) const {
  const auto [mu, lv] = encode(pseudo_, ctx);
  return mixture_logpdf(z, mu, lv, prior_logits_);
}

void SpibModel::keep_labels(const std::vector<Index>& keep, optim::Optimizer* opt) {
  if (keep.empty()) throw std::logic_error("cannot drop every label");
  if (opt) {
    opt->keep_cols("spib.decoder.l1.weight", keep);
    opt->keep_cols("spib.decoder.l1.bias", keep);
  } else {
    for (const char* name : {"spib.decoder.l1.weight", "spib.decoder.l1.bias"}) {
      const Matrix& old = ps_.get(name).value();
      Matrix m(old.rows(), static_cast<Index>(keep.size()));
      for (std::size_t c = 0; c < keep.size(); ++c) m.col(static_cast<Index>(c)) = old.col(keep[c]);
      ps_.assign(name, std::move(m));
    }
  }
  n_labels_ = static_cast<Index>(keep.size());
}

Tensor sample_latent(const Tensor& mu, const Tensor& logvar, nn::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(mu.rows(), mu.cols());
  for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), Tensor::constant(std::move(eps))));
}

Tensor gaussian_logpdf(const Tensor& z, const Tensor& mu, const Tensor& logvar) {
  const Tensor diff = ad::sub(z, mu);
  const Tensor quad = ad::mul(ad::square(diff), ad::exp(ad::neg(logvar)));
  const Tensor s = ad::row_sum(ad::add(quad, logvar));
  return ad::scale(ad::add_scalar(s, static_cast<double>(z.cols()) * kLog2Pi), -0.5);
}

Tensor mixture_logpdf(const Tensor& z, const Tensor& mu, const Tensor& logvar, const Tensor& weight_logits) {
  // Expand (z - mu)^2 / var so every (sample, component) pair comes out of two matmuls.
  const Tensor inv = ad::exp(ad::neg(logvar));
  const Tensor a = ad::matmul(ad::square(z), ad::transpose(inv));
  const Tensor b = ad::matmul(z, ad::transpose(ad::mul(mu, inv)));
  const Tensor c = ad::transpose(ad::row_sum(ad::add(ad::mul(ad::square(mu), inv), logvar)));
  Tensor q = ad::add_row(ad::sub(a, ad::scale(b, 2.0)), c);
  q = ad::add_scalar(q, static_cast<double>(z.cols()) * kLog2Pi);
  const Tensor log_n = ad::scale(q, -0.5);
  return ad::logsumexp_rows(ad::add_row(log_n, ad::log_softmax_rows(weight_logits)));
}

Tensor spib_objective(const SpibModel& model, const Tensor& h, const std::vector<Index>& next_labels, double beta,
                      nn::Rng& rng, const nn::ForwardContext& ctx) {
  if (static_cast<Index>(next_labels.size()) != h.rows()) throw DataError("label count does not match the batch");
  for (Index l : next_labels)
    if (l < 0 || l >= model.n_labels()) throw DataError("label outside the active set");
  const auto [mu, lv] = model.encode(h, ctx);
  const Tensor z = sample_latent(mu, lv, rng);
  const Tensor logq = ad::pick_per_row(model.decoder_log_probs(z, ctx), next_labels);
  if (beta == 0.0) return ad::mean(logq);
  const Tensor kl = ad::sub(gaussian_logpdf(z, mu, lv), model.log_prior(z, ctx));
  return ad::mean(ad::sub(logq, ad::scale(kl, beta)));
}

LabelSeries refine_labels(const SpibModel& model, const Matrix& features, std::vector<Index>* kept) {
  ad::NoGradGuard guard;
  constexpr Index kChunk = 1024;
  std::vector<Index> raw(static_cast<std::size_t>(features.rows()));
  for (Index start = 0; start < features.rows(); start += kChunk) {
    const Index n = std::min(kChunk, features.rows() - start);
    const auto [mu, lv] = model.encode(Tensor::constant(features.middleRows(start, n)), {});
    const Tensor log_probs = model.decoder_log_probs(mu, {});
    const Matrix& lp = log_probs.value();
    for (Index r = 0; r < n; ++r) {
      Index arg;
      lp.row(r).maxCoeff(&arg);
      raw[static_cast<std::size_t>(start + r)] = arg;
    }
  }
  return compact(raw, model.n_labels(), kept);
}

SpibResult train_spib(SpibModel& model, const Matrix& features, const LabelSeries& initial, const io::SplitSpec& split,
                      const SpibConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (static_cast<Index>(initial.labels.size()) != features.rows())
    throw DataError("label series length does not match the feature series");
  if (model.n_labels() != initial.n_labels) throw ConfigError("decoder width does not match the initial label count");

  auto train = io::PairSampler(split, io::Partition::kTrain, cfg.lag_frames, seed).enumerate();
  const auto valid = io::PairSampler(split, io::Partition::kValid, cfg.lag_frames, seed).enumerate();
  if (train.empty()) throw DataError("no admissible lagged pairs in the training split");

  optim::OptimizerConfig oc;
  oc.mode = cfg.optimizer;
  oc.lr = cfg.lr;
  optim::Optimizer opt(oc, model.parameter_sets());

  std::mt19937_64 rng(seed);
  nn::Rng noise_rng(seed ^ 0x5851f42d4c957f2dULL);
  nn::Rng dropout_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const nn::ForwardContext train_ctx{true, 0.0, &dropout_rng};

  SpibResult res;
  LabelSeries labels = initial;
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t valid_stale = 0;
  std::size_t stable = 0;

  auto evaluate = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    ad::NoGradGuard guard;
    nn::Rng fixed(seed + 17);
    double sum = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += 4096) {
      const std::size_t end = std::min(pairs.size(), start + 4096);
      const Tensor obj = spib_objective(model, Tensor::constant(rows_of(features, pairs, start, end)),
                                        next_labels_of(labels, pairs, start, end), cfg.beta, fixed, {});
      sum += -obj.item() * static_cast<double>(end - start);
    }
    return sum / static_cast<double>(pairs.size());
  };

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train.size(), start + cfg.batch_size);
      const Tensor obj = spib_objective(model, Tensor::constant(rows_of(features, train, start, end)),
                                        next_labels_of(labels, train, start, end), cfg.beta, noise_rng, train_ctx);
      if (!std::isfinite(obj.item())) throw NumericalError("non-finite SPIB objective at epoch " + std::to_string(epoch));
      opt.zero_grad();
      ad::neg(obj).backward();
      opt.step();
      epoch_sum += -obj.item() * static_cast<double>(end - start);
    }
    res.train_loss.push_back(epoch_sum / static_cast<double>(train.size()));
    ++res.epochs;

    const double v = valid.empty() ? res.train_loss.back() : evaluate(valid);
    res.valid_loss.push_back(v);
    if (v < best_valid) {
      best_valid = v;
      valid_stale = 0;
    } else {
      ++valid_stale;
    }

    if ((epoch + 1) % cfg.refinement_frequency == 0) {
      std::vector<Index> kept;
      LabelSeries next = refine_labels(model, features, &kept);
      const bool same_set = next.n_labels == labels.n_labels;
      model.keep_labels(kept, &opt);
      labels = std::move(next);
      res.label_count_history.push_back(labels.n_labels);
      if (labels.n_labels == 1) std::cerr << "warning: all frames collapsed to a single SPIB label\n";
      if (same_set) {
        ++stable;
      } else {
        stable = 0;
        best_valid = std::numeric_limits<double>::infinity();
        valid_stale = 0;
      }
      if (stable >= cfg.stable_refinements && valid_stale >= cfg.patience) {
        res.converged = true;
        break;
      }
    }
  }

  std::vector<Index> kept;
  LabelSeries final_labels = refine_labels(model, features, &kept);
  model.keep_labels(kept, &opt);
  res.labels = std::move(final_labels);

  ad::NoGradGuard guard;
  res.ib_coordinates.resize(features.rows(), cfg.d_z);
  for (Index start = 0; start < features.rows(); start += 1024) {
    const Index n = std::min<Index>(1024, features.rows() - start);
    res.ib_coordinates.middleRows(start, n) = model.encode(Tensor::constant(features.middleRows(start, n)), {}).first.value();
  }
  return res;
}

Msm msm_from_labels(const LabelSeries& labels, std::size_t lag_frames, const std::vector<io::FrameRun>& runs) {
  if (lag_frames < 1) throw ConfigError("MSM lag must be at least one frame");
  const Index n = labels.n_labels;
  Matrix counts = Matrix::Zero(n, n);
  Eigen::RowVectorXd pop = Eigen::RowVectorXd::Zero(n);
  double frames = 0.0;
  for (const auto& run : runs) {
    if (run.end > labels.labels.size()) throw DataError("run extends beyond the label series");
    for (std::size_t t = run.begin; t < run.end; ++t) {
      pop[labels.labels[t]] += 1.0;
      frames += 1.0;
      if (t + lag_frames < run.end) counts(labels.labels[t], labels.labels[t + lag_frames]) += 1.0;
    }
  }
  Msm msm;
  msm.transition = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const double row = counts.row(i).sum();
    if (row == 0.0) throw DataError("label " + std::to_string(i) + " has no outgoing pairs at this lag");
    msm.transition.row(i) = counts.row(i) / row;
  }
  msm.populations = pop / frames;
  return msm;
}

Msm msm_from_labels(const LabelSeries& labels, std::size_t lag_frames) {
  return msm_from_labels(labels, lag_frames, {io::FrameRun{0, labels.labels.size()}});
}

void write_labels(const LabelSeries& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# frame label\n";
  for (std::size_t t = 0; t < labels.labels.size(); ++t) out << t << ' ' << labels.labels[t] << '\n';
}

LabelSeries read_labels(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  LabelSeries s;
  std::string line;
  std::size_t expect = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t frame;
    Index label;
    if (!(ls >> frame >> label) || frame != expect || label < 0) throw DataError("malformed label line: " + line);
    s.labels.push_back(label);
    s.n_labels = std::max(s.n_labels, label + 1);
    ++expect;
  }
  if (s.labels.empty()) throw DataError("empty label file " + path.string());
  std::vector<char> seen(static_cast<std::size_t>(s.n_labels), 0);
  for (Index l : s.labels) seen[static_cast<std::size_t>(l)] = 1;
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw DataError("label ids are not contiguous");
  return s;
}

void write_msm(const Msm& msm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17) << "# populations";
  for (Index i = 0; i < msm.populations.size(); ++i) out << ' ' << msm.populations[i];
  out << '\n';
  for (Index i = 0; i < msm.transition.rows(); ++i) {
    for (Index j = 0; j < msm.transition.cols(); ++j) out << (j ? " " : "") << msm.transition(i, j);
    out << '\n';
  }
}

}  // namespace g2v::spib
