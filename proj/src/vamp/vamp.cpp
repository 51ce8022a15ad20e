// SPDX-License-Identifier: Apache-2.0
#include "g2v/vamp/vamp.hpp"

#include "g2v/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace g2v::vamp {

namespace {

Tensor center(const Tensor& x) { return ad::add_row(x, ad::neg(ad::col_mean(x))); }

Matrix gather(const Matrix& features, const std::vector<std::pair<std::size_t, std::size_t>>& pairs, bool second,
              std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), features.cols());
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t f = second ? pairs[k].second : pairs[k].first;
    if (f >= static_cast<std::size_t>(features.rows())) throw DataError("pair index beyond the feature series");
    out.row(static_cast<Index>(k - begin)) = features.row(static_cast<Index>(f));
  }
  return out;
}

std::vector<Matrix> values(const std::vector<nn::ParameterSet*>& sets) {
  std::vector<Matrix> v;
  for (auto* s : sets)
    for (const auto& e : s->entries()) v.push_back(e.second.value());
  return v;
}

void assign(const std::vector<nn::ParameterSet*>& sets, const std::vector<Matrix>& v) {
  std::size_t k = 0;
  for (auto* s : sets)
    for (auto& e : s->entries()) e.second.mutable_value() = v[k++];
}

}  // namespace

CorrelationSet correlation_matrices(const Matrix& chi0, const Matrix& chit, bool centered) {
  if (chi0.rows() != chit.rows() || chi0.cols() != chit.cols()) throw DataError("chi0 and chit shapes differ");
  if (chi0.rows() < 2) throw DataError("correlation matrices need at least 2 pairs");
  const double b = static_cast<double>(chi0.rows());
  CorrelationSet cs;
  cs.mean0 = chi0.colwise().mean();
  cs.meant = chit.colwise().mean();
  Matrix x0 = chi0, xt = chit;
  if (centered) {
    x0.rowwise() -= cs.mean0;
    xt.rowwise() -= cs.meant;
  }
  cs.c00 = x0.transpose() * x0 / b;
  cs.c0t = x0.transpose() * xt / b;
  cs.ctt = xt.transpose() * xt / b;
  return cs;
}

Matrix inv_sqrt_sym(const Matrix& c, double eps) { return ad::sym_inv_sqrt_value(c, eps); }

double vamp2_score(const CorrelationSet& cs, double eps) {
  const Matrix k = inv_sqrt_sym(cs.c00, eps) * cs.c0t * inv_sqrt_sym(cs.ctt, eps);
  return k.squaredNorm();
}

Tensor vamp2_score(const Tensor& chi0, const Tensor& chit, double eps, bool centered) {
  if (chi0.rows() != chit.rows() || chi0.cols() != chit.cols()) throw DataError("chi0 and chit shapes differ");
  if (chi0.rows() < 2) throw DataError("VAMP-2 score needs at least 2 pairs");
  const double inv_b = 1.0 / static_cast<double>(chi0.rows());
  const Tensor x0 = centered ? center(chi0) : chi0;
  const Tensor xt = centered ? center(chit) : chit;
  const Tensor x0t = ad::transpose(x0);
  const Tensor c00 = ad::scale(ad::matmul(x0t, x0), inv_b);
  const Tensor c0t = ad::scale(ad::matmul(x0t, xt), inv_b);
  const Tensor ctt = ad::scale(ad::matmul(ad::transpose(xt), xt), inv_b);
  const Tensor k = ad::matmul(ad::matmul(ad::sym_inv_sqrt(c00, eps), c0t), ad::sym_inv_sqrt(ctt, eps));
  return ad::sum(ad::square(k));
}

void VampConfig::validate() const {
  if (d_o < 1) throw ConfigError("d_o must be at least 1");
  if (batch_size < static_cast<std::size_t>(d_o) + 1)
    throw ConfigError("batch_size must be at least d_o + 1 (got " + std::to_string(batch_size) + ")");
  if (lag_frames < 1) throw ConfigError("lag must be at least one frame");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

Matrix transform_cvs(const heads::Lobe& lobe, const Matrix& features, Index chunk) {
  ad::NoGradGuard guard;
  Matrix out(features.rows(), lobe.output_dim());
  for (Index start = 0; start < features.rows(); start += chunk) {
    const Index n = std::min(chunk, features.rows() - start);
    out.middleRows(start, n) = lobe.forward(Tensor::constant(features.middleRows(start, n)), {}).value();
  }
  return out;
}

double score_pairs(const heads::Lobe& lobe0, const heads::Lobe& lobe_t, const Matrix& features,
                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs, double eps, bool centered) {
  ad::NoGradGuard guard;
  constexpr std::size_t kChunk = 1024;
  Matrix chi0(static_cast<Index>(pairs.size()), lobe0.output_dim());
  Matrix chit(static_cast<Index>(pairs.size()), lobe_t.output_dim());
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    const Index n = static_cast<Index>(end - start);
    chi0.middleRows(static_cast<Index>(start), n) =
        lobe0.forward(Tensor::constant(gather(features, pairs, false, start, end)), {}).value();
    chit.middleRows(static_cast<Index>(start), n) =
        lobe_t.forward(Tensor::constant(gather(features, pairs, true, start, end)), {}).value();
  }
  return vamp2_score(correlation_matrices(chi0, chit, centered), eps);
}

VampResult train_vampnet(heads::Lobe& lobe, heads::Lobe* lobe_t, const Matrix& features, const io::SplitSpec& split,
                         const VampConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (lobe.output_dim() != cfg.d_o) throw ConfigError("lobe output does not match d_o");
  if (lobe.input_dim() != features.cols()) throw DataError("feature width does not match the lobe input");
  if (!cfg.tie_weights && lobe_t == nullptr) throw ConfigError("untied training needs a second lobe");
  heads::Lobe& later = cfg.tie_weights ? lobe : *lobe_t;

  io::PairSampler sampler(split, io::Partition::kTrain, cfg.lag_frames, seed);
  if (sampler.admissible_count() == 0) throw DataError("no admissible lagged pairs in the training split");
  std::vector<std::pair<std::size_t, std::size_t>> valid =
      io::PairSampler(split, io::Partition::kValid, cfg.lag_frames, seed + 1).enumerate();
  if (cfg.max_valid_pairs > 0 && valid.size() > cfg.max_valid_pairs) {
    std::vector<std::pair<std::size_t, std::size_t>> thinned;
    const double stride = static_cast<double>(valid.size()) / static_cast<double>(cfg.max_valid_pairs);
    for (std::size_t k = 0; k < cfg.max_valid_pairs; ++k)
      thinned.push_back(valid[static_cast<std::size_t>(std::floor(k * stride))]);
    valid = std::move(thinned);
  }
  const bool have_valid = valid.size() > static_cast<std::size_t>(cfg.d_o);

  std::vector<nn::ParameterSet*> sets{&lobe.parameters()};
  if (!cfg.tie_weights) sets.push_back(&lobe_t->parameters());
  optim::OptimizerConfig oc;
  oc.mode = cfg.optimizer;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  optim::Optimizer opt(oc, sets);
  optim::EarlyStop es(cfg.early_stop);

  nn::Rng dropout_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  nn::ForwardContext ctx{true, 0.0, &dropout_rng};

  VampResult res;
  std::vector<Matrix> best = values(sets);
  auto validate_now = [&](ScorePoint& pt) {
    pt.valid_score = score_pairs(lobe, later, features, valid, cfg.eps, cfg.centered);
    if (!std::isfinite(pt.valid_score)) throw NumericalError("non-finite validation VAMP-2 score");
    const auto [stop, improved] = es.update_valid(pt.valid_score);
    if (improved) {
      res.best_valid_score = pt.valid_score;
      res.best_step = pt.step;
      best = values(sets);
    }
    return stop;
  };

  const std::size_t steps_per_epoch = std::max<std::size_t>(1, sampler.admissible_count() / cfg.batch_size);
  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch && !stop; ++s) {
      const io::LaggedPairBatch batch = sampler.next(cfg.batch_size);
      const Tensor chi0 = lobe.forward(Tensor::constant(gather(features, batch.pairs, false, 0, batch.pairs.size())), ctx);
      const Tensor chit = later.forward(Tensor::constant(gather(features, batch.pairs, true, 0, batch.pairs.size())), ctx);
      const Tensor score = vamp2_score(chi0, chit, cfg.eps, cfg.centered);
      if (!std::isfinite(score.item()))
        throw NumericalError("non-finite VAMP-2 score at step " + std::to_string(res.steps) +
                             "; the batch is too small or the features collapsed, try a larger batch_size");
      opt.zero_grad();
      ad::neg(score).backward();
      opt.step();
      ++res.steps;
      ScorePoint pt{res.steps, score.item()};
      stop = es.update_train(pt.train_score);
      if (have_valid && res.steps % cfg.early_stop.valid_interval == 0) stop = validate_now(pt) || stop;
      res.curve.push_back(pt);
    }
  }
  res.early_stopped = stop;
  if (have_valid && (res.curve.empty() || std::isnan(res.curve.back().valid_score))) {
    ScorePoint& last = res.curve.back();
    validate_now(last);
  }
  if (have_valid) assign(sets, best);
  return res;
}

io::FeatureArchive cv_archive(const Matrix& cvs, const io::Digest& model_digest, const io::Digest& input_digest) {
  io::FeatureArchive a;
  a.frames = static_cast<std::uint32_t>(cvs.rows());
  a.tokens = 1;
  a.channels = static_cast<std::uint32_t>(cvs.cols());
  a.scalar.resize(static_cast<std::size_t>(cvs.size()));
  for (Index i = 0; i < cvs.size(); ++i) a.scalar[static_cast<std::size_t>(i)] = static_cast<float>(cvs.data()[i]);
  a.encoder_digest = model_digest;
  a.selection_digest = input_digest;
  a.partition_digest = io::sha256(std::string_view("cv-series"));
  return a;
}

Matrix archive_scalars(const io::FeatureArchive& a) {
  Matrix out(a.frames, static_cast<Index>(a.tokens) * a.channels);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = a.scalar[static_cast<std::size_t>(i)];
  return out;
}

void write_score_curve(const std::vector<ScorePoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# step train_score valid_score\n" << std::setprecision(17);
  for (const auto& p : curve) {
    out << p.step << ' ' << p.train_score << ' ';
    if (std::isnan(p.valid_score))
      out << "nan";
    else
      out << p.valid_score;
    out << '\n';
  }
}

}  // namespace g2v::vamp
