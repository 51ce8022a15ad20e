// SPDX-License-Identifier: Apache-2.0
#include "g2v/optim/optim.hpp"

#include "g2v/error.hpp"
#include "g2v/io/digest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace g2v::optim {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'G', '2', 'V', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw DataError("checkpoint truncated");
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

std::vector<std::pair<std::string, Tensor>> collect(const std::vector<nn::ParameterSet*>& sets) {
  std::vector<std::pair<std::string, Tensor>> all;
  for (auto* s : sets)
    for (const auto& e : s->entries()) all.push_back(e);
  return all;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

Matrix take_cols(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = m.col(cols[c]);
  return out;
}

}  // namespace

OptimizerMode parse_optimizer_mode(const std::string& s) {
  if (s == "adamw_amsgrad") return OptimizerMode::kAdamWAmsgrad;
  if (s == "adam_atan2") return OptimizerMode::kAdamAtan2;
  throw ConfigError("unknown optimizer '" + s + "' (adamw_amsgrad, adam_atan2)");
}

std::string to_string(OptimizerMode m) { return m == OptimizerMode::kAdamAtan2 ? "adam_atan2" : "adamw_amsgrad"; }

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<nn::ParameterSet*> sets)
    : cfg_(cfg), sets_(std::move(sets)) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (cfg_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  for (auto& [name, p] : collect(sets_)) {
    Slot s{name, p, Matrix::Zero(p.rows(), p.cols()), Matrix::Zero(p.rows(), p.cols()),
           Matrix::Zero(p.rows(), p.cols())};
    slots_.push_back(std::move(s));
  }
}

void Optimizer::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void Optimizer::step() {
  for (const auto& s : slots_)
    if (s.param.has_grad() && !s.param.grad().allFinite())
      throw NumericalError("non-finite gradient in parameter block '" + s.name + "'");

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    Matrix& theta = s.param.mutable_value();
    const Matrix g = s.param.has_grad() ? s.param.grad() : Matrix::Zero(theta.rows(), theta.cols());
    if (cfg_.weight_decay > 0.0) theta *= 1.0 - cfg_.lr * cfg_.weight_decay;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    if (cfg_.mode == OptimizerMode::kAdamWAmsgrad) {
      s.v_max = s.v_max.cwiseMax(s.v);
      for (Index i = 0; i < theta.size(); ++i) {
        const double mhat = s.m.data()[i] / bc1;
        const double vhat = s.v_max.data()[i] / bc2;
        theta.data()[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    } else {
      for (Index i = 0; i < theta.size(); ++i) {
        const double mhat = s.m.data()[i] / bc1;
        const double vhat = s.v.data()[i] / bc2;
        theta.data()[i] -= cfg_.lr * std::atan2(mhat, std::sqrt(vhat));
      }
    }
  }
}

Optimizer::Slot& Optimizer::slot(const std::string& name) {
  for (auto& s : slots_)
    if (s.name == name) return s;
  throw std::logic_error("optimizer has no parameter '" + name + "'");
}

void Optimizer::keep_rows(const std::string& name, const std::vector<Index>& rows) {
  Slot& s = slot(name);
  s.param.mutable_value() = take_rows(s.param.value(), rows);
  s.param.zero_grad();
  s.m = take_rows(s.m, rows);
  s.v = take_rows(s.v, rows);
  s.v_max = take_rows(s.v_max, rows);
}

void Optimizer::keep_cols(const std::string& name, const std::vector<Index>& cols) {
  Slot& s = slot(name);
  s.param.mutable_value() = take_cols(s.param.value(), cols);
  s.param.zero_grad();
  s.m = take_cols(s.m, cols);
  s.v = take_cols(s.v, cols);
  s.v_max = take_cols(s.v_max, cols);
}

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<nn::ParameterSet*> sets, double step,
                           std::size_t max_params, std::uint64_t seed, double floor) {
  auto params = collect(sets);
  for (auto& [n, p] : params) p.zero_grad();
  loss().backward();

  struct Pick {
    std::size_t param;
    Index index;
  };
  std::vector<Pick> all;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Index i = 0; i < params[k].second.value().size(); ++i) all.push_back({k, i});
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (all.size() > max_params) all.resize(max_params);

  GradCheckResult res;
  ad::NoGradGuard guard;
  for (const Pick& pick : all) {
    Tensor& p = params[pick.param].second;
    double& x = p.mutable_value().data()[pick.index];
    const double analytic = p.has_grad() ? p.grad().data()[pick.index] : 0.0;
    const double orig = x;
    x = orig + step;
    const double up = loss().item();
    x = orig - step;
    const double down = loss().item();
    x = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double err = std::abs(analytic - numeric) / denom;
    if (err > res.max_rel_error || !std::isfinite(err)) {
      res.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      res.worst = params[pick.param].first + "[" + std::to_string(pick.index) + "]";
    }
    ++res.checked;
  }
  return res;
}

EarlyStop::EarlyStop(const EarlyStopConfig& cfg)
    : cfg_(cfg),
      best_train_(-std::numeric_limits<double>::infinity()),
      best_valid_(-std::numeric_limits<double>::infinity()) {
  if (cfg_.train_patience < 1 || cfg_.valid_patience < 1) throw ConfigError("patience must be at least 1");
  if (cfg_.valid_interval < 1) throw ConfigError("valid_interval must be at least 1");
}

bool EarlyStop::update_train(double metric) {
  if (metric > best_train_) {
    best_train_ = metric;
    train_stale_ = 0;
  } else if (++train_stale_ >= cfg_.train_patience) {
    stopped_ = true;
  }
  return stopped_;
}

std::pair<bool, bool> EarlyStop::update_valid(double metric) {
  bool improved = false;
  if (metric > best_valid_) {
    best_valid_ = metric;
    valid_stale_ = 0;
    improved = true;
  } else if (++valid_stale_ >= cfg_.valid_patience) {
    stopped_ = true;
  }
  return {stopped_, improved};
}

Checkpoint snapshot(const encoder::EncoderConfig& cfg, std::vector<const nn::ParameterSet*> sets,
                    nlohmann::json metadata) {
  Checkpoint c;
  c.config = cfg;
  c.metadata = std::move(metadata);
  for (const auto* s : sets)
    for (const auto& [name, p] : s->entries()) c.params.emplace_back(name, p.value());
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, ckpt.config.d);
  put<std::uint32_t>(out, ckpt.config.n_layers);
  put<std::uint32_t>(out, ckpt.config.n_heads);
  put<std::uint32_t>(out, ckpt.config.n_rbf);
  put<double>(out, ckpt.config.r_cut);
  put<std::uint32_t>(out, ckpt.config.use_visnet_scalars ? 1u : 0u);
  const std::string meta = ckpt.metadata.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, m] : ckpt.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
  }
  const io::Digest d = io::sha256(out);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 32 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError("checkpoint magic mismatch");
  const std::size_t body = bytes.size() - 32;
  const io::Digest d = io::sha256(std::span<const std::uint8_t>(bytes.data(), body));
  if (!std::equal(d.begin(), d.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body)))
    throw DataError("checkpoint digest mismatch");

  Reader r(bytes.data() + 8, body - 8);
  Checkpoint c;
  c.config.d = r.get<std::uint32_t>();
  c.config.n_layers = r.get<std::uint32_t>();
  c.config.n_heads = r.get<std::uint32_t>();
  c.config.n_rbf = r.get<std::uint32_t>();
  c.config.r_cut = r.get<double>();
  c.config.use_visnet_scalars = r.get<std::uint32_t>() != 0;
  const auto meta_len = r.get<std::uint32_t>();
  try {
    c.metadata = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.bytes(len);
    if (r.get<std::uint32_t>() != 2) throw DataError("checkpoint parameter '" + name + "' is not rank 2");
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.get<double>();
    c.params.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string s = io::read_file(path);
  return decode_checkpoint(std::vector<std::uint8_t>(s.begin(), s.end()));
}

void restore(const Checkpoint& ckpt, const encoder::EncoderConfig& expected, std::vector<nn::ParameterSet*> sets) {
  if (!(ckpt.config == expected)) throw ConfigError("config incompatibility: encoder settings differ");
  for (auto* s : sets) {
    for (auto& [name, p] : s->entries()) {
      auto it = std::find_if(ckpt.params.begin(), ckpt.params.end(), [&](const auto& e) { return e.first == name; });
      if (it == ckpt.params.end()) throw ConfigError("config incompatibility: missing parameter '" + name + "'");
      if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
        throw ConfigError("config incompatibility: shape of '" + name + "'");
      p.mutable_value() = it->second;
    }
  }
}

}  // namespace g2v::optim
