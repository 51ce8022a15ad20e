// SPDX-License-Identifier: Apache-2.0
#include "g2v/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace g2v::nn {

Tensor ParameterSet::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::logic_error("duplicate parameter name: " + name);
  Tensor t = Tensor::leaf(std::move(init), true);
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

void ParameterSet::assign(const std::string& name, Matrix value) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t.mutable_value() = std::move(value);
      t.zero_grad();
      t.node()->track_memory();
      return;
    }
  }
  throw std::out_of_range("unknown parameter: " + name);
}

Matrix glorot(Index fan_in, Index fan_out, Rng& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - ctx.dropout);
  const double inv = 1.0 / (1.0 - ctx.dropout);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*ctx.rng) ? inv : 0.0;
  return ad::mul(x, Tensor::constant(std::move(mask)));
}

Linear::Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias, double gain)
    : weight_(ps.add(name + ".weight", glorot(in, out, rng, gain))) {
  if (bias) bias_ = ps.add(name + ".bias", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight_);
  return bias_.defined() ? ad::add_row(y, bias_) : y;
}

Mlp::Mlp(ParameterSet& ps, const std::string& name, const std::vector<Index>& widths, Rng& rng, double last_gain) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(ps, name + "." + std::to_string(i), widths[i], widths[i + 1], rng, true,
                         last ? last_gain : 1.0);
  }
}

Tensor Mlp::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = dropout(ad::silu(h), ctx);
  }
  return h;
}

Vec3 Vec3::zeros(Index rows, Index cols) {
  Vec3 v;
  for (auto& a : v.axis) a = Tensor::constant(Matrix::Zero(rows, cols));
  return v;
}

Vec3 apply(const Linear& lin, const Vec3& v) {
  if (lin.has_bias()) throw std::logic_error("vector channels must be mixed without bias");
  Vec3 out;
  for (std::size_t a = 0; a < 3; ++a) out[a] = lin(v[a]);
  return out;
}

Vec3 add(const Vec3& a, const Vec3& b) {
  Vec3 out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = ad::add(a[k], b[k]);
  return out;
}

Vec3 mul_channels(const Tensor& gate, const Vec3& v) {
  Vec3 out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = ad::mul(gate, v[k]);
  return out;
}

Tensor norms(const Vec3& v) { return ad::vec_norm(v[0], v[1], v[2]); }

Tensor dot(const Vec3& a, const Vec3& b) {
  return ad::add(ad::add(ad::mul(a[0], b[0]), ad::mul(a[1], b[1])), ad::mul(a[2], b[2]));
}

}  // namespace g2v::nn
