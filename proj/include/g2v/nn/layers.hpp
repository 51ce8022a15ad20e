// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/ad/tensor.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace g2v::nn {

using ad::Index;
using ad::Matrix;
using ad::Tensor;
using Rng = std::mt19937_64;

/// Ordered, named collection of trainable leaves.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Matrix init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Replaces the value of an existing parameter (shape may change).
  void assign(const std::string& name, Matrix value);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Glorot-uniform init scaled by `gain`.
Matrix glorot(Index fan_in, Index fan_out, Rng& rng, double gain = 1.0);
Matrix gaussian(Index rows, Index cols, double stddev, Rng& rng);

/// Per-call forward settings. Dropout is only active when `training`.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

Tensor dropout(const Tensor& x, const ForwardContext& ctx);

/// y = x W + b with W stored as (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias = true,
         double gain = 1.0);

  Tensor operator()(const Tensor& x) const;
  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  bool has_bias() const { return bias_.defined(); }

 private:
  Tensor weight_;
  Tensor bias_;
};

/// Feed-forward stack: Linear, SiLU, dropout, ..., Linear (no activation at the end).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& ps, const std::string& name, const std::vector<Index>& widths, Rng& rng,
      double last_gain = 1.0);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  Index in_features() const { return layers_.front().in_features(); }
  Index out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
};

/// Vector features: one (rows x channels) block per Cartesian axis.
struct Vec3 {
  std::array<Tensor, 3> axis;

  const Tensor& operator[](std::size_t a) const { return axis[a]; }
  Tensor& operator[](std::size_t a) { return axis[a]; }
  Index rows() const { return axis[0].rows(); }
  Index cols() const { return axis[0].cols(); }

  static Vec3 zeros(Index rows, Index cols);
};

/// Applies the same channel map (no bias) to every axis.
Vec3 apply(const Linear& lin, const Vec3& v);
Vec3 add(const Vec3& a, const Vec3& b);
Vec3 mul_channels(const Tensor& gate, const Vec3& v);
Tensor norms(const Vec3& v);
Tensor dot(const Vec3& a, const Vec3& b);

}  // namespace g2v::nn
