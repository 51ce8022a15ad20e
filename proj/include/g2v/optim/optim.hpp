// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/ad/tensor.hpp"
#include "g2v/encoder/encoder.hpp"
#include "g2v/nn/layers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace g2v::optim {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

enum class OptimizerMode { kAdamWAmsgrad, kAdamAtan2 };

OptimizerMode parse_optimizer_mode(const std::string& s);
std::string to_string(OptimizerMode m);

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::kAdamWAmsgrad;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // adamw_amsgrad only
  double weight_decay = 0.0;
};

/// Adam variants over a fixed list of named parameter leaves. Missing
/// gradients count as zero.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::vector<nn::ParameterSet*> sets);

  void step();
  void zero_grad();

  std::uint64_t step_count() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

  struct Slot {
    std::string name;
    Tensor param;
    Matrix m, v, v_max;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  /// Keeps only the listed rows of a parameter and of its moments.
  void keep_rows(const std::string& name, const std::vector<Index>& rows);
  /// Keeps only the listed columns of a parameter and of its moments.
  void keep_cols(const std::string& name, const std::vector<Index>& cols);

 private:
  Slot& slot(const std::string& name);

  OptimizerConfig cfg_;
  std::vector<nn::ParameterSet*> sets_;
  std::vector<Slot> slots_;
  std::uint64_t t_ = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "name[index]"
};

/// Compares analytic gradients of `loss` with central differences on up to
/// `max_params` randomly chosen scalars. Relative error uses
/// max(|analytic|, |numeric|, floor) as denominator so that near-zero
/// gradients are compared absolutely.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<nn::ParameterSet*> sets,
                           double step = 1e-5, std::size_t max_params = 200, std::uint64_t seed = 0,
                           double floor = 1e-3);

struct EarlyStopConfig {
  std::uint64_t train_patience = 500;
  std::uint64_t valid_patience = 10;
  std::uint64_t valid_interval = 50;
};

/// Higher-is-better plateau detector with strict improvement.
class EarlyStop {
 public:
  explicit EarlyStop(const EarlyStopConfig& cfg);

  /// Returns true when training should stop.
  bool update_train(double metric);
  /// Returns true when training should stop; second value tells whether this is a new best.
  std::pair<bool, bool> update_valid(double metric);
  bool stopped() const { return stopped_; }
  double best_train() const { return best_train_; }
  double best_valid() const { return best_valid_; }
  std::uint64_t train_stale() const { return train_stale_; }
  std::uint64_t valid_stale() const { return valid_stale_; }

 private:
  EarlyStopConfig cfg_;
  double best_train_;
  double best_valid_;
  std::uint64_t train_stale_ = 0;
  std::uint64_t valid_stale_ = 0;
  bool stopped_ = false;
};

/// Named parameter values plus metadata, serialized as G2VCKPT1.
struct Checkpoint {
  encoder::EncoderConfig config;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> params;
};

Checkpoint snapshot(const encoder::EncoderConfig& cfg, std::vector<const nn::ParameterSet*> sets,
                    nlohmann::json metadata = nlohmann::json::object());
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies values into the sets. A differing config or a missing / misshapen
/// parameter raises "config incompatibility".
void restore(const Checkpoint& ckpt, const encoder::EncoderConfig& expected, std::vector<nn::ParameterSet*> sets);

}  // namespace g2v::optim
