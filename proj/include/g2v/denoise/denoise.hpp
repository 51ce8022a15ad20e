// SPDX-License-Identifier: Apache-2.0
//
// Coordinate-denoising pretraining: corrupt a conformer with Gaussian noise
// and train the encoder plus an equivariant head to predict the noise.
#pragma once

#include "g2v/encoder/encoder.hpp"
#include "g2v/heads/heads.hpp"
#include "g2v/optim/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace g2v::denoise {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct Conformer {
  io::Frame positions;
  std::vector<int> z;
};

/// Random tree-shaped molecules with fixed element-pair bond lengths.
std::vector<Conformer> make_synthetic_corpus(std::size_t count, std::size_t min_atoms, std::size_t max_atoms,
                                             std::uint64_t seed);
/// Ideal bond length (Angstrom) between two elements of the synthetic corpus.
double bond_length(int z1, int z2);

struct Corrupted {
  io::Frame noisy;
  io::Frame displacement;
};

Corrupted corrupt_frame(const io::Frame& frame, double sigma, std::uint64_t seed);

struct DisplacementStats {
  Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d std = Eigen::RowVector3d::Ones();

  io::Frame standardize(const io::Frame& displacement) const;
};

/// Per-component mean and population standard deviation over all rows.
DisplacementStats displacement_stats(const std::vector<io::Frame>& displacements);

/// Two gated equivariant blocks funnelling d -> d/2 -> 1 vector channel.
class DenoiseHead {
 public:
  DenoiseHead(Index d, std::uint64_t seed);
  /// N x 3 predicted (standardized) displacement.
  Tensor operator()(const encoder::AtomFeatures& atoms) const;
  nn::ParameterSet& parameters() { return ps_; }
  const nn::ParameterSet& parameters() const { return ps_; }

 private:
  nn::ParameterSet ps_;
  heads::GatedEquivariantBlock first_, second_;
};

struct DenoiseConfig {
  double noise_sigma = 0.2;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  double lr = 5e-4;
  std::size_t n_valid = 20;
  double weight_decay = 0.0;

  void validate() const;
};

struct PretrainResult {
  std::vector<double> train_mse;  // per epoch
  std::vector<double> valid_mse;  // per epoch
  std::size_t best_epoch = 0;     // index into valid_mse
  double best_valid_mse = 0.0;
  double initial_valid_mse = 0.0;  // before any update
  bool diverged = false;
  DisplacementStats stats;
  optim::Checkpoint best;  // encoder + head parameters at best_epoch
};

/// The last `cfg.n_valid` conformers form the validation set; stats come from
/// the training conformers only. Validation noise is fixed across epochs.
PretrainResult pretrain(encoder::Encoder& enc, DenoiseHead& head, const std::vector<Conformer>& data,
                        const DenoiseConfig& cfg, std::uint64_t seed);

/// Mean squared error of the head on standardized targets; no graph kept.
double evaluate_mse(const encoder::Encoder& enc, const DenoiseHead& head, const std::vector<Corrupted>& items,
                    const std::vector<const std::vector<int>*>& z, const DisplacementStats& stats);

void write_loss_curve(const std::vector<double>& mse, const std::filesystem::path& path);

}  // namespace g2v::denoise
