// SPDX-License-Identifier: Apache-2.0
//
// VAMP-2 scoring and VAMPnet training over lagged frame pairs.
#pragma once

#include "g2v/heads/heads.hpp"
#include "g2v/io/archive.hpp"
#include "g2v/io/split.hpp"
#include "g2v/optim/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

namespace g2v::vamp {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct CorrelationSet {
  Matrix c00, c0t, ctt;
  Eigen::RowVectorXd mean0, meant;
};

/// Columns are mean-centered within the batch when `centered`.
CorrelationSet correlation_matrices(const Matrix& chi0, const Matrix& chit, bool centered = true);
Matrix inv_sqrt_sym(const Matrix& c, double eps = 1e-6);
double vamp2_score(const CorrelationSet& cs, double eps = 1e-6);
/// Differentiable score of two batches; 1 x 1.
Tensor vamp2_score(const Tensor& chi0, const Tensor& chit, double eps = 1e-6, bool centered = true);

struct VampConfig {
  Index d_o = 2;
  std::size_t lag_frames = 1;
  std::size_t batch_size = 5000;
  std::size_t max_epochs = 20;
  double lr = 2e-4;
  optim::OptimizerMode optimizer = optim::OptimizerMode::kAdamAtan2;
  double weight_decay = 0.0;
  optim::EarlyStopConfig early_stop{};
  double eps = 1e-6;
  bool centered = true;
  bool tie_weights = true;
  /// Cap on validation pairs per evaluation (evenly strided); 0 = all.
  std::size_t max_valid_pairs = 0;

  void validate() const;
};

struct ScorePoint {
  std::uint64_t step = 0;
  double train_score = 0.0;
  double valid_score = std::numeric_limits<double>::quiet_NaN();
};

struct VampResult {
  std::vector<ScorePoint> curve;
  double best_valid_score = -std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  std::uint64_t steps = 0;
  bool early_stopped = false;
};

/// Maximizes the VAMP-2 score of `lobe` on pairs drawn from `split`. With
/// tied weights the same lobe embeds both ends of each pair; otherwise
/// `lobe_t` embeds the later frame. The best-validation parameters are
/// restored before returning.
VampResult train_vampnet(heads::Lobe& lobe, heads::Lobe* lobe_t, const Matrix& features, const io::SplitSpec& split,
                         const VampConfig& cfg, std::uint64_t seed);

/// Validation score over the admissible pairs of a partition.
double score_pairs(const heads::Lobe& lobe0, const heads::Lobe& lobe_t, const Matrix& features,
                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs, double eps, bool centered);

/// Deterministic forward pass (dropout off), chunked over frames.
Matrix transform_cvs(const heads::Lobe& lobe, const Matrix& features, Index chunk = 1024);

/// CV series in the archive container: one token, d_o channels, no vectors.
io::FeatureArchive cv_archive(const Matrix& cvs, const io::Digest& model_digest, const io::Digest& input_digest);
Matrix archive_scalars(const io::FeatureArchive& a);

void write_score_curve(const std::vector<ScorePoint>& curve, const std::filesystem::path& path);

}  // namespace g2v::vamp
