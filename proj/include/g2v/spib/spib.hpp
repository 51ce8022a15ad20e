// SPDX-License-Identifier: Apache-2.0
//
// State predictive information bottleneck: a variational encoder to a small
// latent space whose decoder predicts the state label one lag ahead, with a
// mixture-of-posteriors prior and iterative relabelling.
#pragma once

#include "g2v/heads/heads.hpp"
#include "g2v/io/split.hpp"
#include "g2v/optim/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace g2v::spib {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

/// Per-frame labels in 0..n_labels-1; every label in that range is populated.
struct LabelSeries {
  std::vector<Index> labels;
  Index n_labels = 0;
};

struct KMeansResult {
  LabelSeries series;
  Matrix centroids;
  std::size_t iterations = 0;
  double inertia = 0.0;
};

/// Greedy k-means++ seeding (2 + ln k draws per seed) followed by Lloyd
/// iterations (at most 200, or until no centroid moves by more than 1e-6).
KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed, std::size_t max_iter = 200, double tol = 1e-6);
LabelSeries kmeans_init(const Matrix& points, Index k, std::uint64_t seed);

struct SpibConfig {
  Index d_z = 2;
  double beta = 0.01;
  Index n_initial_states = 100;
  std::size_t lag_frames = 1;
  std::size_t refinement_frequency = 5;
  std::size_t n_pseudo = 32;
  std::size_t batch_size = 1000;
  double lr = 2e-4;
  optim::OptimizerMode optimizer = optim::OptimizerMode::kAdamAtan2;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::size_t stable_refinements = 2;
  Index decoder_hidden = 64;

  void validate() const;
};

class SpibModel {
 public:
  /// `encoder` must output 2*d_z columns (mean then log-variance).
  SpibModel(std::unique_ptr<heads::Lobe> encoder, Index d_z, Index n_labels, Index decoder_hidden,
            const Matrix& pseudo_init, std::uint64_t seed);

  std::pair<Tensor, Tensor> encode(const Tensor& h, const nn::ForwardContext& ctx) const;
  /// Log-probabilities over the current labels, B x n_labels.
  Tensor decoder_log_probs(const Tensor& z, const nn::ForwardContext& ctx) const;
  /// log r(z) under the pseudo-input mixture, B x 1.
  Tensor log_prior(const Tensor& z, const nn::ForwardContext& ctx) const;

  Index d_z() const { return d_z_; }
  Index n_labels() const { return n_labels_; }
  heads::Lobe& encoder() { return *encoder_; }
  const heads::Lobe& encoder() const { return *encoder_; }
  nn::ParameterSet& own_parameters() { return ps_; }
  const nn::ParameterSet& own_parameters() const { return ps_; }
  std::vector<nn::ParameterSet*> parameter_sets() { return {&encoder_->parameters(), &ps_}; }

  /// Keeps only the listed decoder outputs, in order; moments follow when `opt` is given.
  void keep_labels(const std::vector<Index>& keep, optim::Optimizer* opt);

 private:
  std::unique_ptr<heads::Lobe> encoder_;
  nn::ParameterSet ps_;
  nn::Linear dec0_, dec1_;
  Tensor pseudo_, prior_logits_;
  Index d_z_;
  Index n_labels_;
};

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from `rng`.
Tensor sample_latent(const Tensor& mu, const Tensor& logvar, nn::Rng& rng);
/// Diagonal Gaussian log-density of each row of z, B x 1.
Tensor gaussian_logpdf(const Tensor& z, const Tensor& mu, const Tensor& logvar);
/// Mixture log-density log(sum_i w_i N(z; mu_i, diag exp(lv_i)) / sum_i w_i) with w = softmax(logits).
Tensor mixture_logpdf(const Tensor& z, const Tensor& mu, const Tensor& logvar, const Tensor& weight_logits);

/// mean[ log q(s|z) - beta (log p(z|h) - log r(z)) ], one latent sample per item.
Tensor spib_objective(const SpibModel& model, const Tensor& h, const std::vector<Index>& next_labels, double beta,
                      nn::Rng& rng, const nn::ForwardContext& ctx);

/// argmax_s q(s | mu(h_t)) per frame, with unpopulated labels removed.
/// `kept` receives the surviving old label ids in new-id order.
LabelSeries refine_labels(const SpibModel& model, const Matrix& features, std::vector<Index>* kept = nullptr);

struct SpibResult {
  LabelSeries labels;
  Matrix ib_coordinates;  // F x d_z, mu per frame
  std::vector<Index> label_count_history;  // after each refinement
  std::vector<double> train_loss;          // per epoch, negated objective
  std::vector<double> valid_loss;
  std::size_t epochs = 0;
  bool converged = false;
};

SpibResult train_spib(SpibModel& model, const Matrix& features, const LabelSeries& initial, const io::SplitSpec& split,
                      const SpibConfig& cfg, std::uint64_t seed);

struct Msm {
  Matrix transition;
  Eigen::RowVectorXd populations;
};

/// Row-normalized transition counts over pairs inside the given runs.
Msm msm_from_labels(const LabelSeries& labels, std::size_t lag_frames, const std::vector<io::FrameRun>& runs);
Msm msm_from_labels(const LabelSeries& labels, std::size_t lag_frames);

void write_labels(const LabelSeries& labels, const std::filesystem::path& path);
LabelSeries read_labels(const std::filesystem::path& path);
void write_msm(const Msm& msm, const std::filesystem::path& path);

}  // namespace g2v::spib
