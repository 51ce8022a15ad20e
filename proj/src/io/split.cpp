// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/split.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace g2v::io {

SplitSpec make_split(std::size_t n_frames, double train_fraction, std::size_t n_segments, std::uint64_t seed) {
  if (n_segments == 0) throw ConfigError("n_segments must be positive");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
  if (n_frames < 2 * n_segments) {
    throw DataError("trajectory of " + std::to_string(n_frames) + " frames is too small for " +
                    std::to_string(n_segments) + " segments");
  }
  const std::size_t half = n_frames / 2;
  const auto n_take = static_cast<std::size_t>(
      std::ceil(train_fraction * static_cast<double>(n_segments) - 1e-9));

  std::vector<std::size_t> order(n_segments);
  std::iota(order.begin(), order.end(), 0);
  if (n_take < n_segments) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n_take);
    std::sort(order.begin(), order.end());
  }

  SplitSpec s;
  s.n_segments = n_segments;
  s.train_fraction = train_fraction;
  for (std::size_t k : order) {
    const FrameRun run{k * half / n_segments, (k + 1) * half / n_segments};
    s.train_runs.push_back(run);
    for (std::size_t t = run.begin; t < run.end; ++t) s.train_frames.push_back(t);
  }
  s.valid_runs.push_back({half, n_frames});
  for (std::size_t t = half; t < n_frames; ++t) s.valid_frames.push_back(t);
  return s;
}

SplitSpec whole_trajectory_split(std::size_t n_frames) {
  SplitSpec s;
  s.train_runs.push_back({0, n_frames});
  s.train_frames.resize(n_frames);
  std::iota(s.train_frames.begin(), s.train_frames.end(), 0);
  return s;
}

PairSampler::PairSampler(const SplitSpec& split, Partition part, std::size_t lag_frames, std::uint64_t seed)
    : runs_(part == Partition::kTrain ? split.train_runs : split.valid_runs), lag_(lag_frames), rng_(seed) {
  if (lag_frames == 0) throw ConfigError("lag must be at least one frame");
  std::size_t longest = 0;
  for (const auto& r : runs_) {
    cumulative_.push_back(total_);
    longest = std::max(longest, r.size());
    if (r.size() > lag_) total_ += r.size() - lag_;
  }
  if (total_ == 0) {
    throw DataError("lag exceeds run: lag of " + std::to_string(lag_) + " frames, longest run " +
                    std::to_string(longest) + " frames");
  }
}

LaggedPairBatch PairSampler::next(std::size_t batch_size) {
  LaggedPairBatch batch;
  batch.lag_frames = lag_;
  batch.pairs.reserve(batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, total_ - 1);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t k = pick(rng_);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), k);
    const std::size_t run = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
    const std::size_t t = runs_[run].begin + (k - cumulative_[run]);
    batch.pairs.emplace_back(t, t + lag_);
  }
  return batch;
}

std::vector<std::pair<std::size_t, std::size_t>> PairSampler::enumerate() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(total_);
  for (const auto& r : runs_) {
    for (std::size_t t = r.begin; t + lag_ < r.end; ++t) out.emplace_back(t, t + lag_);
  }
  return out;
}

LaggedPairBatch sample_lagged_pairs(const SplitSpec& split, std::size_t lag_frames, std::size_t batch_size,
                                    std::uint64_t seed, Partition part) {
  PairSampler sampler(split, part, lag_frames, seed);
  return sampler.next(batch_size);
}

std::size_t lag_to_frames(double lag_ns, double frame_interval, std::size_t stride) {
  if (!(frame_interval > 0.0) || stride == 0) throw ConfigError("frame interval and stride must be positive");
  const double ratio = lag_ns / (frame_interval * static_cast<double>(stride));
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 || rounded < 1.0) {
    std::ostringstream msg;
    msg << "non-integral lag in frames: " << lag_ns << " ns / (" << frame_interval << " ns x stride " << stride
        << ") = " << ratio;
    throw ConfigError(msg.str());
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace g2v::io
