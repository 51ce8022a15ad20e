// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace g2v::io {

/// Half-open frame range [begin, end).
struct FrameRun {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const FrameRun&) const = default;
};

/// Time-ordered split: the first half of the trajectory is cut into
/// `n_segments` contiguous segments of which a subset trains; the second
/// half is held out for validation.
struct SplitSpec {
  std::vector<std::size_t> train_frames;
  std::vector<std::size_t> valid_frames;
  std::vector<FrameRun> train_runs;  // one run per chosen segment, even if adjacent
  std::vector<FrameRun> valid_runs;
  std::size_t n_segments = 1;
  double train_fraction = 1.0;

  bool operator==(const SplitSpec&) const = default;
};

enum class Partition { kTrain, kValid };

SplitSpec make_split(std::size_t n_frames, double train_fraction, std::size_t n_segments, std::uint64_t seed);

/// Every frame in one run (used for unsplit series such as MSM estimation).
SplitSpec whole_trajectory_split(std::size_t n_frames);

struct LaggedPairBatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t lag_frames = 0;
};

/// Draws pairs (t, t+lag) uniformly with replacement from the admissible set:
/// both frames inside the same run of the chosen partition.
class PairSampler {
 public:
  PairSampler(const SplitSpec& split, Partition part, std::size_t lag_frames, std::uint64_t seed);

  LaggedPairBatch next(std::size_t batch_size);
  std::size_t admissible_count() const { return total_; }
  /// Every admissible pair in run order.
  std::vector<std::pair<std::size_t, std::size_t>> enumerate() const;

 private:
  std::vector<FrameRun> runs_;
  std::vector<std::size_t> cumulative_;  // admissible starts before run k
  std::size_t lag_;
  std::size_t total_ = 0;
  std::mt19937_64 rng_;
};

LaggedPairBatch sample_lagged_pairs(const SplitSpec& split, std::size_t lag_frames, std::size_t batch_size,
                                    std::uint64_t seed, Partition part = Partition::kTrain);

/// round(lag_ns / (frame_interval * stride)); throws ConfigError when the
/// ratio is not an integer within 1e-9 or is < 1.
std::size_t lag_to_frames(double lag_ns, double frame_interval, std::size_t stride = 1);

}  // namespace g2v::io
