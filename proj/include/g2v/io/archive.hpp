// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/io/digest.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace g2v::io {

/// Per-frame token features on disk:
///   "G2V1", u32 LE {version, F, M, d, has_vector}, three 32-byte digests,
///   f32 scalar payload [frame][token][channel],
///   f32 vector payload [frame][token][axis][channel] when has_vector.
struct FeatureArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t frames = 0;
  std::uint32_t tokens = 0;
  std::uint32_t channels = 0;
  std::vector<float> scalar;
  std::optional<std::vector<float>> vector;
  Digest encoder_digest{};
  Digest selection_digest{};
  Digest partition_digest{};

  void validate() const;
  float scalar_at(std::size_t f, std::size_t m, std::size_t c) const {
    return scalar[(f * tokens + m) * channels + c];
  }
  float vector_at(std::size_t f, std::size_t m, std::size_t a, std::size_t c) const {
    return (*vector)[((f * tokens + m) * 3 + a) * channels + c];
  }
  bool operator==(const FeatureArchive&) const = default;
};

std::vector<std::uint8_t> encode_archive(const FeatureArchive& archive);
FeatureArchive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const FeatureArchive& archive, const std::filesystem::path& path);
/// When `expected_encoder` is given, a differing encoder digest is an error.
FeatureArchive read_archive(const std::filesystem::path& path,
                            const std::optional<Digest>& expected_encoder = std::nullopt);

}  // namespace g2v::io
