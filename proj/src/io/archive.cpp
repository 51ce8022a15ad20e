// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/archive.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace g2v::io {

namespace {

constexpr char kMagic[4] = {'G', '2', 'V', '1'};
constexpr std::size_t kHeaderBytes = 4 + 5 * 4 + 3 * 32;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(float));
}

}  // namespace

void FeatureArchive::validate() const {
  const std::size_t n = static_cast<std::size_t>(frames) * tokens * channels;
  if (scalar.size() != n) throw DataError("archive: scalar block size inconsistent with F, M, d");
  if (vector && vector->size() != 3 * n) throw DataError("archive: vector block size inconsistent with F, M, d");
  const Digest zero{};
  if (encoder_digest == zero || selection_digest == zero || partition_digest == zero) {
    throw DataError("archive: digests must be non-empty");
  }
}

std::vector<std::uint8_t> encode_archive(const FeatureArchive& a) {
  a.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + (a.scalar.size() + (a.vector ? a.vector->size() : 0)) * sizeof(float));
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, FeatureArchive::kVersion);
  put_u32(out, a.frames);
  put_u32(out, a.tokens);
  put_u32(out, a.channels);
  put_u32(out, a.vector ? 1u : 0u);
  out.insert(out.end(), a.encoder_digest.begin(), a.encoder_digest.end());
  out.insert(out.end(), a.selection_digest.begin(), a.selection_digest.end());
  out.insert(out.end(), a.partition_digest.begin(), a.partition_digest.end());
  put_floats(out, a.scalar);
  if (a.vector) put_floats(out, *a.vector);
  return out;
}

FeatureArchive decode_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) throw DataError("archive: magic mismatch");
  if (bytes.size() < kHeaderBytes) throw DataError("archive: truncated header");
  const std::uint8_t* p = bytes.data() + 4;
  const std::uint32_t version = get_u32(p);
  if (version != FeatureArchive::kVersion) throw DataError("archive: unsupported version " + std::to_string(version));
  FeatureArchive a;
  a.frames = get_u32(p + 4);
  a.tokens = get_u32(p + 8);
  a.channels = get_u32(p + 12);
  const std::uint32_t has_vector = get_u32(p + 16);
  if (has_vector > 1) throw DataError("archive: has_vector flag must be 0 or 1");
  p += 20;
  std::copy(p, p + 32, a.encoder_digest.begin());
  std::copy(p + 32, p + 64, a.selection_digest.begin());
  std::copy(p + 64, p + 96, a.partition_digest.begin());

  const std::size_t n = static_cast<std::size_t>(a.frames) * a.tokens * a.channels;
  const std::size_t expected = kHeaderBytes + n * sizeof(float) * (has_vector ? 4 : 1);
  if (bytes.size() != expected) {
    throw DataError("archive: payload size mismatch (expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(bytes.size()) + ")");
  }
  const std::uint8_t* payload = bytes.data() + kHeaderBytes;
  a.scalar.resize(n);
  std::memcpy(a.scalar.data(), payload, n * sizeof(float));
  if (has_vector) {
    a.vector.emplace(3 * n);
    std::memcpy(a.vector->data(), payload + n * sizeof(float), 3 * n * sizeof(float));
  }
  a.validate();
  return a;
}

void write_archive(const FeatureArchive& archive, const std::filesystem::path& path) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write archive: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureArchive read_archive(const std::filesystem::path& path, const std::optional<Digest>& expected_encoder) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  FeatureArchive a = decode_archive(bytes);
  if (expected_encoder && a.encoder_digest != *expected_encoder) {
    throw DataError("archive: digest mismatch (encoder " + to_hex(a.encoder_digest) + ", expected " +
                    to_hex(*expected_encoder) + ")");
  }
  return a;
}

}  // namespace g2v::io
