// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/digest.hpp"

#include "g2v/error.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <memory>
#include <sstream>

namespace g2v::io {

namespace {

template <std::size_t N>
std::array<std::uint8_t, N> evp_digest(const EVP_MD* md, std::span<const std::string_view> parts) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1) throw std::runtime_error("digest init failed");
  for (auto p : parts) EVP_DigestUpdate(ctx.get(), p.data(), p.size());
  std::array<std::uint8_t, N> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), out.data(), &len);
  if (len != N) throw std::runtime_error("unexpected digest length");
  return out;
}

}  // namespace

Digest sha256(std::span<const std::uint8_t> bytes) {
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return sha256(view);
}

Digest sha256(std::string_view bytes) {
  const std::string_view parts[] = {bytes};
  return evp_digest<32>(EVP_sha256(), parts);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xF]);
  }
  return s;
}

std::string git_blob_id(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  const std::string_view parts[] = {header, content};
  const auto d = evp_digest<20>(EVP_sha1(), parts);
  return to_hex(d);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string git_blob_id_of_file(const std::filesystem::path& path) { return git_blob_id(read_file(path)); }

}  // namespace g2v::io
