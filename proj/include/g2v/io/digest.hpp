// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace g2v::io {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);
/// Git blob id: SHA-1 over "blob <len>\0<content>".
std::string git_blob_id(std::string_view content);
std::string git_blob_id_of_file(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

}  // namespace g2v::io
