#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace neuralme {

/// FNV-1a 64-bit over a byte string; stable across platforms.
std::uint64_t fnv1a64(const std::string& bytes);

/// Hex digest of a file's contents (FNV-1a 64).
std::string file_hash_hex(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

} // namespace neuralme
