#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace distlab {

/// 64-bit FNV-1a. Used for content identity (tokenizer, corpus and
/// checkpoint fingerprints), not for security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// 16-digit lowercase hex rendering of fnv1a64.
std::string hash_hex(std::string_view bytes);

/// Hash of a file's full contents. Throws std::runtime_error if unreadable.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace distlab
