#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace constalign {

std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Stable across platforms; used for seed mixing.
std::uint64_t fnv1a64(std::string_view data);

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over `path`, so readers never
/// observe a partially written file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
void replace_all(std::string& s, std::string_view from, std::string_view to);
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

/// Fisher-Yates permutation of [0, n) driven by mt19937_64 with rejection
/// sampling, so the result is identical across standard libraries.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace constalign
