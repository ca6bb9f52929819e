#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ccf {

/// Value nearest to v that prints in at most `digits` significant digits.
/// Idempotent, which keeps save(load(file)) byte-stable.
double round_significant(double v, int digits = 9);

std::string read_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Resolves `ref` against the directory of `base_file` unless already absolute.
std::filesystem::path resolve_relative(const std::filesystem::path& base_file,
                                       const std::filesystem::path& ref);

}  // namespace ccf
