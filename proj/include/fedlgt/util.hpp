#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fedlgt {

using Rng = std::mt19937_64;

// splitmix64 finalizer; mixes a base seed with stream identifiers.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams);

// Uniform in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Shortest decimal that parses back to the same double.
std::string format_double(double v);
// Whole-token parse; throws std::invalid_argument on junk.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temporary and rename.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace fedlgt
