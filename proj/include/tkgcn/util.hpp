#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace tkgcn {

using Rng = std::mt19937_64;

// FNV-1a over bytes; used for config fingerprints and seed stream derivation.
std::uint64_t fnv1a64(std::string_view bytes);

// Deterministically derive an independent seed for a named RNG stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
    return base ^ fnv1a64(stream);
}

// Shortest round-trip decimal form of a double (std::to_chars).
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

// Write to <path>.tmp then rename, so partially written files never
// appear under the final name.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);
void atomic_write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

void ensure_parent_dir(const std::filesystem::path& path);

}  // namespace tkgcn
