#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tkgcn/tensor.hpp"

namespace tkgcn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Binary checkpoint: magic "KFCK", u32 version, u32 entry count, then per
// entry a length-prefixed name, u32 rank, u32 dims, and the f64
// little-endian payload. Writes are atomic (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const NamedParams& params);

// Fills the values of `params` from the file, matching entries by name and
// validating shapes. The file must contain exactly the same set of names.
void load_checkpoint(const std::filesystem::path& path, NamedParams& params);

}  // namespace tkgcn
