#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tkgcn {

// Spatiotemporal data file: magic "STDF", u32 version = 1, u32 node count N,
// u32 step count T, u32 feature count F, then N*T*F little-endian f64 in
// node-major order (node slowest, feature fastest).
struct StdfData {
    std::uint32_t nodes = 0;
    std::uint32_t steps = 0;
    std::uint32_t features = 1;
    std::vector<double> values;

    double& at(std::size_t node, std::size_t step, std::size_t feature = 0) {
        return values[(node * steps + step) * features + feature];
    }
    double at(std::size_t node, std::size_t step, std::size_t feature = 0) const {
        return values[(node * steps + step) * features + feature];
    }
};

void write_stdf(const std::filesystem::path& path, const StdfData& data);
StdfData read_stdf(const std::filesystem::path& path);

}  // namespace tkgcn
