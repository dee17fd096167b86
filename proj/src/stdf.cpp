#include "tkgcn/stdf.hpp"

#include <cstring>
#include <stdexcept>

#include "tkgcn/util.hpp"

namespace tkgcn {

namespace {
constexpr char kMagic[4] = {'S', 'T', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
}  // namespace

void write_stdf(const std::filesystem::path& path, const StdfData& data) {
    const std::size_t expected =
        static_cast<std::size_t>(data.nodes) * data.steps * data.features;
    if (data.values.size() != expected)
        throw std::invalid_argument("write_stdf: value count " + std::to_string(data.values.size()) +
                                    " does not match " + std::to_string(data.nodes) + "x" +
                                    std::to_string(data.steps) + "x" + std::to_string(data.features));
    std::vector<std::uint8_t> buf;
    buf.reserve(20 + data.values.size() * 8);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, data.nodes);
    put_u32(buf, data.steps);
    put_u32(buf, data.features);
    for (double v : data.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
    }
    atomic_write_file(path, buf);
}

StdfData read_stdf(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = read_binary_file(path);
    if (buf.size() < 20 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a trajectory file: " + path.string());
    auto u32_at = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
        return v;
    };
    if (u32_at(4) != kVersion)
        throw std::runtime_error("unsupported trajectory file version in " + path.string());
    StdfData data;
    data.nodes = u32_at(8);
    data.steps = u32_at(12);
    data.features = u32_at(16);
    const std::size_t count = static_cast<std::size_t>(data.nodes) * data.steps * data.features;
    if (buf.size() != 20 + count * 8)
        throw std::runtime_error("trajectory file truncated: " + path.string());
    data.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(buf[20 + i * 8 + b]) << (8 * b);
        std::memcpy(&data.values[i], &bits, 8);
    }
    return data;
}

}  // namespace tkgcn
