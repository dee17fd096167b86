#include "tkgcn/checkpoint.hpp"

#include <cstring>
#include <map>
#include <stdexcept>

#include "tkgcn/util.hpp"

namespace tkgcn {

namespace {

constexpr char kMagic[4] = {'K', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedParams& params) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        if (!t.defined()) throw std::invalid_argument("save_checkpoint: undefined tensor for '" + name + "'");
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
        for (double v : t.values()) put_f64(buf, v);
    }
    atomic_write_file(path, buf);
}

void load_checkpoint(const std::filesystem::path& path, NamedParams& params) {
    const std::vector<std::uint8_t> buf = read_binary_file(path);
    Reader r{buf};
    if (r.str(4) != std::string(kMagic, 4))
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();

    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u32();
        std::vector<double> vals(shape_size(shape));
        for (double& v : vals) v = r.f64();
        if (!entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(vals))).second)
            throw std::runtime_error("duplicate checkpoint entry in " + path.string());
    }

    for (auto& [name, t] : params) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error("checkpoint missing parameter '" + name + "'");
        if (it->second.first != t.shape())
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file has " +
                                     shape_str(it->second.first) + ", model has " + shape_str(t.shape()));
        t.values() = it->second.second;
        entries.erase(it);
    }
    if (!entries.empty())
        throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) +
                                 " unexpected parameter(s), first: '" + entries.begin()->first + "'");
}

}  // namespace tkgcn
