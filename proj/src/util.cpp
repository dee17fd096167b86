#include "tkgcn/util.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <system_error>

namespace tkgcn {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for reading: " + path.string());
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::string s = read_text_file(path);
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

static void atomic_write_impl(const std::filesystem::path& path, const char* data, std::size_t n) {
    ensure_parent_dir(path);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp.string());
        out.write(data, static_cast<std::streamsize>(n));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("rename failed for " + path.string() + ": " + ec.message());
}

void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
    atomic_write_impl(path, bytes.data(), bytes.size());
}

void atomic_write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    atomic_write_impl(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void ensure_parent_dir(const std::filesystem::path& path) {
    auto parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace tkgcn
