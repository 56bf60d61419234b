// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat binary workload format, little-endian:
//   "MISAWKLD" | version u32 | L u64 | d u64 | H u64 |
//   keys f64[L*d] | queries f64[H*d] | gates f64[H]

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "misa/core.hpp"

namespace misa {

inline constexpr std::array<char, 8> kWorkloadMagic = {'M', 'I', 'S', 'A', 'W', 'K', 'L', 'D'};
inline constexpr std::uint32_t kWorkloadVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw IoError("workload: truncated input");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

} // namespace detail

inline void write_workload(std::ostream& os, const IndexerWorkload& w) {
    w.validate();
    os.write(kWorkloadMagic.data(), kWorkloadMagic.size());
    detail::put_le<std::uint32_t>(os, kWorkloadVersion);
    detail::put_le<std::uint64_t>(os, w.prefix_len());
    detail::put_le<std::uint64_t>(os, w.head_dim());
    detail::put_le<std::uint64_t>(os, w.n_heads());
    for (double x : w.keys.data()) detail::put_le(os, x);
    for (double x : w.queries.data()) detail::put_le(os, x);
    for (double x : w.gate_weights) detail::put_le(os, x);
    if (!os) throw IoError("workload: write failed");
}

/// Seed and needle label are not part of the format and come back empty.
inline IndexerWorkload read_workload(std::istream& is) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size())) throw IoError("workload: truncated header");
    if (magic != kWorkloadMagic) throw IoError("workload: bad magic");
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != kWorkloadVersion) throw IoError("workload: unsupported version " + std::to_string(version));
    const auto L = detail::get_le<std::uint64_t>(is);
    const auto d = detail::get_le<std::uint64_t>(is);
    const auto H = detail::get_le<std::uint64_t>(is);
    constexpr std::uint64_t kLimit = std::uint64_t(1) << 34;
    if (L == 0 || d == 0 || H == 0 || L > kLimit || d > kLimit || H > kLimit || L * d > kLimit)
        throw IoError("workload: implausible dimensions");

    IndexerWorkload w;
    w.keys = Matrix(L, d);
    w.queries = Matrix(H, d);
    w.gate_weights.assign(H, 0.0);
    for (auto& x : w.keys.data()) x = detail::get_le<double>(is);
    for (auto& x : w.queries.data()) x = detail::get_le<double>(is);
    for (auto& x : w.gate_weights) x = detail::get_le<double>(is);
    try {
        w.validate();
    } catch (const ConfigError& e) {
        throw IoError(e.what());
    }
    return w;
}

inline void save_workload(const std::filesystem::path& path, const IndexerWorkload& w) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_workload(os, w);
}

inline IndexerWorkload load_workload(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_workload(is);
}

} // namespace misa
