#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace alm {

/// FNV-1a over raw bytes. Stable across platforms, used to derive seeds from identifiers.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffU;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::string_view> parts) {
    std::uint64_t h = mix_seed(0xcbf29ce484222325ULL, base);
    for (auto p : parts) {
        h = fnv1a(p, h);
        h = mix_seed(h, 0xffULL);
    }
    return h;
}

using Rng = std::mt19937_64;

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gaussian(Eigen::Index rows, Eigen::Index cols,
                                                               Scalar stddev, Rng& rng) {
    std::normal_distribution<Scalar> dist(Scalar(0), stddev);
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
    // Fill row-major so the draw order does not depend on storage order.
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

} // namespace alm
