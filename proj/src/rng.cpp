#include "dmftlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace dmftlab {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = std::uint64_t(a) * b;
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}

}  // namespace

std::uint64_t hash_label(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

Stream::Stream(std::uint64_t master_seed, std::string_view label) {
    std::uint64_t h = hash_label(master_seed, label);
    k0_ = std::uint32_t(h);
    k1_ = std::uint32_t(h >> 32);
}

Stream Stream::child(std::string_view label) const {
    Stream s;
    std::uint64_t h = hash_label(key(), label);
    s.k0_ = std::uint32_t(h);
    s.k1_ = std::uint32_t(h >> 32);
    return s;
}

std::array<std::uint32_t, 4> Stream::block(std::uint64_t sub, std::uint64_t idx) const {
    std::uint32_t c0 = std::uint32_t(idx), c1 = std::uint32_t(idx >> 32);
    std::uint32_t c2 = std::uint32_t(sub), c3 = std::uint32_t(sub >> 32);
    std::uint32_t k0 = k0_, k1 = k1_;
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, c0, hi0, lo0);
        mulhilo(kMul1, c2, hi1, lo1);
        std::uint32_t n0 = hi1 ^ c1 ^ k0;
        std::uint32_t n1 = lo1;
        std::uint32_t n2 = hi0 ^ c3 ^ k1;
        std::uint32_t n3 = lo0;
        c0 = n0; c1 = n1; c2 = n2; c3 = n3;
        k0 += kWeyl0;
        k1 += kWeyl1;
    }
    return {c0, c1, c2, c3};
}

std::uint64_t Stream::bits(std::uint64_t sub, std::uint64_t idx) const {
    auto b = block(sub, idx);
    return (std::uint64_t(b[1]) << 32) | b[0];
}

double Stream::uniform(std::uint64_t sub, std::uint64_t idx) const {
    return (double(bits(sub, idx) >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::normal(std::uint64_t sub, std::uint64_t idx) const {
    auto b = block(sub, idx);
    std::uint64_t x = (std::uint64_t(b[1]) << 32) | b[0];
    std::uint64_t y = (std::uint64_t(b[3]) << 32) | b[2];
    double u1 = (double(x >> 11) + 0.5) * 0x1.0p-53;
    double u2 = (double(y >> 11) + 0.5) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace dmftlab
