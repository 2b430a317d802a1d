#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace dmftlab {

// Philox4x32-10 counter-based generator. A Stream is a key; draws are pure
// functions of (key, sub, idx), so any draw can be reproduced in isolation
// and results never depend on evaluation order or worker count.
class Stream {
public:
    Stream() = default;
    Stream(std::uint64_t master_seed, std::string_view label);

    // Nested stream, e.g. Stream(seed, "mc").child("u").
    Stream child(std::string_view label) const;

    std::array<std::uint32_t, 4> block(std::uint64_t sub, std::uint64_t idx) const;
    std::uint64_t bits(std::uint64_t sub, std::uint64_t idx) const;
    // Uniform on the open interval (0, 1).
    double uniform(std::uint64_t sub, std::uint64_t idx) const;
    double normal(std::uint64_t sub, std::uint64_t idx) const;

    std::uint64_t key() const { return (std::uint64_t(k1_) << 32) | k0_; }

private:
    std::uint32_t k0_ = 0, k1_ = 0;
};

std::uint64_t hash_label(std::uint64_t seed, std::string_view label);

}  // namespace dmftlab
