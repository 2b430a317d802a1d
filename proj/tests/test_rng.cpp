#include <doctest.h>

#include <cmath>
#include <set>

#include "dmftlab/rng.hpp"

using namespace dmftlab;

TEST_CASE("stream draws are pure functions of key and counters") {
    Stream a(42, "design"), b(42, "design"), c(43, "design"), d(42, "population");
    CHECK(a.bits(3, 7) == b.bits(3, 7));
    CHECK(a.bits(3, 7) != c.bits(3, 7));
    CHECK(a.bits(3, 7) != d.bits(3, 7));
    CHECK(a.child("u").key() == b.child("u").key());
    CHECK(a.child("u").key() != a.child("w").key());
}

TEST_CASE("uniform stays in the open unit interval and normals have unit variance") {
    Stream s(1, "x");
    double m = 0, v = 0;
    const int N = 200000;
    for (int i = 0; i < N; ++i) {
        const double u = s.uniform(0, i);
        CHECK_MESSAGE((u > 0.0 && u < 1.0), u);
        const double g = s.normal(1, i);
        m += g;
        v += g * g;
    }
    m /= N;
    v = v / N - m * m;
    CHECK(std::abs(m) < 5.0 / std::sqrt(double(N)));
    CHECK(std::abs(v - 1.0) < 0.02);
}

TEST_CASE("label hashing separates nearby seeds") {
    std::set<std::uint64_t> keys;
    for (std::uint64_t s = 0; s < 1000; ++s) keys.insert(hash_label(s, "mc"));
    CHECK(keys.size() == 1000);
}
