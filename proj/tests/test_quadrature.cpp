#include <doctest.h>

#include <cmath>

#include "dmftlab/quadrature.hpp"
#include "oracles.hpp"

using namespace dmftlab;

TEST_CASE("Gauss-Hermite reproduces normal moments") {
    for (int n : {5, 21, 41}) {
        std::vector<double> x, w;
        gauss_hermite_normal(n, x, w);
        double m0 = 0, m2 = 0, m4 = 0, m1 = 0;
        for (int i = 0; i < n; ++i) {
            m0 += w[i];
            m1 += w[i] * x[i];
            m2 += w[i] * x[i] * x[i];
            m4 += w[i] * std::pow(x[i], 4);
        }
        CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(std::abs(m1) < 1e-13);
        CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
    }
}

TEST_CASE("Gauss-Hermite agrees with a Simpson rule on smooth integrands") {
    std::vector<double> x, w, xo, wo;
    gauss_hermite_normal(30, x, w);
    oracle::normal_rule(2000, xo, wo);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < x.size(); ++i) a += w[i] * std::cos(x[i]);
    for (std::size_t i = 0; i < xo.size(); ++i) b += wo[i] * std::cos(xo[i]);
    CHECK(a == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(b == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
    std::vector<double> x, w;
    gauss_legendre(6, -1.0, 2.0, x, w);
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * (std::pow(x[i], 11) - 3 * x[i] * x[i]);
    const double exact = (std::pow(2.0, 12) - 1.0) / 12.0 - (8.0 + 1.0);
    CHECK(s == doctest::Approx(exact).epsilon(1e-12));
}
