#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dmftlab/design.hpp"
#include "dmftlab/errors.hpp"

using namespace dmftlab;

TEST_CASE("design entries have variance 1/d for every distribution") {
    for (DistKind k : {DistKind::Gaussian, DistKind::Rademacher, DistKind::UniformCentered}) {
        DesignMatrix X = sample_design(400, 200, k, 9);
        const double mean = X.entries.mean();
        const double var = X.entries.array().square().mean() - mean * mean;
        CHECK(std::abs(mean) < 5.0 / std::sqrt(80000.0) / std::sqrt(200.0));
        CHECK(var * 200 == doctest::Approx(1.0).epsilon(0.02));
        CHECK(X.delta() == doctest::Approx(2.0));
    }
    DesignMatrix R = sample_design(10, 25, DistKind::Rademacher, 1);
    CHECK((R.entries.array().abs() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("design sampling is reproducible and row blocks are prefix-stable") {
    DesignMatrix a = sample_design(50, 20, DistKind::Gaussian, 5);
    DesignMatrix b = sample_design(50, 20, DistKind::Gaussian, 5);
    DesignMatrix c = sample_design(80, 20, DistKind::Gaussian, 5);
    CHECK(a.entries == b.entries);
    CHECK(c.entries.topRows(50) == a.entries);
    CHECK_THROWS_AS(sample_design(0, 20, DistKind::Gaussian, 1), ConfigError);
    CHECK_THROWS_AS(parse_dist_kind("cauchy"), ConfigError);
}

TEST_CASE("binary design files round trip and detect corruption") {
    const auto path = (std::filesystem::temp_directory_path() / "dmftlab_design.bin").string();
    DesignMatrix X = sample_design(30, 12, DistKind::Rademacher, 77);
    write_design_binary(path, X);
    DesignMatrix Y = read_design_binary(path);
    CHECK(Y.entries == X.entries);
    CHECK(Y.seed == 77);
    CHECK(Y.dist_kind == DistKind::Rademacher);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64 + 8 * 5);
        const double junk = 123.0;
        f.write(reinterpret_cast<const char*>(&junk), sizeof junk);
    }
    CHECK_THROWS(read_design_binary(path));
    std::filesystem::remove(path);
}

TEST_CASE("scalar laws report exact moments") {
    ScalarLaw g = ScalarLaw::gaussian(0.5, 2.0);
    CHECK(g.second_moment() == doctest::Approx(4.25));
    ScalarLaw l = ScalarLaw::logistic(0.0, 1.0);
    CHECK(l.variance() == doctest::Approx(std::numbers::pi * std::numbers::pi / 3.0));
    // Quantile-midpoint rule for the logistic law converges to its variance.
    std::vector<double> x, w;
    l.quadrature(4000, x, w);
    double v = 0;
    for (std::size_t i = 0; i < x.size(); ++i) v += w[i] * x[i] * x[i];
    CHECK(v == doctest::Approx(std::numbers::pi * std::numbers::pi / 3.0).epsilon(5e-3));
    ScalarLaw m = ScalarLaw::mixture({-1.0, 2.0}, {0.75, 0.25});
    CHECK(m.mean() == doctest::Approx(-0.25));
    CHECK(m.second_moment() == doctest::Approx(1.75));
}

TEST_CASE("population sampling matches the declared laws") {
    PopulationSpec p;
    Eigen::MatrixXd cov(2, 2);
    cov << 1.0, 0.6, 0.6, 2.0;
    p.planted_law = VectorLaw::gaussian(Eigen::VectorXd::Zero(2), cov);
    p.noise_law = ScalarLaw::gaussian(0.0, 0.5);
    Population P = sample_population(p, 40000, 100, 1, 3);
    const double c00 = P.theta0.squaredNorm() / 40000, c01 = P.theta0.col(0).dot(P.theta_star.col(0)) / 40000,
                 c11 = P.theta_star.squaredNorm() / 40000;
    CHECK(c00 == doctest::Approx(1.0).epsilon(0.03));
    CHECK(c01 == doctest::Approx(0.6).epsilon(0.05));
    CHECK(c11 == doctest::Approx(2.0).epsilon(0.03));
    CHECK(P.z.size() == 100);
    Eigen::MatrixXd J = p.joint_second_moment(1);
    CHECK(J(0, 1) == doctest::Approx(0.6));
}
