#include <doctest.h>

#include <cmath>

#include "dmftlab/errors.hpp"
#include "dmftlab/metrics.hpp"
#include "dmftlab/rng.hpp"

using namespace dmftlab;

namespace {

Eigen::MatrixXd normals(long n, int D, double shift, std::uint64_t seed) {
    Stream s(seed, "test");
    Eigen::MatrixXd m(n, D);
    for (long i = 0; i < n; ++i)
        for (int j = 0; j < D; ++j) m(i, j) = s.normal(i, j) + shift;
    return m;
}

}  // namespace

TEST_CASE("one-dimensional W2 basics") {
    SampleCloud a(normals(1000, 1, 0.0, 1)), b(Eigen::MatrixXd::Constant(5, 1, 2.0)), c(Eigen::MatrixXd::Constant(7, 1, -1.0));
    CHECK(wasserstein2_1d(a, a) == 0.0);
    CHECK(wasserstein2_1d(b, c) == doctest::Approx(3.0));
    SampleCloud g0(normals(100000, 1, 0.0, 2)), g1(normals(100000, 1, 0.5, 3));
    CHECK(std::abs(wasserstein2_1d(g0, g1) - 0.5) < 0.02);
    CHECK_THROWS_AS(wasserstein2_1d(SampleCloud(normals(10, 2, 0, 1)), a), ConfigError);
    CHECK_THROWS_AS(wasserstein2_1d(SampleCloud(Eigen::MatrixXd::Zero(1, 1)), a), ConfigError);
}

TEST_CASE("W2 is symmetric and satisfies the triangle inequality") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Stream st(s, "triple");
        SampleCloud x(normals(300, 1, st.normal(0, 0), 3 * s)), y(normals(300, 1, st.normal(0, 1), 3 * s + 1)),
            z(normals(300, 1, st.normal(0, 2), 3 * s + 2));
        CHECK(std::abs(wasserstein2_1d(x, y) - wasserstein2_1d(y, x)) < 1e-12);
        CHECK(wasserstein2_1d(x, z) <= wasserstein2_1d(x, y) + wasserstein2_1d(y, z) + 1e-12);
    }
}

TEST_CASE("nested subsamples approach the full sample") {
    const Eigen::MatrixXd full = normals(8192, 1, 0.0, 9);
    SampleCloud F(full);
    double prev = 1e9;
    int violations = 0;
    for (long n : {64, 256, 1024, 4096}) {
        const double w = wasserstein2_1d(SampleCloud(full.topRows(n)), F);
        if (w > prev) ++violations;
        prev = w;
    }
    CHECK(violations == 0);
}

TEST_CASE("sliced W2") {
    SampleCloud a(normals(2000, 1, 0.0, 4)), b(normals(2000, 1, 0.7, 5));
    CHECK(sliced_w2(a, a, 16, 1) == 0.0);
    CHECK(sliced_w2(a, b, 8, 1) == doctest::Approx(wasserstein2_1d(a, b)).epsilon(1e-12));
    Eigen::MatrixXd p = normals(100000, 3, 0.0, 6), q = normals(100000, 3, 0.0, 7);
    const Eigen::RowVector3d mu(0.6, -0.3, 0.4);
    q.rowwise() += mu;
    const double v = sliced_w2(SampleCloud(p), SampleCloud(q), 512, 3);
    CHECK(v == doctest::Approx(mu.norm() / std::sqrt(3.0)).epsilon(0.05));
    CHECK(sliced_w2(SampleCloud(p), SampleCloud(q), 512, 3) == v);
}

TEST_CASE("kernel sup difference") {
    TimeGrid g = TimeGrid::from_horizon(0.5, 1.0);
    BlockKernel A(g, 2);
    for (auto& b : A.blocks) b = Eigen::MatrixXd::Identity(2, 2);
    BlockKernel B = A;
    CHECK(kernel_sup_diff(A, B).sup == 0.0);
    B.block(1, 1) += 0.1 * Eigen::MatrixXd::Identity(2, 2);
    SupDiff s = kernel_sup_diff(A, B);
    CHECK(s.sup == doctest::Approx(0.1));
    CHECK(s.i == 1);
    CHECK(s.j == 1);
    BlockKernel C(TimeGrid::from_horizon(0.25, 1.0), 2);
    CHECK_THROWS_AS(kernel_sup_diff(A, C), ConfigError);
}
