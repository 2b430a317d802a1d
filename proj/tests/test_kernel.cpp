#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dmftlab/errors.hpp"
#include "dmftlab/grid.hpp"
#include "dmftlab/kernel.hpp"

using namespace dmftlab;

namespace {

// Brownian-motion-like kernel min(t_i, t_j) + 1 in k dimensions with a fixed mixing.
BlockKernel test_kernel(const TimeGrid& g, int k) {
    BlockKernel K(g, k);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(k, k);
    if (k > 1) A(0, 1) = 0.4;
    const Eigen::MatrixXd S = A * A.transpose();
    for (int i = 0; i < K.size(); ++i)
        for (int j = 0; j <= i; ++j) K.set_symmetric(i, j, (std::min(g.time(i), g.time(j)) + 1.0) * S);
    return K;
}

}  // namespace

TEST_CASE("grid construction and knot lookup") {
    TimeGrid g = TimeGrid::from_horizon(0.05, 2.0);
    CHECK(g.m == 40);
    CHECK(g.knot_of(1.5) == 30);
    CHECK_THROWS_AS(g.knot_of(0.025), std::out_of_range);
    CHECK_THROWS_AS(TimeGrid::from_horizon(0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(TimeGrid::from_horizon(0.5, 0.1), ConfigError);
    try {
        TimeGrid::from_horizon(-1.0, 1.0);
    } catch (const ConfigError& e) {
        CHECK(e.field() == "grid.eta");
    }
}

TEST_CASE("incremental factor matches a direct Cholesky factor") {
    TimeGrid g = TimeGrid::from_horizon(0.1, 1.0);
    for (int k : {1, 2}) {
        BlockKernel K = test_kernel(g, k);
        const Eigen::MatrixXd A = K.assemble();
        IncrementalFactor F(k);
        for (int i = 0; i < K.size(); ++i) {
            Eigen::MatrixXd cross(i * k, k);
            for (int j = 0; j < i; ++j) cross.middleRows(j * k, k) = K.block(j, i);
            F.extend(cross, K.block(i, i));
        }
        const Eigen::MatrixXd L = F.factor();
        CHECK((L * L.transpose() - A).cwiseAbs().maxCoeff() < 1e-8);
        FactorResult R = assemble_and_factor(K);
        CHECK((R.L * R.L.transpose() - A).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("an indefinite kernel fails without projection and is clipped with it") {
    TimeGrid g = TimeGrid::from_horizon(1.0, 1.0);
    BlockKernel K(g, 1);
    K.set_symmetric(0, 0, Eigen::MatrixXd::Constant(1, 1, 1.0));
    K.set_symmetric(1, 1, Eigen::MatrixXd::Constant(1, 1, 1.0));
    K.set_symmetric(1, 0, Eigen::MatrixXd::Constant(1, 1, 1.5));
    CHECK_FALSE(check_psd(K).ok);
    CHECK_THROWS_AS(assemble_and_factor(K), PsdError);
    IncrementalFactor F(1, true);
    F.extend(Eigen::MatrixXd(0, 1), K.block(0, 0));
    F.extend(K.block(0, 1), K.block(1, 1));
    CHECK(F.factor().allFinite());
    CHECK_FALSE(F.warnings().empty());
}

TEST_CASE("a zero kernel yields a zero factor and zero samples") {
    TimeGrid g = TimeGrid::from_horizon(0.5, 1.0);
    BlockKernel K(g, 1);
    for (int i = 0; i < K.size(); ++i)
        for (int j = 0; j < K.size(); ++j) K.block(i, j) = Eigen::MatrixXd::Zero(1, 1);
    FactorResult R = assemble_and_factor(K);
    CHECK(R.L.cwiseAbs().maxCoeff() == 0.0);
    GpSamples s = sample_gp(K, 1.0, 10, 3);
    CHECK(s.paths.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("GP samples reproduce the kernel covariance") {
    TimeGrid g = TimeGrid::from_horizon(0.25, 1.0);
    BlockKernel K = test_kernel(g, 2);
    const long N = 60000;
    GpSamples s = sample_gp(K, 0.5, N, 8);
    const Eigen::MatrixXd emp = s.paths.transpose() * s.paths / double(N);
    const Eigen::MatrixXd ref = 0.5 * K.assemble();
    CHECK((emp - ref).cwiseAbs().maxCoeff() < 0.05);
    GpSamples again = sample_gp(K, 0.5, 100, 8);
    CHECK(again.paths == s.paths.topRows(100));
}

TEST_CASE("kernel CSV layout") {
    TimeGrid g = TimeGrid::from_horizon(0.5, 0.5);
    BlockKernel K(g, 1, true);
    for (int i = 0; i < 2; ++i) {
        K.star[i] = Eigen::MatrixXd::Constant(1, 1, 0.1 * i);
        for (int j = 0; j < 2; ++j) K.block(i, j) = Eigen::MatrixXd::Constant(1, 1, 1.0 + i + j);
    }
    K.star_star = Eigen::MatrixXd::Constant(1, 1, 2.0);
    const auto path = (std::filesystem::temp_directory_path() / "dmftlab_kernel.csv").string();
    write_kernel_csv(path, K, "C_theta", 4);
    std::ifstream f(path);
    std::string header, first;
    std::getline(f, header);
    std::getline(f, first);
    CHECK(header == "i,j,a,b,t_i,t_j,value");
    CHECK(first == "0,0,0,0,0,0,1");
    std::string line, last;
    while (std::getline(f, line)) last = line;
    CHECK(last.find('*') != std::string::npos);
    CHECK(std::filesystem::exists(path + ".json"));
}
