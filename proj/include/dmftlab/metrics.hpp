#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "dmftlab/kernel.hpp"

namespace dmftlab {

struct SampleCloud {
    Eigen::MatrixXd points;  // N x D, uniform weights
    std::string label;

    SampleCloud() = default;
    SampleCloud(Eigen::MatrixXd p, std::string l = {});
    long size() const { return points.rows(); }
    int dim() const { return int(points.cols()); }
    // Throws ConfigError unless N >= 2 and entries are finite.
    void validate() const;
};

// Exact W2 between empirical laws for equal N (sorted coupling); otherwise the
// quantile functions are compared on 2048 midpoint quantiles.
double wasserstein2_1d(const SampleCloud& a, const SampleCloud& b);
double wasserstein2_1d(Eigen::VectorXd a, Eigen::VectorXd b);

// sqrt of the mean squared 1-d W2 over random unit directions.
double sliced_w2(const SampleCloud& a, const SampleCloud& b, int n_directions, std::uint64_t seed);

struct SupDiff {
    double sup = 0.0;
    int i = 0, j = 0;  // knot positions attaining the sup
};

// Max over knot pairs of the spectral norm of block differences.
SupDiff kernel_sup_diff(const BlockKernel& A, const BlockKernel& B);

}  // namespace dmftlab
