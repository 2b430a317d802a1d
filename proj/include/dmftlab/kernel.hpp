#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dmftlab/grid.hpp"

namespace dmftlab {

// Symmetric kernel on a set of grid knots: block(i, j) = block(j, i)^T.
// `knots` lists grid indices (all of 0..m unless restricted).
struct BlockKernel {
    TimeGrid grid;
    std::vector<int> knots;
    int k = 1;
    std::vector<Eigen::MatrixXd> blocks;  // knots.size()^2, row-major in (i, j)
    bool has_star = false;
    std::vector<Eigen::MatrixXd> star;  // C(t_i, *)
    Eigen::MatrixXd star_star;          // C(*, *)

    BlockKernel() = default;
    BlockKernel(const TimeGrid& g, int k, bool with_star = false);
    BlockKernel(const TimeGrid& g, std::vector<int> knots, int k, bool with_star = false);

    int size() const { return int(knots.size()); }
    Eigen::MatrixXd& block(int i, int j) { return blocks[std::size_t(i) * knots.size() + j]; }
    const Eigen::MatrixXd& block(int i, int j) const { return blocks[std::size_t(i) * knots.size() + j]; }
    void set_symmetric(int i, int j, const Eigen::MatrixXd& v);

    // Assembled covariance; star block first when present, then knots in order.
    Eigen::MatrixXd assemble() const;
    double mean_diagonal() const;
    BlockKernel restrict_to(const std::vector<int>& grid_knots) const;
};

// Causal kernel: block(i, j) defined for j <= i only.
struct ResponseKernel {
    TimeGrid grid;
    int k = 1;
    std::vector<Eigen::MatrixXd> blocks;  // triangular, index i*(i+1)/2 + j
    bool has_star = false;
    std::vector<Eigen::MatrixXd> star;  // R(t_i, *)

    ResponseKernel() = default;
    ResponseKernel(const TimeGrid& g, int k, bool with_star = false);

    int size() const { return grid.size(); }
    // Throws std::out_of_range for j > i.
    Eigen::MatrixXd& block(int i, int j);
    const Eigen::MatrixXd& block(int i, int j) const;
};

// Cholesky factor grown one k x k block at a time. Each new block gets its own
// jitter: 1e-10 * (running mean diagonal), escalated x10 up to 1e-4 on failure.
class IncrementalFactor {
public:
    explicit IncrementalFactor(int k, bool psd_project = false);

    // cross: (current size) x k covariance between existing and new coordinates.
    void extend(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& diag);
    int dim() const { return n_; }
    int blocks() const { return n_ / k_; }
    // Lower-triangular factor, dim() x dim().
    const Eigen::MatrixXd& factor() const { return L_; }
    double last_jitter() const { return last_jitter_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    int k_;
    int n_ = 0;
    bool psd_project_;
    double diag_sum_ = 0.0;
    double last_jitter_ = 0.0;
    Eigen::MatrixXd L_;
    std::vector<std::string> warnings_;
};

struct FactorResult {
    Eigen::MatrixXd L;
    double jitter = 0.0;  // absolute jitter added to the diagonal
    std::vector<std::string> warnings;
};

// L L^T = assembled + jitter I with jitter = jitter_rel * mean diagonal,
// escalated x10 until jitter_max_rel. A zero kernel gives a zero factor.
FactorResult assemble_and_factor(const BlockKernel& kernel, double jitter_rel = 1e-10, double jitter_max_rel = 1e-4);

struct GpSamples {
    Eigen::MatrixXd paths;  // n_paths x (size*k), knot-major
    Eigen::MatrixXd star;   // n_paths x k when the kernel has a star column
};

GpSamples sample_gp(const BlockKernel& kernel, double scale, long n_paths, std::uint64_t seed);

struct PsdReport {
    double min_eigenvalue = 0.0;
    bool ok = true;
};
PsdReport check_psd(const BlockKernel& kernel);

// CSV rows (i, j, a, b, t_i, t_j, value) with "*" for the star index, plus a
// JSON sidecar at path + ".json".
void write_kernel_csv(const std::string& path, const BlockKernel& K, const std::string& kind, std::uint64_t seed);
void write_kernel_csv(const std::string& path, const ResponseKernel& K, const std::string& kind, std::uint64_t seed);

std::string format_double(double v);

}  // namespace dmftlab
