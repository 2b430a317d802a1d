#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmftlab/design.hpp"
#include "dmftlab/grid.hpp"
#include "dmftlab/kernel.hpp"
#include "dmftlab/loss.hpp"

namespace dmftlab {

struct FlowOptions {
    // Store every knot. Otherwise only knots 0, m and the observation times.
    bool store_full = false;
    std::vector<double> observe_times;
    std::string model_id;
    std::string lambda_id;
};

struct Trajectory {
    TimeGrid grid;
    std::vector<int> knots;            // stored grid indices, increasing
    std::vector<Eigen::MatrixXd> theta;  // d x k per stored knot
    std::vector<Eigen::MatrixXd> r;      // n x k per stored knot, r = X theta
    Eigen::MatrixXd theta_star;          // d x k, empty when unplanted
    Eigen::VectorXd z;
    std::uint64_t seed = 0;
    std::string model_id;
    std::string lambda_id;
    std::vector<std::string> warnings;

    int k() const { return theta.empty() ? 0 : int(theta.front().cols()); }
    // Position of a grid index among the stored knots; throws if absent.
    int position(int grid_index) const;
};

// Largest singular value by power iteration on X^T X.
double spectral_norm(const Eigen::MatrixXd& X, int max_iter = 500, double tol = 1e-12);

// Forward Euler for theta' = -theta Lambda^t - (1/delta) X^T ell_t(X theta, X theta*, z).
Trajectory run_flow_euler(const DesignMatrix& X, const Eigen::MatrixXd& theta0,
                          const std::optional<Eigen::MatrixXd>& theta_star, const Eigen::VectorXd& z,
                          const LossModel& model, const LambdaPath& lambda, const TimeGrid& grid,
                          const FlowOptions& options = {});

// C_hat(t_i, t_j) = theta^{t_i T} theta^{t_j} / d over the stored knots.
BlockKernel empirical_kernel(const Trajectory& traj);

enum class MarginalKind { ThetaRows, RRowsWithZ };

// Row i concatenates coordinate i across the requested times; the r mode appends z.
Eigen::MatrixXd empirical_marginal(const Trajectory& traj, const std::vector<double>& times, MarginalKind which);

// CSV columns: step, time, coord, comp, value.
void write_trajectory_csv(const std::string& path, const Trajectory& traj);

}  // namespace dmftlab
