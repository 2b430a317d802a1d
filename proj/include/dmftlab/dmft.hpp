#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dmftlab/design.hpp"
#include "dmftlab/grid.hpp"
#include "dmftlab/kernel.hpp"
#include "dmftlab/loss.hpp"

namespace dmftlab {

struct DmftOptions {
    bool psd_project = false;
    long chunk = 512;  // paths per reduction chunk
};

// Per-entry Monte Carlo standard errors of the averaged kernels.
struct DmftDiagnostics {
    BlockKernel se_C_theta;
    BlockKernel se_C_ell;
    ResponseKernel se_R_ell;
    std::vector<Eigen::MatrixXd> se_Gamma;
    double max_se_C_theta = 0.0;
    double max_se_C_ell = 0.0;
    double max_se_R_ell = 0.0;
    double max_se_Gamma = 0.0;
    std::vector<std::string> warnings;
};

struct DmftSolution {
    TimeGrid grid;
    int k = 1;
    double delta = 1.0;
    bool planted = false;
    BlockKernel C_theta;   // star blocks in planted mode
    BlockKernel C_ell;
    ResponseKernel R_theta;
    // Off-diagonal blocks drive the dynamics; the diagonal holds the same-knot
    // value -E[grad ell grad ell]/delta for reference only.
    ResponseKernel R_ell;  // star column R_ell(t, *) in planted mode
    std::vector<Eigen::MatrixXd> Gamma;
    long mc_paths = 0;
    std::uint64_t seed = 0;
    DmftDiagnostics diagnostics;
};

// Discrete DMFT by forward induction over the knots with Monte Carlo averages
// over mc_paths effective paths.
DmftSolution solve_dmft_discrete(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop,
                                 double delta, const TimeGrid& grid, long mc_paths, std::uint64_t seed, bool planted,
                                 const DmftOptions& options = {});

// AMP state evolution with Onsager matrices, converted to DMFT kernels. Uses
// the same random inputs as solve_dmft_discrete for a given seed.
DmftSolution solve_amp_se(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop, double delta,
                          const TimeGrid& grid, long mc_paths, std::uint64_t seed, bool planted,
                          const DmftOptions& options = {});

struct DmftSamples {
    Eigen::MatrixXd theta;       // n x (m+1)k, knot-major
    Eigen::MatrixXd r;           // n x (m+1)k
    Eigen::MatrixXd theta_star;  // n x k
    Eigen::MatrixXd wstar;       // n x k
    Eigen::VectorXd z;
};

// Fresh draws of the effective process with the kernels of `sol` frozen.
DmftSamples sample_dmft_paths(const DmftSolution& sol, const LossModel& model, const LambdaPath& lambda,
                              const PopulationSpec& pop, long n_samples, std::uint64_t seed);

struct PhiParams {
    double M_ell = 1.0;
    double M_lambda = 0.0;
    double M_theta0_z = 1.0;
    double delta = 1.0;
    int k = 1;
    double phi_Rt0 = 1.01;
    double phi_Ct0 = 1.01;
};

struct PhiBounds {
    TimeGrid grid;
    std::vector<double> phi_Rt, phi_Rl, phi_Ct, phi_Cl;
    PhiParams params;
};

// Forward Euler for the four coupled growth functions with left Riemann sums.
PhiBounds phi_bounds(const PhiParams& params, const TimeGrid& grid);

// max(E|theta0|^2, sup over the noise support of E|ell(0; z)|^2), by quadrature.
double theta0_noise_bound(const LossModel& model, const PopulationSpec& pop, int k);

// Kernel CSVs plus manifest.json in `dir`.
void write_solution(const std::string& dir, const DmftSolution& sol, const std::string& model_id,
                    const std::string& lambda_id);

}  // namespace dmftlab
