#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dmftlab/design.hpp"
#include "dmftlab/loss.hpp"

namespace dmftlab {

// Time at which time-dependent drivers are evaluated in the long-time limit.
inline constexpr double kStationaryTime = 1e9;

struct ExpectationConfig {
    int gh_nodes = 41;       // Gauss-Hermite nodes per Gaussian dimension (k = 1)
    int z_nodes = 21;        // nodes for continuous noise laws
    long mc_samples = 20000; // Monte Carlo fallback for k > 1
    std::uint64_t seed = 1;
    ScalarLaw noise = ScalarLaw::point_mass(0.0);
};

struct StationaryPoint {
    Eigen::MatrixXd R_ell_inf, R_theta_inf, R_ell_star;
    Eigen::MatrixXd C_theta_inf;  // 2k x 2k, (theta, theta*)
    Eigen::MatrixXd C_ell_inf;
    Eigen::MatrixXd Gamma_inf;    // E[grad_r ell(r_inf)]
    double residual = 0.0;        // max change relative to max(1, scale) at the last iteration
    int iterations = 0;
    bool converged = false;
    double delta = 1.0;
    double lambda = 0.0;
    std::vector<double> trace;    // residual per iteration
};

// Unique r with r + (R_theta/delta) ell(r, w*, z) = w.
Eigen::VectorXd prox_eta(const Eigen::VectorXd& w, const Eigen::VectorXd& wstar, double z,
                         const Eigen::MatrixXd& R_theta, double delta, const LossModel& model);

// Scalar version on an arbitrary driver F(r); bracket expansion then bisection
// to machine precision.
template <class F>
double prox_scalar(double w, double c, F&& ell);

// Expectations entering the fixed-point map at given (R_theta, C_theta).
struct StationaryMoments {
    Eigen::MatrixXd R_ell;   // E[(I + G R/delta)^{-1} G]
    Eigen::MatrixXd R_star;  // E[(I + G R/delta)^{-1} H], or the label-weight form
    Eigen::MatrixXd C_ell;   // E[ell ell^T]
    Eigen::MatrixXd Gamma;   // E[G]
    double se = 0.0;         // Monte Carlo standard error scale (0 for quadrature)
};

StationaryMoments stationary_moments(const LossModel& model, const Eigen::MatrixXd& R_theta,
                                     const Eigen::MatrixXd& C_theta, double delta, const ExpectationConfig& cfg);

StationaryPoint solve_stationary(const LossModel& model, double lambda_reg, double delta,
                                 const Eigen::MatrixXd& star_second_moment, const ExpectationConfig& cfg,
                                 double damping = 0.5, double tol = 1e-10, int max_iter = 500,
                                 double init_scale = 1.0);

struct SurCandesPoint {
    double alpha = 0.0, sigma = 0.0, lambda_par = 0.0, kappa = 0.0, gamma = 0.0;
    bool exists = true;
    std::string note;
    StationaryPoint point;
};

SurCandesPoint map_sur_candes(const StationaryPoint& sp);
SurCandesPoint logistic_sur_candes(double delta, double gamma2, const ExpectationConfig& cfg, double damping = 0.5,
                                   double tol = 1e-10, int max_iter = 500);

struct GordonResult {
    double residual[3] = {0.0, 0.0, 0.0};
    double R_ell_inf = 0.0, R_ell_star = 0.0, R_theta_inf = 0.0;  // from the constructed triplet
    double xi_norm = 0.0;
};

// k = 1 only. Builds (xi, r, theta) from the stationary point and evaluates the
// L2 norms of the three stationarity equations of the asymptotic Gordon functional.
GordonResult gordon_residual(const StationaryPoint& sp, const LossModel& model, double lambda_reg, double delta,
                             const ExpectationConfig& cfg);

}  // namespace dmftlab

#include "dmftlab/errors.hpp"

namespace dmftlab {

template <class F>
double prox_scalar(double w, double c, F&& ell) {
    auto h = [&](double r) { return r + c * ell(r) - w; };
    const double h0 = h(w);
    if (h0 == 0.0) return w;
    double lo = w, hi = w;
    double step = 1.0;
    if (h0 > 0.0) {
        for (;;) {
            lo = w - step;
            if (h(lo) <= 0.0) break;
            hi = lo;
            step *= 2.0;
            if (step > 1e3) throw MonotonicityError("prox bracket expansion exceeded 1e3");
        }
    } else {
        for (;;) {
            hi = w + step;
            if (h(hi) >= 0.0) break;
            lo = hi;
            step *= 2.0;
            if (step > 1e3) throw MonotonicityError("prox bracket expansion exceeded 1e3");
        }
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double hm = h(mid);
        if (hm == 0.0) return mid;
        if (hm > 0.0) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace dmftlab
