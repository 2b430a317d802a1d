#pragma once

// Internals shared by the DMFT solver and the AMP state-evolution oracle.

#include <cmath>
#include <optional>
#include <vector>

#include "dmftlab/dmft.hpp"
#include "dmftlab/errors.hpp"
#include "dmftlab/parallel.hpp"
#include "dmftlab/rng.hpp"

namespace dmftlab::detail {

// Row-major k x k helpers.
inline void mm_acc(int k, const double* A, const double* B, double* C, double alpha) {
    for (int a = 0; a < k; ++a)
        for (int c = 0; c < k; ++c) {
            const double s = alpha * A[a * k + c];
            if (s == 0.0) continue;
            for (int b = 0; b < k; ++b) C[a * k + b] += s * B[c * k + b];
        }
}

inline void mv_acc(int k, const double* A, const double* x, double* y, double alpha) {
    for (int a = 0; a < k; ++a) {
        double s = 0.0;
        for (int b = 0; b < k; ++b) s += A[a * k + b] * x[b];
        y[a] += alpha * s;
    }
}

inline void outer_acc(int k, const double* x, const double* y, double* C, double alpha) {
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) C[a * k + b] += alpha * x[a] * y[b];
}

inline Eigen::MatrixXd to_matrix(int k, const double* A) {
    Eigen::MatrixXd M(k, k);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) M(a, b) = A[a * k + b];
    return M;
}

inline void from_matrix(const Eigen::MatrixXd& M, double* A) {
    const int k = int(M.rows());
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) A[a * k + b] = M(a, b);
}

inline std::size_t tri_incl(int i, int j) { return std::size_t(i) * (i + 1) / 2 + j; }  // j <= i
inline std::size_t tri_strict(int i, int j) { return std::size_t(i) * (i - 1) / 2 + j; }  // j < i

// Frozen random inputs for one solve: population draws, noise, and the
// standard normals behind the w- and u-processes.
struct PathInputs {
    long P = 0;
    int k = 1;
    int m = 0;
    bool planted = false;
    int labels = 1;  // sub-paths per path: 2 when conditioning on a sign label
    std::optional<LabelWeights> weights;
    std::vector<double> theta0, theta_star, z;
    int w_blocks = 0;  // star block (planted) plus knots 0..m
    std::vector<double> w_normals;  // P x w_blocks x k
    std::vector<double> u_normals;  // P x m x k
};

PathInputs make_path_inputs(const LossModel& model, const PopulationSpec& pop, const TimeGrid& grid, long P,
                            std::uint64_t seed, bool planted);

void validate_inputs(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop, double delta,
                     const TimeGrid& grid, long P, bool planted);

// Evaluate ell and grad_r on a sub-path; y is ignored without label conditioning.
struct SubEval {
    const LossModel& model;
    bool use_labels;
    void eval(double t, const double* r, const double* ws, double z, double y, double* out) const {
        if (use_labels) model.labels->eval(t, r, y, out);
        else model.eval(t, r, ws, z, out);
    }
    void grad(double t, const double* r, const double* ws, double z, double y, double* out) const {
        if (use_labels) model.labels->grad_r(t, r, y, out);
        else model.grad_r(t, r, ws, z, out);
    }
};

inline double label_value(int l) { return l == 0 ? -1.0 : 1.0; }

// Sums and sums of squares of per-path values, chunked for a fixed reduction order.
struct ChunkAccumulator {
    long n_chunks;
    long width;
    std::vector<double> partial;  // n_chunks x 2*width
    ChunkAccumulator(long P, long chunk, long w)
        : n_chunks((P + chunk - 1) / chunk), width(w), partial(std::size_t(n_chunks * 2 * w), 0.0) {}
    double* sums(long c) { return partial.data() + c * 2 * width; }
    // add per-path value vector x
    void add(long c, const double* x) {
        double* s = sums(c);
        for (long e = 0; e < width; ++e) {
            s[e] += x[e];
            s[width + e] += x[e] * x[e];
        }
    }
    // means and standard errors over P paths
    void finish(long P, std::vector<double>& mean, std::vector<double>& se) const;
};

// Assemble solution kernels from flat arrays (row-major blocks).
void fill_solution(DmftSolution& sol, const std::vector<double>& Cth, const std::vector<double>& Cth_star,
                   const std::vector<double>& Cstar, const std::vector<double>& Cl, const std::vector<double>& Rth,
                   const std::vector<double>& Rl, const std::vector<double>& Rstar, const std::vector<double>& Gam,
                   const std::vector<double>& seCth, const std::vector<double>& seCl, const std::vector<double>& seRl,
                   const std::vector<double>& seGam);

void check_finite(const std::vector<double>& v, int step, const char* what);

}  // namespace dmftlab::detail
