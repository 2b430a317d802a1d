#include "dmftlab/quadrature.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace dmftlab {

namespace {

// Golub-Welsch on a symmetric tridiagonal Jacobi matrix.
void golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& off, double mu0, std::vector<double>& nodes,
                  std::vector<double>& weights) {
    const int n = int(diag.size());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) J(i, i) = diag(i);
    for (int i = 0; i + 1 < n; ++i) J(i, i + 1) = J(i + 1, i) = off(i);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes.resize(n);
    weights.resize(n);
    for (int i = 0; i < n; ++i) {
        nodes[i] = es.eigenvalues()(i);
        double v = es.eigenvectors()(0, i);
        weights[i] = mu0 * v * v;
    }
}

}  // namespace

void gauss_hermite_normal(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw std::invalid_argument("gauss_hermite_normal: n must be positive");
    static std::mutex mu;
    static std::map<int, std::pair<std::vector<double>, std::vector<double>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) {
        Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd off(n > 1 ? n - 1 : 0);
        for (int i = 0; i + 1 < n; ++i) off(i) = std::sqrt(double(i + 1));
        std::vector<double> x, w;
        golub_welsch(diag, off, 1.0, x, w);
        // symmetrize so odd moments vanish exactly
        for (int i = 0; i < n / 2; ++i) {
            double a = 0.5 * (x[n - 1 - i] - x[i]);
            double b = 0.5 * (w[i] + w[n - 1 - i]);
            x[i] = -a;
            x[n - 1 - i] = a;
            w[i] = w[n - 1 - i] = b;
        }
        if (n % 2 == 1) x[n / 2] = 0.0;
        double total = 0.0;
        for (double v : w) total += v;
        for (double& v : w) v /= total;
        it = cache.emplace(n, std::make_pair(x, w)).first;
    }
    nodes = it->second.first;
    weights = it->second.second;
}

void gauss_legendre(int n, double a, double b, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd off(n > 1 ? n - 1 : 0);
    for (int i = 0; i + 1 < n; ++i) {
        double k = i + 1;
        off(i) = k / std::sqrt(4.0 * k * k - 1.0);
    }
    golub_welsch(diag, off, 2.0, nodes, weights);
    for (int i = 0; i < n; ++i) {
        nodes[i] = 0.5 * (b - a) * nodes[i] + 0.5 * (a + b);
        weights[i] *= 0.5 * (b - a);
    }
}

}  // namespace dmftlab
