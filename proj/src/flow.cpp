#include "dmftlab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "dmftlab/errors.hpp"
#include "dmftlab/rng.hpp"

namespace dmftlab {

int Trajectory::position(int grid_index) const {
    auto it = std::lower_bound(knots.begin(), knots.end(), grid_index);
    if (it == knots.end() || *it != grid_index)
        throw std::out_of_range("knot " + std::to_string(grid_index) + " was not stored in the trajectory");
    return int(it - knots.begin());
}

double spectral_norm(const Eigen::MatrixXd& X, int max_iter, double tol) {
    if (X.size() == 0) return 0.0;
    const Stream s(0x5eed, "power");
    Eigen::VectorXd v(X.cols());
    for (long j = 0; j < X.cols(); ++j) v(j) = s.normal(0, std::uint64_t(j));
    v.normalize();
    double est = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = X.transpose() * (X * v);
        double nrm = w.norm();
        if (nrm == 0.0) return 0.0;
        v = w / nrm;
        if (std::abs(nrm - est) <= tol * nrm) {
            est = nrm;
            break;
        }
        est = nrm;
    }
    return std::sqrt(est);
}

Trajectory run_flow_euler(const DesignMatrix& X, const Eigen::MatrixXd& theta0,
                          const std::optional<Eigen::MatrixXd>& theta_star, const Eigen::VectorXd& z,
                          const LossModel& model, const LambdaPath& lambda, const TimeGrid& grid,
                          const FlowOptions& options) {
    const long n = X.n, d = X.d;
    const int k = model.k;
    if (theta0.rows() != d || theta0.cols() != k) throw std::invalid_argument("run_flow_euler: theta0 must be d x k");
    if (z.size() != n) throw std::invalid_argument("run_flow_euler: z must have n entries");
    if (lambda.k != k) throw std::invalid_argument("run_flow_euler: lambda and model differ in k");
    if (theta_star && (theta_star->rows() != d || theta_star->cols() != k))
        throw std::invalid_argument("run_flow_euler: theta_star must be d x k");
    const double delta = X.delta();
    const double eta = grid.eta;

    Trajectory tr;
    tr.grid = grid;
    tr.seed = X.seed;
    tr.model_id = options.model_id.empty() ? model.name : options.model_id;
    tr.lambda_id = options.lambda_id;
    tr.z = z;
    if (theta_star) tr.theta_star = *theta_star;

    std::set<int> keep{0, grid.m};
    if (options.store_full)
        for (int i = 0; i <= grid.m; ++i) keep.insert(i);
    for (double t : options.observe_times) keep.insert(grid.knot_of(t));
    tr.knots.assign(keep.begin(), keep.end());

    double lam_norm = 0.0;
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda.eval(0.0));
        lam_norm = es.eigenvalues().cwiseAbs().maxCoeff() + lambda.bound_M * grid.horizon();
    }
    const double xnorm = spectral_norm(X.entries, 200, 1e-8);
    const double stiffness = eta * (lam_norm + model.lipschitz_M * xnorm * xnorm / delta);
    if (!(stiffness < 1.0))
        tr.warnings.push_back("step size may be unstable: eta*(M_Lambda + M_ell*|X|^2/delta) = " +
                              format_double(stiffness));

    Eigen::MatrixXd rstar = theta_star ? Eigen::MatrixXd(X.entries * *theta_star) : Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd theta = theta0;
    Eigen::MatrixXd L(n, k);
    std::vector<double> rbuf(k), wbuf(k), obuf(k);
    const double guard = 1e8 * (1.0 + theta0.norm());
    std::size_t next = 0;

    for (int i = 0; i <= grid.m; ++i) {
        Eigen::MatrixXd r = X.entries * theta;
        if (next < tr.knots.size() && tr.knots[next] == i) {
            tr.theta.push_back(theta);
            tr.r.push_back(r);
            ++next;
        }
        if (i == grid.m) break;
        const double t = grid.time(i);
        for (long row = 0; row < n; ++row) {
            for (int a = 0; a < k; ++a) {
                rbuf[a] = r(row, a);
                wbuf[a] = rstar(row, a);
            }
            model.eval(t, rbuf.data(), wbuf.data(), z(row), obuf.data());
            for (int a = 0; a < k; ++a) L(row, a) = obuf[a];
        }
        theta = theta - eta * (theta * lambda.eval(t) + (1.0 / delta) * (X.entries.transpose() * L));
        const double nrm = theta.norm();
        if (!std::isfinite(nrm)) throw DivergenceError(i + 1, "non-finite iterate in flow");
        if (nrm > guard) throw DivergenceError(i + 1, "iterate norm exceeded divergence guard");
    }
    return tr;
}

BlockKernel empirical_kernel(const Trajectory& traj) {
    if (traj.theta.empty()) throw std::invalid_argument("empirical_kernel: empty trajectory");
    const int k = traj.k();
    const double d = double(traj.theta.front().rows());
    const bool planted = traj.theta_star.size() > 0;
    BlockKernel K(traj.grid, traj.knots, k, planted);
    for (int i = 0; i < K.size(); ++i) {
        for (int j = 0; j <= i; ++j)
            K.set_symmetric(i, j, traj.theta[i].transpose() * traj.theta[j] / d);
        if (planted) K.star[i] = traj.theta[i].transpose() * traj.theta_star / d;
    }
    if (planted) K.star_star = traj.theta_star.transpose() * traj.theta_star / d;
    return K;
}

Eigen::MatrixXd empirical_marginal(const Trajectory& traj, const std::vector<double>& times, MarginalKind which) {
    if (times.empty()) throw std::invalid_argument("empirical_marginal: no times requested");
    std::vector<int> pos;
    for (double t : times) pos.push_back(traj.position(traj.grid.knot_of(t)));
    const int k = traj.k();
    const auto& src = which == MarginalKind::ThetaRows ? traj.theta : traj.r;
    const long rows = src.front().rows();
    const int extra = which == MarginalKind::RRowsWithZ ? 1 : 0;
    Eigen::MatrixXd out(rows, long(pos.size()) * k + extra);
    for (std::size_t c = 0; c < pos.size(); ++c) out.middleCols(long(c) * k, k) = src[pos[c]];
    if (extra) out.col(out.cols() - 1) = traj.z;
    return out;
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,time,coord,comp,value\n";
    for (std::size_t s = 0; s < traj.knots.size(); ++s) {
        const int i = traj.knots[s];
        const std::string t = format_double(traj.grid.time(i));
        const auto& th = traj.theta[s];
        for (long row = 0; row < th.rows(); ++row)
            for (long a = 0; a < th.cols(); ++a)
                out << i << ',' << t << ',' << row << ',' << a << ',' << format_double(th(row, a)) << '\n';
    }
}

}  // namespace dmftlab
