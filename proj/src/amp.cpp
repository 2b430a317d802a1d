// AMP state evolution: Gaussian vectors wbar (covariance E[g g^T]) and ubar
// (covariance E[f f^T]/delta), Onsager matrices zeta = E[dg/dubar] and
// xi = E[df/dwbar], and the recursions
//   f_i     = ell(wbar_i - (1/delta) sum_{j<i} zeta_{i,j} f_j)
//   g_{i+1} = (I - eta Lambda) g_i + eta (ubar_{i+1} - sum_{j<=i} xi_{i,j} g_j - xi*_i theta*).

#include <algorithm>
#include <cmath>

#include "dmft_common.hpp"

namespace dmftlab {

using namespace detail;

DmftSolution solve_amp_se(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop, double delta,
                          const TimeGrid& grid, long P, std::uint64_t seed, bool planted, const DmftOptions& options) {
    validate_inputs(model, lambda, pop, delta, grid, P, planted);
    const int k = model.k, K2 = k * k, m = grid.m, N = m + 1;
    const double eta = grid.eta;
    const PathInputs in = make_path_inputs(model, pop, grid, P, seed, planted);
    const int Lc = in.labels;
    const bool use_labels = Lc == 2;
    const SubEval ev{model, use_labels};
    const long S = P * Lc;
    const long chunk = options.chunk;
    const std::size_t triN = std::size_t(N) * (N - 1) / 2;
    const int sk = planted ? k : 0;

    std::vector<double> g(std::size_t(P) * N * k);
    std::vector<double> f(std::size_t(S) * N * k), J(std::size_t(S) * N * K2);
    std::vector<double> dF(std::size_t(S) * triN * K2);  // df_i/dwbar_l, l < i
    std::vector<double> Fs(planted && !use_labels ? std::size_t(S) * N * K2 : 0);
    std::vector<double> wstar(std::size_t(P) * k, 0.0);

    std::vector<double> Eg(std::size_t(N) * N * K2, 0.0), seEg(Eg.size(), 0.0);
    std::vector<double> Ef(Eg.size(), 0.0), seEf(Eg.size(), 0.0);
    std::vector<double> Eg_star(std::size_t(N) * K2, 0.0), Estar(K2, 0.0);
    std::vector<double> xi(std::size_t(N) * (N + 1) / 2 * K2, 0.0), se_xi(xi.size(), 0.0), same(xi.size(), 0.0);
    std::vector<double> xi_star(std::size_t(N) * K2, 0.0);
    std::vector<double> zeta(std::size_t(N) * (N + 1) / 2 * K2, 0.0);  // zeta_{i,j}, j < i, at tri_strict
    std::vector<double> zeta0(std::size_t(N) * K2, 0.0);               // dg_i/dg_0

    for (long p = 0; p < P; ++p)
        for (int a = 0; a < k; ++a) g[(std::size_t(p) * N) * k + a] = in.theta0[p * k + a];
    for (int a = 0; a < k; ++a) zeta0[a * k + a] = 1.0;

    {
        ChunkAccumulator acc(P, chunk, 3 * K2);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(3 * K2);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                outer_acc(k, &in.theta0[p * k], &in.theta0[p * k], &x[0], 1.0);
                outer_acc(k, &in.theta0[p * k], &in.theta_star[p * k], &x[K2], 1.0);
                outer_acc(k, &in.theta_star[p * k], &in.theta_star[p * k], &x[2 * K2], 1.0);
                acc.add(c, x.data());
            }
        });
        std::vector<double> mu, se;
        acc.finish(P, mu, se);
        for (int e = 0; e < K2; ++e) {
            Eg[e] = mu[e];
            seEg[e] = se[e];
            if (planted) {
                Eg_star[e] = mu[K2 + e];
                Estar[e] = mu[2 * K2 + e];
            }
        }
    }

    IncrementalFactor fw(k, options.psd_project), fu(k, options.psd_project);
    if (planted) fw.extend(Eigen::MatrixXd(0, k), to_matrix(k, Estar.data()));
    const long wl = long(in.w_blocks) * k, ul = long(m) * k;
    std::vector<double> lam(K2);

    for (int i = 0; i <= m; ++i) {
        const double t = grid.time(i);
        from_matrix(lambda.eval(t), lam.data());
        {
            Eigen::MatrixXd cross(fw.dim(), k);
            if (planted) cross.topRows(k) = to_matrix(k, &Eg_star[std::size_t(i) * K2]).transpose();
            for (int j = 0; j < i; ++j) cross.middleRows(sk + j * k, k) = to_matrix(k, &Eg[(std::size_t(j) * N + i) * K2]);
            fw.extend(cross, to_matrix(k, &Eg[(std::size_t(i) * N + i) * K2]));
        }
        const Eigen::MatrixXd& Lw = fw.factor();
        const int wdim = fw.dim(), wrow = wdim - k;

        const long oX = 0, oD = long(i + 1) * K2, oS = oD + long(i + 1) * K2, oC = oS + K2, W = oC + long(i + 1) * K2;
        ChunkAccumulator acc(P, chunk, W);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(W), wbar(k), arg(k), H(K2), V(std::size_t(std::max(i, 1)) * K2), tmp(K2);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                const double* nrm = &in.w_normals[p * wl];
                for (int a = 0; a < k; ++a) {
                    double s = 0.0;
                    for (int q = 0; q < wdim; ++q) s += Lw(wrow + a, q) * nrm[q];
                    wbar[a] = s;
                }
                if (i == 0 && planted)
                    for (int a = 0; a < k; ++a) {
                        double s = 0.0;
                        for (int q = 0; q < k; ++q) s += Lw(a, q) * nrm[q];
                        wstar[p * k + a] = s;
                    }
                const double* ws = &wstar[p * k];
                for (int l = 0; l < Lc; ++l) {
                    const long s = p * Lc + l;
                    const double y = label_value(l);
                    const double om = use_labels ? in.weights->prob(y, ws[0]) : 1.0;
                    const double dom = use_labels ? in.weights->dprob(y, ws[0]) : 0.0;
                    double* f_s = &f[std::size_t(s) * N * k];
                    double* J_s = &J[std::size_t(s) * N * K2];
                    double* dF_s = &dF[std::size_t(s) * triN * K2];

                    for (int a = 0; a < k; ++a) arg[a] = wbar[a];
                    for (int j = 0; j < i; ++j) mv_acc(k, &zeta[tri_strict(i, j) * K2], &f_s[j * k], arg.data(), -1.0 / delta);
                    double* fi = &f_s[i * k];
                    double* Ji = &J_s[std::size_t(i) * K2];
                    ev.eval(t, arg.data(), ws, in.z[p], y, fi);
                    ev.grad(t, arg.data(), ws, in.z[p], y, Ji);

                    // V_l = zeta_{i,l} J_l + sum_{j=l+1}^{i-1} zeta_{i,j} dF_{j,l}
                    std::fill(V.begin(), V.begin() + std::size_t(i) * K2, 0.0);
                    for (int l2 = 0; l2 < i; ++l2)
                        mm_acc(k, &zeta[tri_strict(i, l2) * K2], &J_s[std::size_t(l2) * K2], &V[std::size_t(l2) * K2], 1.0);
                    for (int j = 1; j < i; ++j) {
                        const double* Zij = &zeta[tri_strict(i, j) * K2];
                        const double* Fj = &dF_s[tri_strict(j, 0) * K2];
                        for (int l2 = 0; l2 < j; ++l2) mm_acc(k, Zij, &Fj[std::size_t(l2) * K2], &V[std::size_t(l2) * K2], 1.0);
                    }
                    double* Fi = i > 0 ? &dF_s[tri_strict(i, 0) * K2] : nullptr;
                    for (int l2 = 0; l2 < i; ++l2) {
                        double* out = &Fi[std::size_t(l2) * K2];
                        std::fill(out, out + K2, 0.0);
                        mm_acc(k, Ji, &V[std::size_t(l2) * K2], out, -1.0 / delta);
                        for (int e2 = 0; e2 < K2; ++e2) x[oX + l2 * K2 + e2] += om * out[e2];
                    }
                    for (int e2 = 0; e2 < K2; ++e2) x[oX + i * K2 + e2] += om * Ji[e2];
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    mm_acc(k, Ji, Ji, tmp.data(), -1.0 / delta);
                    for (int e2 = 0; e2 < K2; ++e2) x[oD + i * K2 + e2] += om * tmp[e2];

                    if (planted) {
                        if (use_labels) {
                            for (int a = 0; a < k; ++a) x[oS + a] += dom * fi[a];
                        } else {
                            model.grad_wstar(t, arg.data(), ws, in.z[p], H.data());
                            double* Fs_s = &Fs[std::size_t(s) * N * K2];
                            std::fill(tmp.begin(), tmp.end(), 0.0);
                            for (int j = 0; j < i; ++j)
                                mm_acc(k, &zeta[tri_strict(i, j) * K2], &Fs_s[std::size_t(j) * K2], tmp.data(), 1.0);
                            double* Fsi = &Fs_s[std::size_t(i) * K2];
                            for (int e2 = 0; e2 < K2; ++e2) Fsi[e2] = H[e2];
                            mm_acc(k, Ji, tmp.data(), Fsi, -1.0 / delta);
                            for (int e2 = 0; e2 < K2; ++e2) x[oS + e2] += om * Fsi[e2];
                        }
                    }
                    for (int j = 0; j <= i; ++j) outer_acc(k, fi, &f_s[j * k], &x[oC + j * K2], om);
                }
                acc.add(c, x.data());
            }
        });
        std::vector<double> mu, se;
        acc.finish(P, mu, se);
        check_finite(mu, i, "state-evolution averages");
        for (int j = 0; j <= i; ++j)
            for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb) {
                    const int e2 = a * k + bb;
                    xi[tri_incl(i, j) * K2 + e2] = mu[oX + j * K2 + e2];
                    se_xi[tri_incl(i, j) * K2 + e2] = se[oX + j * K2 + e2];
                    Ef[(std::size_t(i) * N + j) * K2 + e2] = mu[oC + j * K2 + e2];
                    Ef[(std::size_t(j) * N + i) * K2 + bb * k + a] = mu[oC + j * K2 + e2];
                    seEf[(std::size_t(i) * N + j) * K2 + e2] = se[oC + j * K2 + e2];
                    seEf[(std::size_t(j) * N + i) * K2 + bb * k + a] = se[oC + j * K2 + e2];
                }
        for (int e2 = 0; e2 < K2; ++e2) {
            same[tri_incl(i, i) * K2 + e2] = mu[oD + i * K2 + e2];
            xi_star[std::size_t(i) * K2 + e2] = mu[oS + e2];
        }
        if (i == m) break;

        // ubar_{i+1} ~ N(0, E[f f^T] / delta)
        {
            Eigen::MatrixXd cross(fu.dim(), k);
            for (int j = 0; j < i; ++j)
                cross.middleRows(j * k, k) = to_matrix(k, &Ef[(std::size_t(j) * N + i) * K2]) / delta;
            fu.extend(cross, to_matrix(k, &Ef[(std::size_t(i) * N + i) * K2]) / delta);
        }
        const Eigen::MatrixXd& Lu = fu.factor();
        const int udim = fu.dim();

        std::vector<double> A(K2);  // I - eta Lambda
        for (int e2 = 0; e2 < K2; ++e2) A[e2] = (e2 % (k + 1) == 0 ? 1.0 : 0.0) - eta * lam[e2];

        // Onsager zeta_{i+1, l} = E[dg_{i+1}/dubar_{l+1}]
        for (int l2 = 0; l2 < i; ++l2) {
            double* out = &zeta[tri_strict(i + 1, l2) * K2];
            std::fill(out, out + K2, 0.0);
            mm_acc(k, A.data(), &zeta[tri_strict(i, l2) * K2], out, 1.0);
            for (int j = l2 + 1; j <= i; ++j) mm_acc(k, &xi[tri_incl(i, j) * K2], &zeta[tri_strict(j, l2) * K2], out, -eta);
        }
        for (int a = 0; a < k; ++a) zeta[tri_strict(i + 1, i) * K2 + a * k + a] = eta;
        {
            double* out = &zeta0[std::size_t(i + 1) * K2];
            mm_acc(k, A.data(), &zeta0[std::size_t(i) * K2], out, 1.0);
            for (int j = 0; j <= i; ++j) mm_acc(k, &xi[tri_incl(i, j) * K2], &zeta0[std::size_t(j) * K2], out, -eta);
        }

        const long Wt = long(i + 2) * K2 + K2;
        ChunkAccumulator tacc(P, chunk, Wt);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(Wt), ubar(k), inner(k);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                const double* nrm = &in.u_normals[p * ul];
                for (int a = 0; a < k; ++a) {
                    double s = 0.0;
                    for (int q = 0; q < udim; ++q) s += Lu(udim - k + a, q) * nrm[q];
                    ubar[a] = s;
                }
                double* gp = &g[std::size_t(p) * N * k];
                const double* ts = &in.theta_star[p * k];
                for (int a = 0; a < k; ++a) inner[a] = ubar[a];
                for (int j = 0; j <= i; ++j) mv_acc(k, &xi[tri_incl(i, j) * K2], &gp[j * k], inner.data(), -1.0);
                if (planted) mv_acc(k, &xi_star[std::size_t(i) * K2], ts, inner.data(), -1.0);
                double* nx = &gp[(i + 1) * k];
                for (int a = 0; a < k; ++a) nx[a] = eta * inner[a];
                mv_acc(k, A.data(), &gp[i * k], nx, 1.0);
                for (int j = 0; j <= i + 1; ++j) outer_acc(k, nx, &gp[j * k], &x[j * K2], 1.0);
                if (planted) outer_acc(k, nx, ts, &x[long(i + 2) * K2], 1.0);
                tacc.add(c, x.data());
            }
        });
        tacc.finish(P, mu, se);
        check_finite(mu, i + 1, "state-evolution averages");
        const int ni = i + 1;
        for (int j = 0; j <= ni; ++j)
            for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb) {
                    const int e2 = a * k + bb;
                    Eg[(std::size_t(ni) * N + j) * K2 + e2] = mu[j * K2 + e2];
                    Eg[(std::size_t(j) * N + ni) * K2 + bb * k + a] = mu[j * K2 + e2];
                    seEg[(std::size_t(ni) * N + j) * K2 + e2] = se[j * K2 + e2];
                    seEg[(std::size_t(j) * N + ni) * K2 + bb * k + a] = se[j * K2 + e2];
                }
        if (planted)
            for (int e2 = 0; e2 < K2; ++e2) Eg_star[std::size_t(ni) * K2 + e2] = mu[long(ni + 1) * K2 + e2];
    }

    // Convert Onsager quantities to kernels.
    std::vector<double> Rth(xi.size(), 0.0), Rl(xi.size(), 0.0), seRl(xi.size(), 0.0);
    std::vector<double> Gam(std::size_t(N) * K2, 0.0), seGam(Gam.size(), 0.0);
    for (int i = 0; i < N; ++i) {
        for (int e2 = 0; e2 < K2; ++e2) {
            Rth[tri_incl(i, 0) * K2 + e2] = zeta0[std::size_t(i) * K2 + e2];
            Gam[std::size_t(i) * K2 + e2] = xi[tri_incl(i, i) * K2 + e2];
            seGam[std::size_t(i) * K2 + e2] = se_xi[tri_incl(i, i) * K2 + e2];
            Rl[tri_incl(i, i) * K2 + e2] = same[tri_incl(i, i) * K2 + e2];
        }
        for (int j = 1; j <= i; ++j)
            for (int e2 = 0; e2 < K2; ++e2) Rth[tri_incl(i, j) * K2 + e2] = zeta[tri_strict(i, j - 1) * K2 + e2] / eta;
        for (int j = 0; j < i; ++j)
            for (int e2 = 0; e2 < K2; ++e2) {
                Rl[tri_incl(i, j) * K2 + e2] = xi[tri_incl(i, j) * K2 + e2] / eta;
                seRl[tri_incl(i, j) * K2 + e2] = se_xi[tri_incl(i, j) * K2 + e2] / eta;
            }
    }
    DmftSolution sol;
    sol.grid = grid;
    sol.k = k;
    sol.delta = delta;
    sol.planted = planted;
    sol.mc_paths = P;
    sol.seed = seed;
    fill_solution(sol, Eg, Eg_star, Estar, Ef, Rth, Rl, xi_star, Gam, seEg, seEf, seRl, seGam);
    sol.diagnostics.warnings = fw.warnings();
    for (const auto& w : fu.warnings()) sol.diagnostics.warnings.push_back(w);
    return sol;
}

}  // namespace dmftlab
