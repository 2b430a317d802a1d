#include "dmftlab/dmft.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dmft_common.hpp"

namespace dmftlab {

namespace detail {

void validate_inputs(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop, double delta,
                     const TimeGrid& grid, long P, bool planted) {
    if (P < 100) throw ConfigError("mc_paths", "need at least 100 Monte Carlo paths");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("dims.delta", "aspect ratio must be positive");
    if (!(grid.eta > 0.0) || grid.m < 1) throw ConfigError("grid.eta", "grid needs a positive step and at least one step");
    if (lambda.k != model.k) throw ConfigError("lambda", "regularization dimension differs from model k");
    if (planted && !pop.planted()) throw ConfigError("population.planted", "planted run needs a planted law");
    if (planted) pop.check_dimension(model.k);
    else if (!pop.planted()) pop.check_dimension(model.k);
    else if (pop.planted_law->dim() != 2 * model.k) pop.check_dimension(model.k);
    if (model.labels && planted) make_label_weights(pop.noise_law);
}

PathInputs make_path_inputs(const LossModel& model, const PopulationSpec& pop, const TimeGrid& grid, long P,
                            std::uint64_t seed, bool planted) {
    PathInputs in;
    in.P = P;
    in.k = model.k;
    in.m = grid.m;
    in.planted = planted;
    const int k = model.k;
    if (model.labels) {
        const auto kind = pop.noise_law.kind();
        const bool smooth = kind == ScalarLaw::Kind::Logistic ||
                            (kind == ScalarLaw::Kind::Gaussian && pop.noise_law.spread() > 0.0);
        if (smooth) {
            in.weights = make_label_weights(pop.noise_law);
            in.labels = 2;
        }
    }
    const Stream mc(seed, "mc");
    const Stream rows = mc.child("population"), noise = mc.child("noise");
    const Stream wn = mc.child("w"), un = mc.child("u");
    in.theta0.resize(std::size_t(P * k));
    in.theta_star.resize(std::size_t(P * k));
    in.z.resize(std::size_t(P));
    for (long p = 0; p < P; ++p) {
        pop.draw_row(rows, std::uint64_t(p), k, &in.theta0[p * k], &in.theta_star[p * k]);
        if (!planted)
            for (int a = 0; a < k; ++a) in.theta_star[p * k + a] = 0.0;
        in.z[p] = pop.noise_law.draw(noise, std::uint64_t(p), 0);
    }
    in.w_blocks = grid.m + 1 + (planted ? 1 : 0);
    const long wl = long(in.w_blocks) * k, ul = long(grid.m) * k;
    in.w_normals.resize(std::size_t(P * wl));
    in.u_normals.resize(std::size_t(P * ul));
    for (long p = 0; p < P; ++p) {
        for (long c = 0; c < wl; ++c) in.w_normals[p * wl + c] = wn.normal(std::uint64_t(p), std::uint64_t(c));
        for (long c = 0; c < ul; ++c) in.u_normals[p * ul + c] = un.normal(std::uint64_t(p), std::uint64_t(c));
    }
    return in;
}

void ChunkAccumulator::finish(long P, std::vector<double>& mean, std::vector<double>& se) const {
    std::vector<double> tot = pairwise_reduce(partial, n_chunks, 2 * width);
    mean.assign(std::size_t(width), 0.0);
    se.assign(std::size_t(width), 0.0);
    for (long e = 0; e < width; ++e) {
        const double mu = tot[e] / double(P);
        const double var = std::max(0.0, (tot[width + e] - double(P) * mu * mu) / double(P - 1));
        mean[e] = mu;
        se[e] = std::sqrt(var / double(P));
    }
}

void check_finite(const std::vector<double>& v, int step, const char* what) {
    for (double x : v)
        if (!std::isfinite(x) || std::abs(x) > 1e12)
            throw DivergenceError(step, std::string("non-finite or exploding average in ") + what);
}

void fill_solution(DmftSolution& sol, const std::vector<double>& Cth, const std::vector<double>& Cth_star,
                   const std::vector<double>& Cstar, const std::vector<double>& Cl, const std::vector<double>& Rth,
                   const std::vector<double>& Rl, const std::vector<double>& Rstar, const std::vector<double>& Gam,
                   const std::vector<double>& seCth, const std::vector<double>& seCl, const std::vector<double>& seRl,
                   const std::vector<double>& seGam) {
    const int k = sol.k, K2 = k * k, N = sol.grid.size();
    sol.C_theta = BlockKernel(sol.grid, k, sol.planted);
    sol.C_ell = BlockKernel(sol.grid, k, false);
    sol.R_theta = ResponseKernel(sol.grid, k, false);
    sol.R_ell = ResponseKernel(sol.grid, k, sol.planted);
    auto& dg = sol.diagnostics;
    dg.se_C_theta = BlockKernel(sol.grid, k, false);
    dg.se_C_ell = BlockKernel(sol.grid, k, false);
    dg.se_R_ell = ResponseKernel(sol.grid, k, false);
    sol.Gamma.assign(N, Eigen::MatrixXd::Zero(k, k));
    dg.se_Gamma.assign(N, Eigen::MatrixXd::Zero(k, k));
    auto mx = [](const Eigen::MatrixXd& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; };
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j <= i; ++j) {
            const std::size_t f = (std::size_t(i) * N + j) * K2;
            sol.C_theta.set_symmetric(i, j, to_matrix(k, &Cth[f]));
            sol.C_ell.set_symmetric(i, j, to_matrix(k, &Cl[f]));
            dg.se_C_theta.set_symmetric(i, j, to_matrix(k, &seCth[f]));
            dg.se_C_ell.set_symmetric(i, j, to_matrix(k, &seCl[f]));
            sol.R_theta.block(i, j) = to_matrix(k, &Rth[tri_incl(i, j) * K2]);
            sol.R_ell.block(i, j) = to_matrix(k, &Rl[tri_incl(i, j) * K2]);
            dg.se_R_ell.block(i, j) = to_matrix(k, &seRl[tri_incl(i, j) * K2]);
            dg.max_se_C_theta = std::max(dg.max_se_C_theta, mx(dg.se_C_theta.block(i, j)));
            dg.max_se_C_ell = std::max(dg.max_se_C_ell, mx(dg.se_C_ell.block(i, j)));
            if (j < i) dg.max_se_R_ell = std::max(dg.max_se_R_ell, mx(dg.se_R_ell.block(i, j)));
        }
        sol.Gamma[i] = to_matrix(k, &Gam[std::size_t(i) * K2]);
        dg.se_Gamma[i] = to_matrix(k, &seGam[std::size_t(i) * K2]);
        dg.max_se_Gamma = std::max(dg.max_se_Gamma, mx(dg.se_Gamma[i]));
        if (sol.planted) {
            sol.C_theta.star[i] = to_matrix(k, &Cth_star[std::size_t(i) * K2]);
            sol.R_ell.star[i] = to_matrix(k, &Rstar[std::size_t(i) * K2]);
        }
    }
    if (sol.planted) sol.C_theta.star_star = to_matrix(k, Cstar.data());
}

}  // namespace detail

using namespace detail;

DmftSolution solve_dmft_discrete(const LossModel& model, const LambdaPath& lambda, const PopulationSpec& pop,
                                 double delta, const TimeGrid& grid, long P, std::uint64_t seed, bool planted,
                                 const DmftOptions& options) {
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
    const int sk = planted ? k : 0;  // star offset in the w factor

    std::vector<double> theta(std::size_t(P) * N * k);
    std::vector<double> ell(std::size_t(S) * N * k), G(std::size_t(S) * N * K2);
    std::vector<double> D(std::size_t(S) * triN * K2);
    std::vector<double> Dstar(planted && !use_labels ? std::size_t(S) * N * K2 : 0);
    std::vector<double> wstar(std::size_t(P) * k, 0.0);

    std::vector<double> Cth(std::size_t(N) * N * K2, 0.0), seCth(Cth.size(), 0.0);
    std::vector<double> Cl(Cth.size(), 0.0), seCl(Cth.size(), 0.0);
    std::vector<double> Cth_star(std::size_t(N) * K2, 0.0), Cstar(K2, 0.0);
    std::vector<double> Rth(std::size_t(N) * (N + 1) / 2 * K2, 0.0), Rl(Rth.size(), 0.0), seRl(Rth.size(), 0.0);
    std::vector<double> Gam(std::size_t(N) * K2, 0.0), seGam(Gam.size(), 0.0), Rstar(Gam.size(), 0.0);

    for (long p = 0; p < P; ++p)
        for (int a = 0; a < k; ++a) theta[(std::size_t(p) * N) * k + a] = in.theta0[p * k + a];
    for (int a = 0; a < k; ++a) Rth[a * k + a] = 1.0;

    // knot 0 second moments
    {
        ChunkAccumulator acc(P, chunk, 3 * K2);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(3 * K2);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                const double* t0 = &in.theta0[p * k];
                const double* ts = &in.theta_star[p * k];
                outer_acc(k, t0, t0, &x[0], 1.0);
                outer_acc(k, t0, ts, &x[K2], 1.0);
                outer_acc(k, ts, ts, &x[2 * K2], 1.0);
                acc.add(c, x.data());
            }
        });
        std::vector<double> mu, se;
        acc.finish(P, mu, se);
        for (int e = 0; e < K2; ++e) {
            Cth[e] = mu[e];
            seCth[e] = se[e];
            if (planted) {
                Cth_star[e] = mu[K2 + e];
                Cstar[e] = mu[2 * K2 + e];
            }
        }
    }

    IncrementalFactor fw(k, options.psd_project), fu(k, options.psd_project);
    if (planted) fw.extend(Eigen::MatrixXd(0, k), to_matrix(k, Cstar.data()));

    const long wl = long(in.w_blocks) * k, ul = long(m) * k;
    std::vector<double> lam(K2);

    for (int i = 0; i <= m; ++i) {
        const double t = grid.time(i);
        from_matrix(lambda.eval(t), lam.data());

        // extend the w-process factor with knot i
        {
            Eigen::MatrixXd cross(fw.dim(), k);
            if (planted) cross.topRows(k) = to_matrix(k, &Cth_star[std::size_t(i) * K2]).transpose();
            for (int j = 0; j < i; ++j) cross.middleRows(sk + j * k, k) = to_matrix(k, &Cth[(std::size_t(j) * N + i) * K2]);
            fw.extend(cross, to_matrix(k, &Cth[(std::size_t(i) * N + i) * K2]));
        }
        const Eigen::MatrixXd& Lw = fw.factor();
        const int wdim = fw.dim();
        const int wrow = wdim - k;

        // r-side pass: values, Jacobians, derivative processes
        const long oG = 0, oR = K2, oS = oR + long(i + 1) * K2, oC = oS + K2, W = oC + long(i + 1) * K2;
        ChunkAccumulator acc(P, chunk, W);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(W), w(k), r(k), H(K2), V(std::size_t(std::max(i, 1)) * K2), tmp(K2), dstar_acc(K2);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                const double* xi = &in.w_normals[p * wl];
                for (int a = 0; a < k; ++a) {
                    double s = 0.0;
                    for (int q = 0; q < wdim; ++q) s += Lw(wrow + a, q) * xi[q];
                    w[a] = s;
                }
                if (i == 0 && planted)
                    for (int a = 0; a < k; ++a) {
                        double s = 0.0;
                        for (int q = 0; q < k; ++q) s += Lw(a, q) * xi[q];
                        wstar[p * k + a] = s;
                    }
                const double* ws = &wstar[p * k];
                const double z = in.z[p];
                for (int l = 0; l < Lc; ++l) {
                    const long s = p * Lc + l;
                    const double y = label_value(l);
                    double om = 1.0, dom = 0.0;
                    if (use_labels) {
                        om = in.weights->prob(y, ws[0]);
                        dom = in.weights->dprob(y, ws[0]);
                    }
                    double* ell_s = &ell[std::size_t(s) * N * k];
                    double* G_s = &G[std::size_t(s) * N * K2];
                    double* D_s = &D[std::size_t(s) * triN * K2];

                    for (int a = 0; a < k; ++a) r[a] = w[a];
                    for (int j = 0; j < i; ++j) mv_acc(k, &Rth[tri_incl(i, j + 1) * K2], &ell_s[j * k], r.data(), -eta / delta);
                    double* ell_i = &ell_s[i * k];
                    double* G_i = &G_s[std::size_t(i) * K2];
                    ev.eval(t, r.data(), ws, z, y, ell_i);
                    ev.grad(t, r.data(), ws, z, y, G_i);

                    // D_{i,j} = G_i (-(eta/delta) sum_{q=j+1}^{i-1} R(i,q+1) D_{q,j} - (1/delta) R(i,j+1) G_j)
                    std::fill(V.begin(), V.begin() + std::size_t(i) * K2, 0.0);
                    for (int q = 1; q < i; ++q) {
                        const double* Rq = &Rth[tri_incl(i, q + 1) * K2];
                        const double* Dq = &D_s[tri_strict(q, 0) * K2];
                        if (k == 1) {
                            const double rq = -eta / delta * Rq[0];
                            for (int j = 0; j < q; ++j) V[j] += rq * Dq[j];
                        } else {
                            for (int j = 0; j < q; ++j) mm_acc(k, Rq, &Dq[std::size_t(j) * K2], &V[std::size_t(j) * K2], -eta / delta);
                        }
                    }
                    double* Di = i > 0 ? &D_s[tri_strict(i, 0) * K2] : nullptr;
                    for (int j = 0; j < i; ++j) {
                        double* Vj = &V[std::size_t(j) * K2];
                        mm_acc(k, &Rth[tri_incl(i, j + 1) * K2], &G_s[std::size_t(j) * K2], Vj, -1.0 / delta);
                        double* Dij = &Di[std::size_t(j) * K2];
                        std::fill(Dij, Dij + K2, 0.0);
                        mm_acc(k, G_i, Vj, Dij, 1.0);
                        for (int e2 = 0; e2 < K2; ++e2) x[oR + j * K2 + e2] += om * Dij[e2];
                    }
                    // same-knot value, reference only
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    mm_acc(k, G_i, G_i, tmp.data(), -1.0 / delta);
                    for (int e2 = 0; e2 < K2; ++e2) {
                        x[oR + i * K2 + e2] += om * tmp[e2];
                        x[oG + e2] += om * G_i[e2];
                    }

                    if (planted) {
                        if (use_labels) {
                            for (int a = 0; a < k; ++a) x[oS + a] += dom * ell_i[a];
                        } else {
                            model.grad_wstar(t, r.data(), ws, z, H.data());
                            double* Ds = &Dstar[std::size_t(s) * N * K2];
                            std::fill(dstar_acc.begin(), dstar_acc.end(), 0.0);
                            for (int q = 0; q < i; ++q)
                                mm_acc(k, &Rth[tri_incl(i, q + 1) * K2], &Ds[std::size_t(q) * K2], dstar_acc.data(), -eta / delta);
                            double* Dsi = &Ds[std::size_t(i) * K2];
                            for (int e2 = 0; e2 < K2; ++e2) Dsi[e2] = H[e2];
                            mm_acc(k, G_i, dstar_acc.data(), Dsi, 1.0);
                            for (int e2 = 0; e2 < K2; ++e2) x[oS + e2] += om * Dsi[e2];
                        }
                    }
                    for (int j = 0; j <= i; ++j) outer_acc(k, ell_i, &ell_s[j * k], &x[oC + j * K2], om);
                }
                acc.add(c, x.data());
            }
        });
        std::vector<double> mu, se;
        acc.finish(P, mu, se);
        check_finite(mu, i, "loss-side averages");
        for (int e2 = 0; e2 < K2; ++e2) {
            Gam[std::size_t(i) * K2 + e2] = mu[oG + e2];
            seGam[std::size_t(i) * K2 + e2] = se[oG + e2];
            Rstar[std::size_t(i) * K2 + e2] = mu[oS + e2];
        }
        for (int j = 0; j <= i; ++j)
            for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb) {
                    const int e2 = a * k + bb;
                    Rl[tri_incl(i, j) * K2 + e2] = mu[oR + j * K2 + e2];
                    seRl[tri_incl(i, j) * K2 + e2] = se[oR + j * K2 + e2];
                    Cl[(std::size_t(i) * N + j) * K2 + e2] = mu[oC + j * K2 + e2];
                    Cl[(std::size_t(j) * N + i) * K2 + bb * k + a] = mu[oC + j * K2 + e2];
                    seCl[(std::size_t(i) * N + j) * K2 + e2] = se[oC + j * K2 + e2];
                    seCl[(std::size_t(j) * N + i) * K2 + bb * k + a] = se[oC + j * K2 + e2];
                }
        if (i == m) break;

        // extend the u-process factor with knot i
        {
            Eigen::MatrixXd cross(fu.dim(), k);
            for (int j = 0; j < i; ++j) cross.middleRows(j * k, k) = to_matrix(k, &Cl[(std::size_t(j) * N + i) * K2]);
            fu.extend(cross, to_matrix(k, &Cl[(std::size_t(i) * N + i) * K2]));
        }
        const Eigen::MatrixXd& Lu = fu.factor();
        const int udim = fu.dim();

        // deterministic response update
        std::vector<double> A(K2);  // I - eta (Lambda + Gamma)
        for (int e2 = 0; e2 < K2; ++e2) A[e2] = (e2 % (k + 1) == 0 ? 1.0 : 0.0) - eta * (lam[e2] + Gam[std::size_t(i) * K2 + e2]);
        for (int j = 0; j <= i; ++j) {
            double* out = &Rth[tri_incl(i + 1, j) * K2];
            std::fill(out, out + K2, 0.0);
            mm_acc(k, A.data(), &Rth[tri_incl(i, j) * K2], out, 1.0);
            for (int l = j; l < i; ++l) mm_acc(k, &Rl[tri_incl(i, l) * K2], &Rth[tri_incl(l, j) * K2], out, -eta * eta);
        }
        for (int a = 0; a < k; ++a) Rth[tri_incl(i + 1, i + 1) * K2 + a * k + a] = 1.0;

        // theta pass
        const long Wt = long(i + 2) * K2 + K2;
        ChunkAccumulator tacc(P, chunk, Wt);
        const double us = 1.0 / std::sqrt(delta);
        for_chunks(P, chunk, [&](long c, long b, long e) {
            std::vector<double> x(Wt), u(k), drift(k);
            for (long p = b; p < e; ++p) {
                std::fill(x.begin(), x.end(), 0.0);
                const double* zeta = &in.u_normals[p * ul];
                for (int a = 0; a < k; ++a) {
                    double s = 0.0;
                    for (int q = 0; q < udim; ++q) s += Lu(udim - k + a, q) * zeta[q];
                    u[a] = us * s;
                }
                double* th = &theta[std::size_t(p) * N * k];
                const double* ts = &in.theta_star[p * k];
                std::fill(drift.begin(), drift.end(), 0.0);
                for (int a = 0; a < k; ++a) drift[a] = u[a];
                mv_acc(k, &lam[0], &th[i * k], drift.data(), -1.0);
                mv_acc(k, &Gam[std::size_t(i) * K2], &th[i * k], drift.data(), -1.0);
                for (int j = 0; j < i; ++j) mv_acc(k, &Rl[tri_incl(i, j) * K2], &th[j * k], drift.data(), -eta);
                if (planted) mv_acc(k, &Rstar[std::size_t(i) * K2], ts, drift.data(), -1.0);
                double* nx = &th[(i + 1) * k];
                for (int a = 0; a < k; ++a) nx[a] = th[i * k + a] + eta * drift[a];
                for (int j = 0; j <= i + 1; ++j) outer_acc(k, nx, &th[j * k], &x[j * K2], 1.0);
                if (planted) outer_acc(k, nx, ts, &x[long(i + 2) * K2], 1.0);
                tacc.add(c, x.data());
            }
        });
        tacc.finish(P, mu, se);
        check_finite(mu, i + 1, "parameter-side averages");
        const int ni = i + 1;
        for (int j = 0; j <= ni; ++j)
            for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb) {
                    const int e2 = a * k + bb;
                    Cth[(std::size_t(ni) * N + j) * K2 + e2] = mu[j * K2 + e2];
                    Cth[(std::size_t(j) * N + ni) * K2 + bb * k + a] = mu[j * K2 + e2];
                    seCth[(std::size_t(ni) * N + j) * K2 + e2] = se[j * K2 + e2];
                    seCth[(std::size_t(j) * N + ni) * K2 + bb * k + a] = se[j * K2 + e2];
                }
        if (planted)
            for (int e2 = 0; e2 < K2; ++e2) Cth_star[std::size_t(ni) * K2 + e2] = mu[long(ni + 1) * K2 + e2];
    }

    DmftSolution sol;
    sol.grid = grid;
    sol.k = k;
    sol.delta = delta;
    sol.planted = planted;
    sol.mc_paths = P;
    sol.seed = seed;
    fill_solution(sol, Cth, Cth_star, Cstar, Cl, Rth, Rl, Rstar, Gam, seCth, seCl, seRl, seGam);
    sol.diagnostics.warnings = fw.warnings();
    for (const auto& w : fu.warnings()) sol.diagnostics.warnings.push_back(w);
    return sol;
}

// ---------------------------------------------------------------- resampling

DmftSamples sample_dmft_paths(const DmftSolution& sol, const LossModel& model, const LambdaPath& lambda,
                              const PopulationSpec& pop, long n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("dmft_samples", "need at least one sample");
    const int k = sol.k, N = sol.grid.size(), m = sol.grid.m;
    const double eta = sol.grid.eta, delta = sol.delta;
    if (model.k != k || lambda.k != k) throw ConfigError("model", "model dimension differs from the solution");
    const FactorResult fw = assemble_and_factor(sol.C_theta);
    const BlockKernel Cl_head = sol.C_ell.restrict_to([&] {
        std::vector<int> v(m);
        for (int i = 0; i < m; ++i) v[i] = i;
        return v;
    }());
    const FactorResult fu = assemble_and_factor(Cl_head);
    const int sk = sol.planted ? k : 0;
    const int wdim = int(fw.L.rows()), udim = int(fu.L.rows());

    const Stream base(seed, "mc");
    const Stream rows = base.child("resample.population"), noise = base.child("resample.noise");
    const Stream wn = base.child("resample.w"), un = base.child("resample.u");

    std::vector<Eigen::MatrixXd> lam(N), GamI(N);
    for (int i = 0; i < N; ++i) lam[i] = lambda.eval(sol.grid.time(i));

    DmftSamples out;
    out.theta.resize(n, long(N) * k);
    out.r.resize(n, long(N) * k);
    out.theta_star.resize(n, k);
    out.wstar.resize(n, k);
    out.z.resize(n);

    for_chunks(n, 512, [&](long, long b, long e) {
        Eigen::VectorXd xi(wdim), zeta(udim), w(wdim), u(udim);
        std::vector<double> t0(k), ts(k), rr(k), ws(k);
        std::vector<Eigen::VectorXd> ellh(N), th(N);
        for (long p = b; p < e; ++p) {
            for (int q = 0; q < wdim; ++q) xi(q) = wn.normal(std::uint64_t(p), std::uint64_t(q));
            for (int q = 0; q < udim; ++q) zeta(q) = un.normal(std::uint64_t(p), std::uint64_t(q));
            w = fw.L * xi;
            u = fu.L * zeta / std::sqrt(delta);
            pop.draw_row(rows, std::uint64_t(p), k, t0.data(), ts.data());
            if (!sol.planted) std::fill(ts.begin(), ts.end(), 0.0);
            const double z = pop.noise_law.draw(noise, std::uint64_t(p), 0);
            for (int a = 0; a < k; ++a) ws[a] = sol.planted ? w(a) : 0.0;
            Eigen::Map<const Eigen::VectorXd> tstar(ts.data(), k);
            for (int i = 0; i < N; ++i) {
                Eigen::VectorXd r = w.segment(sk + i * k, k);
                for (int j = 0; j < i; ++j) r -= eta / delta * sol.R_theta.block(i, j + 1) * ellh[j];
                ellh[i].resize(k);
                for (int a = 0; a < k; ++a) rr[a] = r(a);
                model.eval(sol.grid.time(i), rr.data(), ws.data(), z, ellh[i].data());
                out.r.block(p, long(i) * k, 1, k) = r.transpose();
            }
            th[0] = Eigen::Map<const Eigen::VectorXd>(t0.data(), k);
            for (int i = 0; i < m; ++i) {
                Eigen::VectorXd drift = u.segment(i * k, k) - (lam[i] + sol.Gamma[i]) * th[i];
                for (int j = 0; j < i; ++j) drift -= eta * sol.R_ell.block(i, j) * th[j];
                if (sol.planted) drift -= sol.R_ell.star[i] * tstar;
                th[i + 1] = th[i] + eta * drift;
            }
            for (int i = 0; i < N; ++i) out.theta.block(p, long(i) * k, 1, k) = th[i].transpose();
            out.theta_star.row(p) = tstar.transpose();
            for (int a = 0; a < k; ++a) out.wstar(p, a) = ws[a];
            out.z(p) = z;
        }
    });
    return out;
}

// ---------------------------------------------------------------- growth bounds

PhiBounds phi_bounds(const PhiParams& q, const TimeGrid& grid) {
    if (!(q.phi_Rt0 > 1.0)) throw ConfigError("phi.phi_Rt0", "need Phi_Rt(0) > 1");
    if (!(q.phi_Ct0 > q.M_theta0_z)) throw ConfigError("phi.phi_Ct0", "need Phi_Ct(0) > M_theta0_z");
    if (!(q.delta > 0.0)) throw ConfigError("phi.delta", "aspect ratio must be positive");
    if (q.M_ell < 0.0 || q.M_lambda < 0.0 || q.k < 1) throw ConfigError("phi", "constants must be nonnegative");
    const int N = grid.size();
    const double h = grid.eta, Ml = q.M_ell, ML = q.M_lambda, dl = q.delta;
    PhiBounds B;
    B.grid = grid;
    B.params = q;
    B.phi_Rt.assign(N, 0.0);
    B.phi_Rl.assign(N, 0.0);
    B.phi_Ct.assign(N, 0.0);
    B.phi_Cl.assign(N, 0.0);
    B.phi_Rt[0] = q.phi_Rt0;
    B.phi_Ct[0] = q.phi_Ct0;
    for (int i = 0; i < N; ++i) {
        // same-time companions from the current values and the history
        double srl = 0.0, scl = 0.0;
        for (int j = 0; j < i; ++j) {
            const double lag = grid.time(i - j) + 1.0;
            srl += h * B.phi_Rt[i - j] * B.phi_Rl[j];
            scl += h * lag * lag * B.phi_Rt[i - j] * B.phi_Rt[i - j] * B.phi_Cl[j];
        }
        B.phi_Rl[i] = Ml / dl * (Ml * B.phi_Rt[i] + srl);
        B.phi_Cl[i] = 3.0 * (q.M_theta0_z + q.k * Ml * Ml * B.phi_Ct[i] + Ml * Ml / (dl * dl) * scl);
        if (i + 1 == N) break;
        double mem_r = 0.0, mem_c = 0.0;
        for (int j = 0; j < i; ++j) {
            const double lag = grid.time(i - j) + 1.0;
            mem_r += h * B.phi_Rl[i - j] * B.phi_Rt[j];
            mem_c += h * lag * lag * B.phi_Rl[i - j] * B.phi_Rl[i - j] * B.phi_Ct[j];
        }
        B.phi_Rt[i + 1] = B.phi_Rt[i] + h * ((ML + Ml) * B.phi_Rt[i] + mem_r);
        const double rate = 3.0 * ((ML + Ml) * (ML + Ml) * B.phi_Ct[i] + q.k / dl * B.phi_Cl[i] + mem_c);
        const double root = std::sqrt(B.phi_Ct[i]) + h * std::sqrt(rate);
        B.phi_Ct[i + 1] = root * root;
    }
    return B;
}

double theta0_noise_bound(const LossModel& model, const PopulationSpec& pop, int k) {
    const Eigen::MatrixXd M2 = pop.joint_second_moment(k);
    const double e_theta = M2.topLeftCorner(k, k).trace();
    const Eigen::MatrixXd Sstar = M2.bottomRightCorner(k, k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sstar);
    const Eigen::MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const Stream s(0x7a, "noise-bound");
    const long n = 20000;
    double sup = 0.0;
    const std::vector<double> ts = model.time_dependent ? std::vector<double>{0.0, 0.5, 1.0} : std::vector<double>{0.0};
    std::vector<double> r0(k, 0.0), ws(k), out(k);
    for (double t : ts) {
        double acc = 0.0;
        for (long p = 0; p < n; ++p) {
            Eigen::VectorXd g(k);
            for (int a = 0; a < k; ++a) g(a) = s.normal(std::uint64_t(p), std::uint64_t(a));
            Eigen::VectorXd w = root * g;
            for (int a = 0; a < k; ++a) ws[a] = w(a);
            const double z = pop.noise_law.draw(s, std::uint64_t(p), 1000);
            model.eval(t, r0.data(), ws.data(), z, out.data());
            for (int a = 0; a < k; ++a) acc += out[a] * out[a];
        }
        sup = std::max(sup, acc / n);
    }
    return std::max(e_theta, sup);
}

// ---------------------------------------------------------------- export

void write_solution(const std::string& dir, const DmftSolution& sol, const std::string& model_id,
                    const std::string& lambda_id) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_kernel_csv((fs::path(dir) / "C_theta.csv").string(), sol.C_theta, "C_theta", sol.seed);
    write_kernel_csv((fs::path(dir) / "C_ell.csv").string(), sol.C_ell, "C_ell", sol.seed);
    write_kernel_csv((fs::path(dir) / "R_theta.csv").string(), sol.R_theta, "R_theta", sol.seed);
    write_kernel_csv((fs::path(dir) / "R_ell.csv").string(), sol.R_ell, "R_ell", sol.seed);
    {
        std::ofstream g((fs::path(dir) / "Gamma.csv").string());
        g << "i,a,b,t_i,value,se\n";
        for (int i = 0; i < sol.grid.size(); ++i)
            for (int a = 0; a < sol.k; ++a)
                for (int b = 0; b < sol.k; ++b)
                    g << i << ',' << a << ',' << b << ',' << format_double(sol.grid.time(i)) << ','
                      << format_double(sol.Gamma[i](a, b)) << ',' << format_double(sol.diagnostics.se_Gamma[i](a, b))
                      << '\n';
    }
    nlohmann::ordered_json j;
    j["model"] = model_id;
    j["lambda"] = lambda_id;
    j["delta"] = sol.delta;
    j["eta"] = sol.grid.eta;
    j["T"] = sol.grid.horizon();
    j["m"] = sol.grid.m;
    j["k"] = sol.k;
    j["planted"] = sol.planted;
    j["mc_paths"] = sol.mc_paths;
    j["seed"] = sol.seed;
    j["se_summary"] = {{"C_theta", sol.diagnostics.max_se_C_theta},
                       {"C_ell", sol.diagnostics.max_se_C_ell},
                       {"R_ell", sol.diagnostics.max_se_R_ell},
                       {"Gamma", sol.diagnostics.max_se_Gamma}};
    j["warnings"] = sol.diagnostics.warnings;
    j["files"] = {"C_theta.csv", "C_ell.csv", "R_theta.csv", "R_ell.csv", "Gamma.csv"};
    std::ofstream out((fs::path(dir) / "manifest.json").string());
    out << j.dump(2) << "\n";
}

}  // namespace dmftlab
