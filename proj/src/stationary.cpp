#include "dmftlab/stationary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmftlab/errors.hpp"
#include "dmftlab/quadrature.hpp"
#include "dmftlab/rng.hpp"

namespace dmftlab {

namespace {

constexpr double kBlowup = 1e12;

// One evaluation of the driver at (r, w*, noise); for label models `zy` is the label.
struct Driver {
    const LossModel& m;
    bool labels;
    void eval(const double* r, const double* ws, double zy, double* out) const {
        if (labels) m.labels->eval(kStationaryTime, r, zy, out);
        else m.eval(kStationaryTime, r, ws, zy, out);
    }
    void grad_r(const double* r, const double* ws, double zy, double* out) const {
        if (labels) m.labels->grad_r(kStationaryTime, r, zy, out);
        else m.grad_r(kStationaryTime, r, ws, zy, out);
    }
    void grad_ws(const double* r, const double* ws, double zy, double* out) const {
        m.grad_wstar(kStationaryTime, r, ws, zy, out);
    }
};

// Visits (weight, dweight, g1, w*, noise-or-label) for k = 1 where w* = s * g2.
// dweight is d weight / d w* (label models only).
template <class F>
void for_nodes_k1(const LossModel& model, double s, const ExpectationConfig& cfg, F&& f) {
    std::vector<double> gx, gw;
    gauss_hermite_normal(cfg.gh_nodes, gx, gw);
    std::vector<double> g2x = gx, g2w = gw;
    if (s == 0.0) {
        g2x = {0.0};
        g2w = {1.0};
    }
    const bool labels = static_cast<bool>(model.labels);
    std::vector<double> zx, zw;
    LabelWeights lw;
    if (labels) lw = make_label_weights(cfg.noise);
    else cfg.noise.quadrature(cfg.z_nodes, zx, zw);
    for (size_t b = 0; b < g2x.size(); ++b) {
        const double ws = s * g2x[b];
        for (size_t a = 0; a < gx.size(); ++a) {
            const double w0 = gw[a] * g2w[b];
            if (labels) {
                for (double y : {-1.0, 1.0}) f(w0 * lw.prob(y, ws), w0 * lw.dprob(y, ws), gx[a], ws, y);
            } else {
                for (size_t c = 0; c < zx.size(); ++c) f(w0 * zw[c], 0.0, gx[a], ws, zx[c]);
            }
        }
    }
}

Eigen::VectorXd prox_newton(const Driver& drv, const Eigen::VectorXd& w, const double* ws, double zy,
                            const Eigen::MatrixXd& c) {
    const int k = static_cast<int>(w.size());
    Eigen::VectorXd r = w, l(k), rt(k), lt(k);
    Eigen::MatrixXd G(k, k);
    auto resid = [&](const Eigen::VectorXd& x, Eigen::VectorXd& lx) {
        drv.eval(x.data(), ws, zy, lx.data());
        return Eigen::VectorXd(x + c * lx - w);
    };
    Eigen::VectorXd F = resid(r, l);
    double fn = F.norm();
    const double scale = 1.0 + w.norm();
    for (int it = 0; it < 100; ++it) {
        if (fn <= 1e-14 * scale) return r;
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Gr(k, k);
        drv.grad_r(r.data(), ws, zy, Gr.data());
        G = Gr;
        Eigen::MatrixXd J = Eigen::MatrixXd::Identity(k, k) + c * G;
        Eigen::VectorXd step = J.partialPivLu().solve(F);
        double t = 1.0;
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt) {
            rt = r - t * step;
            Eigen::VectorXd Ft = resid(rt, lt);
            const double ftn = Ft.norm();
            if (std::isfinite(ftn) && ftn < (1.0 - 1e-4 * t) * fn) {
                r = rt;
                F = Ft;
                fn = ftn;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) {
            if (fn <= 1e-10 * scale) return r;
            throw NonConvergenceError(fn, "prox Newton iteration stalled");
        }
    }
    if (fn <= 1e-10 * scale) return r;
    throw NonConvergenceError(fn, "prox Newton iteration did not converge");
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Relative change with a unit floor, so iterates shrinking to zero still settle.
double rel_change(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double den = std::max({max_abs(a), max_abs(b), 1.0});
    return max_abs(a - b) / den;
}

void guard(const Eigen::MatrixXd& m, int iter, const char* what) {
    if (!m.allFinite() || max_abs(m) > kBlowup)
        throw DivergenceError(iter, std::string("stationary iteration diverged in ") + what);
}

Eigen::MatrixXd joint_root(const Eigen::MatrixXd& C) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace

Eigen::VectorXd prox_eta(const Eigen::VectorXd& w, const Eigen::VectorXd& wstar, double z,
                         const Eigen::MatrixXd& R_theta, double delta, const LossModel& model) {
    const int k = model.k;
    if (w.size() != k || wstar.size() != k || R_theta.rows() != k || R_theta.cols() != k)
        throw ConfigError("prox", "dimension mismatch");
    Driver drv{model, false};
    if (k == 1) {
        const double c = R_theta(0, 0) / delta;
        double out = 0.0;
        const double r = prox_scalar(w(0), c, [&](double x) {
            drv.eval(&x, wstar.data(), z, &out);
            return out;
        });
        return Eigen::VectorXd::Constant(1, r);
    }
    return prox_newton(drv, w, wstar.data(), z, R_theta / delta);
}

StationaryMoments stationary_moments(const LossModel& model, const Eigen::MatrixXd& R_theta,
                                     const Eigen::MatrixXd& C_theta, double delta, const ExpectationConfig& cfg) {
    const int k = model.k;
    const bool labels = static_cast<bool>(model.labels);
    Driver drv{model, labels};
    StationaryMoments mo;
    mo.R_ell = Eigen::MatrixXd::Zero(k, k);
    mo.R_star = Eigen::MatrixXd::Zero(k, k);
    mo.C_ell = Eigen::MatrixXd::Zero(k, k);
    mo.Gamma = Eigen::MatrixXd::Zero(k, k);

    if (k == 1) {
        const double c = R_theta(0, 0) / delta;
        const double c22 = C_theta(1, 1), c12 = C_theta(0, 1), c11 = C_theta(0, 0);
        const double s = std::sqrt(std::max(c22, 0.0));
        const double beta = c22 > 0.0 ? c12 / c22 : 0.0;
        const double perp = std::sqrt(std::max(c11 - beta * c12, 0.0));
        double Rl = 0, Rs = 0, Cl = 0, Ga = 0;
        for_nodes_k1(model, s, cfg, [&](double wt, double dwt, double g1, double ws, double zy) {
            if (wt == 0.0 && dwt == 0.0) return;
            const double w = perp * g1 + beta * ws;
            double out = 0.0;
            const double r = prox_scalar(w, c, [&](double x) {
                drv.eval(&x, &ws, zy, &out);
                return out;
            });
            double l = 0.0, G = 0.0;
            drv.eval(&r, &ws, zy, &l);
            drv.grad_r(&r, &ws, zy, &G);
            const double inv = 1.0 / (1.0 + G * c);
            Rl += wt * inv * G;
            Ga += wt * G;
            Cl += wt * l * l;
            if (labels) {
                Rs += dwt * l;
            } else {
                double H = 0.0;
                drv.grad_ws(&r, &ws, zy, &H);
                Rs += wt * inv * H;
            }
        });
        mo.R_ell(0, 0) = Rl;
        mo.R_star(0, 0) = Rs;
        mo.C_ell(0, 0) = Cl;
        mo.Gamma(0, 0) = Ga;
        return mo;
    }

    // Monte Carlo with common random numbers across calls.
    const Eigen::MatrixXd root = joint_root(C_theta);
    const Stream st = Stream(cfg.seed, "stationary");
    const Stream sg = st.child("gauss"), sz = st.child("noise");
    const Eigen::MatrixXd c = R_theta / delta;
    LabelWeights lw;
    if (labels) lw = make_label_weights(cfg.noise);
    const long N = cfg.mc_samples;
    Eigen::VectorXd g(2 * k), l(k);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Gr(k, k), Hr(k, k);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(k, k);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    for (long p = 0; p < N; ++p) {
        for (int a = 0; a < 2 * k; ++a) g(a) = sg.normal(p, a);
        const Eigen::VectorXd x = root * g;
        const Eigen::VectorXd w = x.head(k), ws = x.tail(k);
        auto one = [&](double wt, double zy, double ystar_weight_dw) {
            const Eigen::VectorXd r = prox_newton(drv, w, ws.data(), zy, c);
            drv.eval(r.data(), ws.data(), zy, l.data());
            drv.grad_r(r.data(), ws.data(), zy, Gr.data());
            const Eigen::MatrixXd G = Gr;
            const Eigen::MatrixXd A = (I + G * c).partialPivLu().solve(G);
            mo.R_ell += wt * A;
            sq += wt * A.cwiseProduct(A);
            mo.Gamma += wt * G;
            mo.C_ell += wt * l * l.transpose();
            if (labels) {
                // d/dw*_a of P(y | w*_1 + ... ) is not defined for k > 1 in general; labels use the first coordinate.
                mo.R_star.col(0) += ystar_weight_dw * l;
            } else {
                drv.grad_ws(r.data(), ws.data(), zy, Hr.data());
                const Eigen::MatrixXd H = Hr;
                mo.R_star += wt * (I + G * c).partialPivLu().solve(H);
            }
        };
        if (labels) {
            for (double y : {-1.0, 1.0}) one(lw.prob(y, ws(0)) / N, y, lw.dprob(y, ws(0)) / N);
        } else {
            one(1.0 / N, cfg.noise.draw(sz, p, 0), 0.0);
        }
    }
    const Eigen::MatrixXd var = (sq - mo.R_ell.cwiseProduct(mo.R_ell)).cwiseMax(0.0);
    mo.se = std::sqrt(max_abs(var) / static_cast<double>(N));
    return mo;
}

StationaryPoint solve_stationary(const LossModel& model, double lambda_reg, double delta,
                                 const Eigen::MatrixXd& star_second_moment, const ExpectationConfig& cfg,
                                 double damping, double tol, int max_iter, double init_scale) {
    const int k = model.k;
    if (!(delta > 0.0)) throw ConfigError("delta", "must be positive");
    if (!(lambda_reg >= 0.0)) throw ConfigError("lambda", "must be non-negative");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("damping", "must lie in (0, 1]");
    if (!(tol > 0.0)) throw ConfigError("tol", "must be positive");
    if (max_iter < 1) throw ConfigError("max_iter", "must be at least 1");
    if (star_second_moment.rows() != k || star_second_moment.cols() != k)
        throw ConfigError("star_second_moment", "must be k x k");
    if (k == 1 && cfg.gh_nodes < 2) throw ConfigError("expectation.gh_nodes", "need at least 2 nodes");
    if (k > 1 && cfg.mc_samples < 1) throw ConfigError("expectation.mc_samples", "need at least 1 sample");

    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    const Eigen::MatrixXd& S = star_second_moment;
    const double M = std::isfinite(model.lipschitz_M) && model.lipschitz_M > 0.0 ? model.lipschitz_M : 1.0;

    auto invert = [&](const Eigen::MatrixXd& A) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible()) throw SingularityError("lambda I + R_ell");
        return Eigen::MatrixXd(lu.inverse());
    };

    StationaryPoint sp;
    sp.delta = delta;
    sp.lambda = lambda_reg;
    Eigen::MatrixXd Rt = invert(lambda_reg * I + M * I);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    C.topLeftCorner(k, k) = init_scale * I;
    C.bottomRightCorner(k, k) = S;

    StationaryMoments mo;
    for (int it = 1; it <= max_iter; ++it) {
        mo = stationary_moments(model, Rt, C, delta, cfg);
        guard(mo.R_ell, it, "R_ell");
        guard(mo.C_ell, it, "C_ell");
        const Eigen::MatrixXd Rt_new = invert(lambda_reg * I + mo.R_ell);
        Eigen::MatrixXd C_new(2 * k, 2 * k);
        C_new.topLeftCorner(k, k) =
            Rt_new * (mo.C_ell / delta + mo.R_star * S * mo.R_star.transpose()) * Rt_new.transpose();
        C_new.topRightCorner(k, k) = -Rt_new * mo.R_star * S;
        C_new.bottomLeftCorner(k, k) = C_new.topRightCorner(k, k).transpose();
        C_new.bottomRightCorner(k, k) = S;
        guard(Rt_new, it, "R_theta");
        guard(C_new, it, "C_theta");

        const double res = std::max(rel_change(Rt_new, Rt), rel_change(C_new, C));
        sp.trace.push_back(res);
        sp.iterations = it;
        sp.residual = res;
        Rt = (1.0 - damping) * Rt + damping * Rt_new;
        C = (1.0 - damping) * C + damping * C_new;
        if (res < tol) {
            sp.converged = true;
            break;
        }
    }
    // Report a self-consistent set evaluated at the final iterate.
    mo = stationary_moments(model, Rt, C, delta, cfg);
    sp.R_ell_inf = mo.R_ell;
    sp.R_ell_star = mo.R_star;
    sp.C_ell_inf = mo.C_ell;
    sp.Gamma_inf = mo.Gamma;
    sp.R_theta_inf = Rt;
    sp.C_theta_inf = C;
    return sp;
}

SurCandesPoint map_sur_candes(const StationaryPoint& sp) {
    SurCandesPoint out;
    const double Rl = sp.R_ell_inf(0, 0);
    out.kappa = 1.0 / sp.delta;
    out.alpha = -sp.R_ell_star(0, 0) / Rl;
    out.sigma = std::sqrt(sp.C_ell_inf(0, 0)) / Rl;
    out.lambda_par = 1.0 / (sp.delta * Rl);
    out.gamma = std::sqrt(std::max(sp.C_theta_inf(1, 1), 0.0));
    out.point = sp;
    return out;
}

SurCandesPoint logistic_sur_candes(double delta, double gamma2, const ExpectationConfig& cfg, double damping,
                                   double tol, int max_iter) {
    if (!(gamma2 >= 0.0)) throw ConfigError("gamma2", "must be non-negative");
    const LossModel model = make_glm_loss(Link::Logistic, BaseLoss::Logistic);
    ExpectationConfig c = cfg;
    c.noise = ScalarLaw::logistic(0.0, 1.0);
    const Eigen::MatrixXd S = Eigen::MatrixXd::Constant(1, 1, gamma2);
    SurCandesPoint out;
    try {
        StationaryPoint sp = solve_stationary(model, 0.0, delta, S, c, damping, tol, max_iter);
        out = map_sur_candes(sp);
        if (gamma2 == 0.0) out.alpha = 0.0;
        if (!sp.converged) {
            out.exists = false;
            out.note = "likely no stationary point: iteration did not converge";
        }
    } catch (const DivergenceError& e) {
        out.exists = false;
        out.note = std::string("likely no stationary point: ") + e.what();
    } catch (const MonotonicityError& e) {
        out.exists = false;
        out.note = std::string("likely no stationary point: ") + e.what();
    } catch (const SingularityError& e) {
        out.exists = false;
        out.note = std::string("likely no stationary point: ") + e.what();
    }
    out.kappa = 1.0 / delta;
    out.gamma = std::sqrt(gamma2);
    return out;
}

GordonResult gordon_residual(const StationaryPoint& sp, const LossModel& model, double lambda_reg, double delta,
                             const ExpectationConfig& cfg) {
    if (model.k != 1) throw ConfigError("model.k", "the Gordon residual is implemented for k = 1");
    const bool labels = static_cast<bool>(model.labels);
    Driver drv{model, labels};
    const double c11 = sp.C_theta_inf(0, 0), c12 = sp.C_theta_inf(0, 1), c22 = sp.C_theta_inf(1, 1);
    const bool planted = c22 > 0.0;
    const double s = std::sqrt(std::max(c22, 0.0));
    const double beta = planted ? c12 / c22 : 0.0;
    const double perp_in = std::sqrt(std::max(c11 - beta * c12, 0.0));
    const double c = sp.R_theta_inf(0, 0) / delta;

    // Pass 1: xi = ell(prox(w_inf)) and its inner products with h and w*.
    double xx = 0.0, xh = 0.0, xw = 0.0;
    auto xi_at = [&](double g1, double ws, double zy, double& r) {
        const double w = perp_in * g1 + beta * ws;
        double out = 0.0;
        r = prox_scalar(w, c, [&](double x) {
            drv.eval(&x, &ws, zy, &out);
            return out;
        });
        double l = 0.0;
        drv.eval(&r, &ws, zy, &l);
        return l;
    };
    for_nodes_k1(model, s, cfg, [&](double wt, double, double g1, double ws, double zy) {
        if (wt == 0.0) return;
        double r = 0.0;
        const double xi = xi_at(g1, ws, zy, r);
        xx += wt * xi * xi;
        xh += wt * xi * g1;
        xw += wt * xi * ws;
    });
    const double xi_norm = std::sqrt(xx);
    if (!(xi_norm > 0.0)) throw DegenerateError("xi vanishes identically; the Gordon triplet is degenerate");

    // theta = (lambda + R_ell)^{-1} (u - R_* theta*), u = (|xi| / sqrt(delta)) g.
    const double den = lambda_reg + sp.R_ell_inf(0, 0);
    if (den == 0.0) throw SingularityError("lambda + R_ell");
    const double a = xi_norm / std::sqrt(delta) / den;
    const double b = planted ? -sp.R_ell_star(0, 0) / den : 0.0;
    const double th_ts = b * c22;             // <theta, theta*>
    const double perp = std::abs(a);         // |Pi_perp theta|
    if (perp == 0.0) throw DegenerateError("theta has no component orthogonal to theta*");

    GordonResult res;
    res.xi_norm = xi_norm;
    res.R_ell_inf = xh / perp;
    res.R_ell_star = planted ? xw / c22 - xh * th_ts / (c22 * perp) : 0.0;
    res.R_theta_inf = std::sqrt(delta) * a / xi_norm;

    // The first fixed-point condition is linear in (g, theta*).
    const double c_theta = xh / perp + lambda_reg;
    const double coef_g = c_theta * a - xi_norm / std::sqrt(delta);
    const double coef_s = planted ? res.R_ell_star + c_theta * b : 0.0;
    res.residual[0] = std::sqrt(coef_g * coef_g + coef_s * coef_s * c22);

    // Equations 2 and 3 by quadrature over (h, w*, noise).
    const double g_theta = a;  // <g, theta>
    const double proj = planted ? th_ts / c22 : 0.0;
    double e2 = 0.0, e3 = 0.0;
    for_nodes_k1(model, s, cfg, [&](double wt, double, double g1, double ws, double zy) {
        if (wt == 0.0) return;
        double r = 0.0;
        const double xi = xi_at(g1, ws, zy, r);
        const double v2 = perp * g1 - g_theta / (std::sqrt(delta) * xi_norm) * xi + proj * ws - r;
        double l = 0.0;
        drv.eval(&r, &ws, zy, &l);
        const double v3 = -xi + l;
        e2 += wt * v2 * v2;
        e3 += wt * v3 * v3;
    });
    res.residual[1] = std::sqrt(e2);
    res.residual[2] = std::sqrt(e3);
    return res;
}

}  // namespace dmftlab
