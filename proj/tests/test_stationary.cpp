#include <doctest.h>

#include <cmath>

#include "dmftlab/errors.hpp"
#include "dmftlab/stationary.hpp"
#include "oracles.hpp"

using namespace dmftlab;

TEST_CASE("ridge without signal matches the scalar fixed point") {
    const LossModel lin = make_glm_loss(Link::Linear, BaseLoss::Square);
    for (double lambda : {0.1, 0.5, 2.0})
        for (double delta : {0.5, 2.0, 4.0}) {
            StationaryPoint sp = solve_stationary(lin, lambda, delta, Eigen::MatrixXd::Zero(1, 1), {});
            CHECK(sp.converged);
            CHECK(sp.R_theta_inf(0, 0) == doctest::Approx(oracle::ridge_R_theta(lambda, delta)).epsilon(1e-8));
            CHECK(std::abs(sp.C_theta_inf(0, 0)) < 1e-8);
        }
}

TEST_CASE("planted linear model matches the closed-form stationary point") {
    const LossModel lin = make_glm_loss(Link::Linear, BaseLoss::Square);
    ExpectationConfig cfg;
    cfg.noise = ScalarLaw::gaussian(0.0, 0.5);
    StationaryPoint sp = solve_stationary(lin, 0.5, 2.0, Eigen::MatrixXd::Constant(1, 1, 1.0), cfg);
    const auto o = oracle::linear_stationary(0.5, 2.0, 1.0, 0.25);
    CHECK(sp.converged);
    CHECK(sp.R_ell_inf(0, 0) == doctest::Approx(o.R_ell).epsilon(1e-8));
    CHECK(sp.R_ell_star(0, 0) == doctest::Approx(o.R_star).epsilon(1e-8));
    CHECK(sp.C_theta_inf(0, 0) == doctest::Approx(o.C11).epsilon(1e-7));
    CHECK(sp.C_theta_inf(0, 1) == doctest::Approx(o.C12).epsilon(1e-7));
    CHECK(sp.C_ell_inf(0, 0) == doctest::Approx(o.C_ell).epsilon(1e-7));
}

TEST_CASE("prox agrees with bisection on the defining equation") {
    const LossModel models[] = {make_glm_loss(Link::Logistic, BaseLoss::Logistic),
                                make_glm_loss(Link::Logistic, BaseLoss::HingeSq),
                                make_shallow_nn_loss(1, Activation::SoftPlus, {0.8})};
    for (const LossModel& m : models)
        for (double w : {-2.0, -0.1, 0.4, 3.0}) {
            const Eigen::VectorXd ws = Eigen::VectorXd::Constant(1, 0.3), wv = Eigen::VectorXd::Constant(1, w);
            const double c = 0.7;
            const Eigen::VectorXd r = prox_eta(wv, ws, 0.1, Eigen::MatrixXd::Constant(1, 1, 1.4), 2.0, m);
            auto h = [&](double x) {
                Eigen::VectorXd xv = Eigen::VectorXd::Constant(1, x);
                return x + c * eval_time_dependent(m, kStationaryTime, xv, ws, 0.1)(0) - w;
            };
            CHECK(r(0) == doctest::Approx(oracle::bisect(h, w - 20.0, w + 20.0)).epsilon(1e-12));
        }
}

TEST_CASE("two-dimensional prox solves the vector equation") {
    const LossModel nn = make_shallow_nn_loss(2, Activation::Tanh, {1.0, -0.6});
    Eigen::MatrixXd R(2, 2);
    R << 1.2, 0.1, 0.1, 0.8;
    const Eigen::VectorXd w = Eigen::Vector2d(0.5, -1.0), ws = Eigen::Vector2d(0.2, 0.4);
    const Eigen::VectorXd r = prox_eta(w, ws, 0.05, R, 2.0, nn);
    const Eigen::VectorXd res = r + R / 2.0 * eval_time_dependent(nn, kStationaryTime, r, ws, 0.05) - w;
    CHECK(res.norm() < 1e-12);
}

TEST_CASE("logistic without signal matches the reduced two-equation system") {
    const double delta = 5.0;
    SurCandesPoint sc = logistic_sur_candes(delta, 0.0, {});
    REQUIRE(sc.exists);
    const auto o = oracle::logistic_null(delta);
    CHECK(sc.point.C_theta_inf(0, 0) == doctest::Approx(o.tau2).epsilon(1e-6));
    CHECK(sc.point.R_theta_inf(0, 0) / delta == doctest::Approx(o.c).epsilon(1e-6));
    CHECK(sc.alpha == 0.0);
    CHECK(sc.kappa == doctest::Approx(0.2));
}

TEST_CASE("logistic beyond the separability threshold is flagged") {
    SurCandesPoint sc = logistic_sur_candes(1.5, 0.0, {});
    CHECK_FALSE(sc.exists);
    CHECK(sc.note.find("no stationary point") != std::string::npos);
}

TEST_CASE("Gordon residual vanishes at the fixed point and detects perturbations") {
    const LossModel lin = make_glm_loss(Link::Linear, BaseLoss::Square);
    ExpectationConfig cfg;
    cfg.noise = ScalarLaw::gaussian(0.0, 0.5);
    StationaryPoint sp = solve_stationary(lin, 0.5, 2.0, Eigen::MatrixXd::Constant(1, 1, 1.0), cfg);
    GordonResult g = gordon_residual(sp, lin, 0.5, 2.0, cfg);
    for (double r : g.residual) CHECK(r < 1e-8);
    CHECK(g.R_ell_inf == doctest::Approx(sp.R_ell_inf(0, 0)).epsilon(1e-8));
    CHECK(g.R_theta_inf == doctest::Approx(sp.R_theta_inf(0, 0)).epsilon(1e-8));
    CHECK(g.R_ell_star == doctest::Approx(sp.R_ell_star(0, 0)).epsilon(1e-8));
    StationaryPoint bad = sp;
    bad.R_ell_inf(0, 0) += 0.1;
    CHECK(gordon_residual(bad, lin, 0.5, 2.0, cfg).residual[0] > 1e-3);

    const LossModel lg = make_glm_loss(Link::Logistic, BaseLoss::Logistic);
    ExpectationConfig lc;
    lc.noise = ScalarLaw::logistic(0.0, 1.0);
    StationaryPoint sl = solve_stationary(lg, 0.3, 3.0, Eigen::MatrixXd::Constant(1, 1, 2.0), lc);
    GordonResult gl = gordon_residual(sl, lg, 0.3, 3.0, lc);
    for (double r : gl.residual) CHECK(r < 1e-7);
}

TEST_CASE("degenerate Gordon triplet") {
    const LossModel z = make_zero_loss(1);
    StationaryPoint sp = solve_stationary(z, 1.0, 2.0, Eigen::MatrixXd::Zero(1, 1), {});
    CHECK_THROWS_AS(gordon_residual(sp, z, 1.0, 2.0, {}), DegenerateError);
}

TEST_CASE("k = 2 Monte Carlo fixed point satisfies the resolvent relation") {
    const LossModel nn = make_shallow_nn_loss(2, Activation::Tanh, {1.0, 0.5});
    ExpectationConfig cfg;
    cfg.mc_samples = 3000;
    cfg.noise = ScalarLaw::gaussian(0.0, 0.3);
    StationaryPoint sp = solve_stationary(nn, 0.4, 2.0, 0.5 * Eigen::MatrixXd::Identity(2, 2), cfg, 0.5, 1e-9);
    CHECK(sp.converged);
    const Eigen::MatrixXd lhs = sp.R_theta_inf * (0.4 * Eigen::MatrixXd::Identity(2, 2) + sp.R_ell_inf);
    CHECK((lhs - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("invalid solver settings") {
    const LossModel lin = make_glm_loss(Link::Linear, BaseLoss::Square);
    CHECK_THROWS_AS(solve_stationary(lin, 0.5, 2.0, Eigen::MatrixXd::Zero(1, 1), {}, 0.0), ConfigError);
    CHECK_THROWS_AS(solve_stationary(lin, 0.5, 0.0, Eigen::MatrixXd::Zero(1, 1), {}), ConfigError);
    CHECK_THROWS_AS(solve_stationary(make_zero_loss(1), 0.0, 2.0, Eigen::MatrixXd::Zero(1, 1), {}), SingularityError);
    // ridgeless and overparametrized: no finite fixed point
    CHECK_THROWS(solve_stationary(lin, 0.0, 0.5, Eigen::MatrixXd::Zero(1, 1), {}));
}
