#include <doctest.h>

#include <cmath>

#include "dmftlab/errors.hpp"
#include "dmftlab/loss.hpp"
#include "dmftlab/rng.hpp"

using namespace dmftlab;

namespace {

std::vector<LossModel> all_models() {
    return {make_glm_loss(Link::Linear, BaseLoss::Square),
            make_glm_loss(Link::PhaseRetrieval, BaseLoss::Square, 50.0),
            make_glm_loss(Link::Logistic, BaseLoss::Square),
            make_glm_loss(Link::Logistic, BaseLoss::Logistic),
            make_glm_loss(Link::Logistic, BaseLoss::HingeSq),
            make_shallow_nn_loss(2, Activation::Tanh, {1.0, -0.5}),
            make_shallow_nn_loss(3, Activation::SoftPlus, {0.3, 0.2, 0.1}),
            make_scheduled_loss(make_glm_loss(Link::Linear, BaseLoss::Square),
                                make_shallow_nn_loss(1, Activation::Tanh, {1.0}))};
}

}  // namespace

TEST_CASE("Jacobians agree with central finite differences") {
    Stream s(11, "fd");
    for (const LossModel& m : all_models()) {
        const int k = m.k;
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd r(k), w(k);
            for (int a = 0; a < k; ++a) {
                r(a) = 1.5 * s.normal(trial, a);
                w(a) = 1.5 * s.normal(trial, 10 + a);
            }
            const double z = 0.3 * s.normal(trial, 99);
            const double t = 0.4;
            Eigen::MatrixXd G = grad_r_matrix(m, t, r, w, z), Gfd(k, k);
            Eigen::MatrixXd H = grad_wstar_matrix(m, t, r, w, z), Hfd(k, k);
            const double h = 1e-6;
            for (int b = 0; b < k; ++b) {
                Eigen::VectorXd rp = r, rm = r, wp = w, wm = w;
                rp(b) += h;
                rm(b) -= h;
                wp(b) += h;
                wm(b) -= h;
                Gfd.col(b) = (eval_time_dependent(m, t, rp, w, z) - eval_time_dependent(m, t, rm, w, z)) / (2 * h);
                Hfd.col(b) = (eval_time_dependent(m, t, r, wp, z) - eval_time_dependent(m, t, r, wm, z)) / (2 * h);
            }
            // Hinge kinks and label flips make the derivative one-sided at isolated points.
            const bool kink = m.name.find("hinge") != std::string::npos && std::abs(std::abs(r(0)) - 1.0) < 1e-4;
            if (kink) continue;
            CHECK_MESSAGE((G - Gfd).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + G.cwiseAbs().maxCoeff()), m.name);
            if (!m.labels)
                CHECK_MESSAGE((H - Hfd).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + H.cwiseAbs().maxCoeff()), m.name);
        }
    }
}

TEST_CASE("gradient models: driver is the r-gradient of the scalar loss") {
    for (const LossModel& m : all_models()) {
        if (!m.is_gradient || !m.scalar_loss) continue;
        const int k = m.k;
        Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(k, -0.7, 0.9), w = Eigen::VectorXd::LinSpaced(k, 0.4, -0.3);
        const Eigen::VectorXd l = eval_time_dependent(m, 0.0, r, w, 0.2);
        for (int b = 0; b < k; ++b) {
            Eigen::VectorXd rp = r, rm = r;
            rp(b) += 1e-6;
            rm(b) -= 1e-6;
            const double fd = (m.scalar_loss(0.0, rp.data(), w.data(), 0.2) - m.scalar_loss(0.0, rm.data(), w.data(), 0.2)) / 2e-6;
            CHECK_MESSAGE(fd == doctest::Approx(l(b)).epsilon(1e-6), m.name);
        }
    }
}

TEST_CASE("|grad_r ell| stays below the declared Lipschitz constant") {
    Stream s(5, "lip");
    for (const LossModel& m : all_models()) {
        if (!std::isfinite(m.lipschitz_M)) continue;
        double worst = 0.0;
        for (int trial = 0; trial < 2000; ++trial) {
            Eigen::VectorXd r(m.k), w(m.k);
            for (int a = 0; a < m.k; ++a) {
                r(a) = 3.0 * s.normal(trial, a);
                w(a) = 3.0 * s.normal(trial, 10 + a);
            }
            const double z = s.normal(trial, 99);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(grad_r_matrix(m, 0.5, r, w, z));
            worst = std::max(worst, svd.singularValues()(0));
        }
        CHECK_MESSAGE(worst <= m.lipschitz_M * (1 + 1e-12), m.name);
    }
}

TEST_CASE("phase retrieval has no finite Lipschitz bound and ReLU is rejected") {
    CHECK(std::isinf(make_glm_loss(Link::PhaseRetrieval, BaseLoss::Square).lipschitz_M));
    CHECK_THROWS_AS(make_shallow_nn_loss(2, Activation::Relu, {1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(make_glm_loss(Link::Linear, BaseLoss::Logistic), ConfigError);
}

TEST_CASE("label probabilities sum to one and dprob is their w* derivative") {
    for (ScalarLaw noise : {ScalarLaw::logistic(0.0, 1.0), ScalarLaw::gaussian(0.1, 0.7)}) {
        LabelWeights lw = make_label_weights(noise);
        for (double ws : {-2.0, -0.3, 0.0, 1.1}) {
            CHECK(lw.prob(1.0, ws) + lw.prob(-1.0, ws) == doctest::Approx(1.0).epsilon(1e-14));
            for (double y : {-1.0, 1.0}) {
                const double fd = (lw.prob(y, ws + 1e-6) - lw.prob(y, ws - 1e-6)) / 2e-6;
                CHECK(lw.dprob(y, ws) == doctest::Approx(fd).epsilon(1e-6));
            }
        }
    }
    CHECK_THROWS_AS(make_label_weights(ScalarLaw::point_mass(0.0)), ConfigError);
}

TEST_CASE("scheduled loss interpolates then freezes at t = 1") {
    LossModel a = make_glm_loss(Link::Linear, BaseLoss::Square), z = make_zero_loss(1);
    LossModel s = make_scheduled_loss(a, z);
    CHECK(s.time_dependent);
    Eigen::VectorXd r = Eigen::VectorXd::Constant(1, 2.0), w = Eigen::VectorXd::Zero(1);
    CHECK(eval_time_dependent(s, 0.0, r, w, 0.0)(0) == doctest::Approx(2.0));
    CHECK(eval_time_dependent(s, 0.25, r, w, 0.0)(0) == doctest::Approx(1.5));
    CHECK(eval_time_dependent(s, 3.0, r, w, 0.0)(0) == doctest::Approx(0.0));
}

TEST_CASE("lambda paths") {
    LambdaPath c = make_constant_lambda(2, 0.3);
    CHECK(c.eval(5.0)(1, 1) == doctest::Approx(0.3));
    CHECK(c.bound_M == 0.0);
    CHECK(c.M_Lambda() == doctest::Approx(0.3));
    LambdaPath r = make_ramp_lambda(Eigen::MatrixXd::Identity(1, 1), 3.0 * Eigen::MatrixXd::Identity(1, 1));
    CHECK(r.eval(0.5)(0, 0) == doctest::Approx(2.0));
    CHECK(r.eval(4.0)(0, 0) == doctest::Approx(3.0));
    CHECK_FALSE(r.constant);
    CHECK(r.M_Lambda() == doctest::Approx(3.0));
}

TEST_CASE("model specs build the named models") {
    ModelSpec s;
    s.type = "shallow_nn";
    s.width = 2;
    s.alphas = {1.0, 0.5};
    CHECK(build_model(s).k == 2);
    s.type = "nonsense";
    CHECK_THROWS_AS(build_model(s), ConfigError);
}
