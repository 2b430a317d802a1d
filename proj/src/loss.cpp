#include "dmftlab/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmftlab/errors.hpp"

namespace dmftlab {

namespace {

// rho(t) = log(1 + e^t) and its derivatives, overflow-safe.
double rho(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double rho1(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}
double rho2(double t) {
    double s = rho1(t);
    return s * (1.0 - s);
}

double label_of(double wstar, double z) { return wstar + z >= 0.0 ? 1.0 : -1.0; }

struct Act {
    double (*f)(double);
    double (*f1)(double);
    double (*f2)(double);
    double sup_f1;
    double sup_f2;
};

double tanh1(double x) {
    double c = std::tanh(x);
    return 1.0 - c * c;
}
double tanh2(double x) {
    double c = std::tanh(x);
    return -2.0 * c * (1.0 - c * c);
}

Act activation_table(Activation a) {
    switch (a) {
        case Activation::Tanh: return {[](double x) { return std::tanh(x); }, tanh1, tanh2, 1.0, 4.0 / (3.0 * std::sqrt(3.0))};
        case Activation::SoftPlus: return {rho, rho1, rho2, 1.0, 0.25};
        case Activation::Relu: break;
    }
    throw ConfigError("model.activation", "activation 'relu' does not have a Lipschitz derivative");
}

}  // namespace

double LabelWeights::prob(double y, double wstar) const {
    const double x = y * (wstar + noise.location());
    if (noise.kind() == ScalarLaw::Kind::Logistic) return rho1(x / noise.spread());
    return 0.5 * std::erfc(-x / (noise.spread() * std::numbers::sqrt2));
}

double LabelWeights::dprob(double y, double wstar) const {
    const double x = y * (wstar + noise.location());
    const double s = noise.spread();
    if (noise.kind() == ScalarLaw::Kind::Logistic) return y * rho2(x / s) / s;
    const double u = x / s;
    return y * std::exp(-0.5 * u * u) / (s * std::sqrt(2.0 * std::numbers::pi));
}

LabelWeights make_label_weights(const ScalarLaw& noise) {
    const bool smooth = noise.kind() == ScalarLaw::Kind::Logistic ||
                        (noise.kind() == ScalarLaw::Kind::Gaussian && noise.spread() > 0.0);
    if (!smooth)
        throw ConfigError("population.noise",
                          "label models need a logistic or non-degenerate Gaussian noise law for conditioning on y");
    return LabelWeights{noise};
}

Link parse_link(const std::string& s) {
    if (s == "linear") return Link::Linear;
    if (s == "logistic") return Link::Logistic;
    if (s == "phase_retrieval") return Link::PhaseRetrieval;
    throw ConfigError("model.link", "unknown link '" + s + "'");
}

BaseLoss parse_base_loss(const std::string& s) {
    if (s == "square") return BaseLoss::Square;
    if (s == "logistic") return BaseLoss::Logistic;
    if (s == "hinge_sq") return BaseLoss::HingeSq;
    throw ConfigError("model.loss", "unknown base loss '" + s + "'");
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::SoftPlus;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("model.activation", "unknown activation '" + s + "'");
}

std::string to_string(Link v) {
    switch (v) {
        case Link::Linear: return "linear";
        case Link::Logistic: return "logistic";
        case Link::PhaseRetrieval: return "phase_retrieval";
    }
    return "?";
}

std::string to_string(BaseLoss v) {
    switch (v) {
        case BaseLoss::Square: return "square";
        case BaseLoss::Logistic: return "logistic";
        case BaseLoss::HingeSq: return "hinge_sq";
    }
    return "?";
}

std::string to_string(Activation v) {
    switch (v) {
        case Activation::Tanh: return "tanh";
        case Activation::SoftPlus: return "softplus";
        case Activation::Relu: return "relu";
    }
    return "?";
}

LossModel make_glm_loss(Link link, BaseLoss base, double clamp_radius) {
    LossModel m;
    m.k = 1;
    m.is_gradient = true;
    m.name = to_string(link) + "+" + to_string(base);

    if (link == Link::Linear && base == BaseLoss::Square) {
        m.eval = [](double, const double* r, const double* w, double z, double* o) { o[0] = r[0] - w[0] - z; };
        m.grad_r = [](double, const double*, const double*, double, double* o) { o[0] = 1.0; };
        m.grad_wstar = [](double, const double*, const double*, double, double* o) { o[0] = -1.0; };
        m.scalar_loss = [](double, const double* r, const double* w, double z) {
            double e = r[0] - w[0] - z;
            return 0.5 * e * e;
        };
        m.lipschitz_M = 1.0;
        return m;
    }

    if (link == Link::PhaseRetrieval && base == BaseLoss::Square) {
        if (!(clamp_radius > 0.0)) throw ConfigError("model.clamp_radius", "clamp radius must be positive");
        const double R = clamp_radius;
        m.eval = [R](double, const double* r, const double* w, double z, double* o) {
            double rc = std::clamp(r[0], -R, R);
            o[0] = 4.0 * rc * (rc * rc - (w[0] * w[0] + z));
        };
        m.grad_r = [R](double, const double* r, const double* w, double z, double* o) {
            o[0] = std::abs(r[0]) < R ? 12.0 * r[0] * r[0] - 4.0 * (w[0] * w[0] + z) : 0.0;
        };
        m.grad_wstar = [R](double, const double* r, const double* w, double, double* o) {
            o[0] = -8.0 * std::clamp(r[0], -R, R) * w[0];
        };
        m.scalar_loss = [R](double, const double* r, const double* w, double z) {
            double rc = std::clamp(r[0], -R, R);
            double e = rc * rc - (w[0] * w[0] + z);
            // linear continuation past the clamp keeps eval = d/dr of the loss
            return e * e + (r[0] - rc) * 4.0 * rc * e;
        };
        m.lipschitz_M = std::numeric_limits<double>::infinity();
        return m;
    }

    if (link != Link::Logistic)
        throw ConfigError("model", "incompatible link/loss pair " + to_string(link) + "+" + to_string(base));

    auto ch = std::make_shared<LabelChannel>();
    std::function<double(double, double)> L0;
    switch (base) {
        case BaseLoss::Square:
            ch->eval = [](double, const double* r, double y, double* o) { o[0] = r[0] - y; };
            ch->grad_r = [](double, const double*, double, double* o) { o[0] = 1.0; };
            L0 = [](double r, double y) { return 0.5 * (r - y) * (r - y); };
            m.lipschitz_M = 1.0;
            break;
        case BaseLoss::Logistic:
            ch->eval = [](double, const double* r, double y, double* o) { o[0] = -y * rho1(-y * r[0]); };
            ch->grad_r = [](double, const double* r, double y, double* o) { o[0] = rho2(-y * r[0]); };
            L0 = [](double r, double y) { return rho(-y * r); };
            m.lipschitz_M = 0.25;
            break;
        case BaseLoss::HingeSq:
            ch->eval = [](double, const double* r, double y, double* o) { o[0] = -2.0 * y * std::max(0.0, 1.0 - y * r[0]); };
            ch->grad_r = [](double, const double* r, double y, double* o) { o[0] = y * r[0] < 1.0 ? 2.0 : 0.0; };
            L0 = [](double r, double y) {
                double h = std::max(0.0, 1.0 - y * r);
                return h * h;
            };
            m.lipschitz_M = 2.0;
            break;
    }
    m.labels = ch;
    m.eval = [ch](double t, const double* r, const double* w, double z, double* o) { ch->eval(t, r, label_of(w[0], z), o); };
    m.grad_r = [ch](double t, const double* r, const double* w, double z, double* o) {
        ch->grad_r(t, r, label_of(w[0], z), o);
    };
    m.grad_wstar = [](double, const double*, const double*, double, double* o) { o[0] = 0.0; };
    m.scalar_loss = [L0](double, const double* r, const double* w, double z) { return L0(r[0], label_of(w[0], z)); };
    return m;
}

LossModel make_shallow_nn_loss(int width, Activation activation, const std::vector<double>& alphas) {
    if (width < 1) throw ConfigError("model.width", "width must be at least 1");
    if (int(alphas.size()) != width) throw ConfigError("model.alphas", "need exactly `width` output weights");
    const Act act = activation_table(activation);
    const int k = width;
    const std::vector<double> al = alphas;

    LossModel m;
    m.name = "shallow_nn_" + to_string(activation);
    m.k = k;
    m.is_gradient = true;
    auto residual = [act, al, k](const double* r, const double* w, double z) {
        double e = -z;
        for (int b = 0; b < k; ++b) e += al[b] * (act.f(r[b]) - act.f(w[b]));
        return e;
    };
    m.eval = [act, al, k, residual](double, const double* r, const double* w, double z, double* o) {
        double e = residual(r, w, z);
        for (int a = 0; a < k; ++a) o[a] = e * al[a] * act.f1(r[a]);
    };
    m.grad_r = [act, al, k, residual](double, const double* r, const double* w, double z, double* o) {
        double e = residual(r, w, z);
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                o[a * k + b] = al[a] * act.f1(r[a]) * al[b] * act.f1(r[b]) + (a == b ? e * al[a] * act.f2(r[a]) : 0.0);
    };
    m.grad_wstar = [act, al, k](double, const double* r, const double* w, double, double* o) {
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) o[a * k + b] = -al[a] * act.f1(r[a]) * al[b] * act.f1(w[b]);
    };
    m.scalar_loss = [residual](double, const double* r, const double* w, double z) {
        double e = residual(r, w, z);
        return 0.5 * e * e;
    };

    double l1 = 0.0, l2sq = 0.0, amax = 0.0;
    for (double a : al) {
        l1 += std::abs(a);
        l2sq += a * a;
        amax = std::max(amax, std::abs(a));
    }
    const double zcap = 6.0, rcap = 6.0;
    double fmax = activation == Activation::Tanh ? 1.0 : rho(rcap);
    double emax = 2.0 * l1 * fmax + zcap;
    m.lipschitz_M = l2sq * act.sup_f1 * act.sup_f1 + emax * amax * act.sup_f2;
    return m;
}

LossModel make_zero_loss(int k) {
    if (k < 1) throw ConfigError("model.k", "k must be at least 1");
    LossModel m;
    m.name = "zero";
    m.k = k;
    m.is_gradient = true;
    m.eval = [k](double, const double*, const double*, double, double* o) { std::fill(o, o + k, 0.0); };
    m.grad_r = [k](double, const double*, const double*, double, double* o) { std::fill(o, o + k * k, 0.0); };
    m.grad_wstar = m.grad_r;
    m.scalar_loss = [](double, const double*, const double*, double) { return 0.0; };
    m.lipschitz_M = 0.0;
    return m;
}

LossModel make_scheduled_loss(const LossModel& ell0, const LossModel& ell1) {
    if (ell0.k != ell1.k) throw ConfigError("model.schedule", "scheduled endpoints differ in k");
    const int k = ell0.k;
    auto s_of = [](double t) { return std::clamp(t, 0.0, 1.0); };
    auto mix = [k, s_of](const DriverFn& f0, const DriverFn& f1, int len) {
        return DriverFn([=](double t, const double* r, const double* w, double z, double* o) {
            std::vector<double> a(len), b(len);
            f0(t, r, w, z, a.data());
            f1(t, r, w, z, b.data());
            double s = s_of(t);
            for (int i = 0; i < len; ++i) o[i] = (1.0 - s) * a[i] + s * b[i];
        });
    };
    LossModel m;
    m.name = "scheduled(" + ell0.name + "," + ell1.name + ")";
    m.k = k;
    m.eval = mix(ell0.eval, ell1.eval, k);
    m.grad_r = mix(ell0.grad_r, ell1.grad_r, k * k);
    m.grad_wstar = mix(ell0.grad_wstar, ell1.grad_wstar, k * k);
    m.time_dependent = true;
    m.is_gradient = ell0.is_gradient && ell1.is_gradient;
    if (m.is_gradient) {
        auto L0 = ell0.scalar_loss, L1 = ell1.scalar_loss;
        m.scalar_loss = [L0, L1, s_of](double t, const double* r, const double* w, double z) {
            double s = s_of(t);
            return (1.0 - s) * L0(t, r, w, z) + s * L1(t, r, w, z);
        };
    }
    m.lipschitz_M = std::max(ell0.lipschitz_M, ell1.lipschitz_M);
    if (ell0.labels && ell1.labels) {
        auto c0 = ell0.labels, c1 = ell1.labels;
        auto ch = std::make_shared<LabelChannel>();
        ch->eval = [c0, c1, s_of](double t, const double* r, double y, double* o) {
            double a, b;
            c0->eval(t, r, y, &a);
            c1->eval(t, r, y, &b);
            double s = s_of(t);
            o[0] = (1.0 - s) * a + s * b;
        };
        ch->grad_r = [c0, c1, s_of](double t, const double* r, double y, double* o) {
            double a, b;
            c0->grad_r(t, r, y, &a);
            c1->grad_r(t, r, y, &b);
            double s = s_of(t);
            o[0] = (1.0 - s) * a + s * b;
        };
        m.labels = ch;
    } else if (ell0.labels || ell1.labels) {
        throw ConfigError("model.schedule", "cannot schedule a label model with a non-label model");
    }
    return m;
}

Eigen::VectorXd eval_time_dependent(const LossModel& model, double t, const Eigen::VectorXd& r,
                                    const Eigen::VectorXd& wstar, double z) {
    Eigen::VectorXd out(model.k);
    model.eval(t, r.data(), wstar.data(), z, out.data());
    return out;
}

namespace {
Eigen::MatrixXd jac(const DriverFn& f, int k, double t, const Eigen::VectorXd& r, const Eigen::VectorXd& w, double z) {
    std::vector<double> buf(k * k);
    f(t, r.data(), w.data(), z, buf.data());
    Eigen::MatrixXd J(k, k);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) J(a, b) = buf[a * k + b];
    return J;
}
}  // namespace

Eigen::MatrixXd grad_r_matrix(const LossModel& model, double t, const Eigen::VectorXd& r,
                              const Eigen::VectorXd& wstar, double z) {
    return jac(model.grad_r, model.k, t, r, wstar, z);
}

Eigen::MatrixXd grad_wstar_matrix(const LossModel& model, double t, const Eigen::VectorXd& r,
                                  const Eigen::VectorXd& wstar, double z) {
    return jac(model.grad_wstar, model.k, t, r, wstar, z);
}

LambdaPath make_constant_lambda(int k, double lambda) {
    return make_constant_lambda(Eigen::MatrixXd(lambda * Eigen::MatrixXd::Identity(k, k)));
}

LambdaPath make_constant_lambda(const Eigen::MatrixXd& lambda) {
    if (lambda.rows() != lambda.cols()) throw ConfigError("lambda", "regularization matrix must be square");
    if ((lambda - lambda.transpose()).cwiseAbs().maxCoeff() > 0.0)
        throw ConfigError("lambda", "regularization matrix must be symmetric");
    LambdaPath L;
    L.k = int(lambda.rows());
    L.eval = [lambda](double) { return lambda; };
    L.bound_M = 0.0;
    L.sup_norm = lambda.size() ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lambda).eigenvalues().cwiseAbs().maxCoeff() : 0.0;
    L.constant = true;
    return L;
}

LambdaPath make_ramp_lambda(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ConfigError("lambda", "ramp endpoints differ in shape");
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 0.0 || (B - B.transpose()).cwiseAbs().maxCoeff() > 0.0)
        throw ConfigError("lambda", "regularization matrices must be symmetric");
    LambdaPath L;
    L.k = int(A.rows());
    L.eval = [A, B](double t) {
        double s = std::clamp(t, 0.0, 1.0);
        return Eigen::MatrixXd((1.0 - s) * A + s * B);
    };
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B - A);
    L.bound_M = es.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A), eb(B);
    // ||(1-s)A + sB|| <= max(||A||, ||B||) by convexity of the norm
    L.sup_norm = std::max(ea.eigenvalues().cwiseAbs().maxCoeff(), eb.eigenvalues().cwiseAbs().maxCoeff());
    L.constant = L.bound_M == 0.0;
    return L;
}

LossModel build_model(const ModelSpec& spec) {
    if (spec.type == "glm") return make_glm_loss(parse_link(spec.link), parse_base_loss(spec.loss), spec.clamp_radius);
    if (spec.type == "shallow_nn") {
        if (spec.loss != "square") throw ConfigError("model.loss", "shallow networks support the square loss only");
        return make_shallow_nn_loss(spec.width, parse_activation(spec.activation), spec.alphas);
    }
    if (spec.type == "zero") return make_zero_loss(spec.width);
    throw ConfigError("model.type", "unknown model type '" + spec.type + "'");
}

}  // namespace dmftlab
