#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmftlab/design.hpp"

namespace dmftlab {

// Raw-pointer callbacks keep the per-path inner loops free of allocations.
// Jacobians are row-major k x k: out[a*k + b] = d ell_a / d x_b.
using DriverFn = std::function<void(double t, const double* r, const double* wstar, double z, double* out)>;
using ScalarFn = std::function<double(double t, const double* r, const double* wstar, double z)>;

// For models whose data enter only through a label y = sign(w* + z) in {-1, +1}.
// Expectations over z are taken by conditioning on y, see LabelWeights.
struct LabelChannel {
    std::function<void(double t, const double* r, double y, double* out)> eval;
    std::function<void(double t, const double* r, double y, double* out)> grad_r;
};

struct LossModel {
    std::string name;
    int k = 1;
    DriverFn eval;
    DriverFn grad_r;
    DriverFn grad_wstar;
    ScalarFn scalar_loss;  // empty when not a gradient model
    double lipschitz_M = 0.0;
    bool time_dependent = false;
    bool is_gradient = false;
    std::shared_ptr<const LabelChannel> labels;
};

// P(y | w*) and its derivative in w* for a sign label with the given noise law.
// Available for logistic and Gaussian noise.
struct LabelWeights {
    ScalarLaw noise;
    double prob(double y, double wstar) const;
    double dprob(double y, double wstar) const;
};
LabelWeights make_label_weights(const ScalarLaw& noise);

enum class Link { Linear, Logistic, PhaseRetrieval };
enum class BaseLoss { Square, Logistic, HingeSq };
enum class Activation { Tanh, SoftPlus, Relu };

Link parse_link(const std::string& s);
BaseLoss parse_base_loss(const std::string& s);
Activation parse_activation(const std::string& s);
std::string to_string(Link v);
std::string to_string(BaseLoss v);
std::string to_string(Activation v);

// Phase retrieval uses L0 = (r^2 - y)^2 with |r| clamped at `clamp_radius`.
LossModel make_glm_loss(Link link, BaseLoss base, double clamp_radius = 1e6);

// Two-layer network y_hat = sum_b alpha_b sigma(r_b), teacher y = sum_b alpha_b sigma(w*_b) + z,
// square loss. The Lipschitz bound assumes |z| <= 6 and, for SoftPlus, |r_b|, |w*_b| <= 6.
LossModel make_shallow_nn_loss(int width, Activation activation, const std::vector<double>& alphas);

LossModel make_zero_loss(int k);

// ell_t = (1 - min(t,1)) ell0 + min(t,1) ell1.
LossModel make_scheduled_loss(const LossModel& ell0, const LossModel& ell1);

Eigen::VectorXd eval_time_dependent(const LossModel& model, double t, const Eigen::VectorXd& r,
                                    const Eigen::VectorXd& wstar, double z);
Eigen::MatrixXd grad_r_matrix(const LossModel& model, double t, const Eigen::VectorXd& r,
                              const Eigen::VectorXd& wstar, double z);
Eigen::MatrixXd grad_wstar_matrix(const LossModel& model, double t, const Eigen::VectorXd& r,
                                  const Eigen::VectorXd& wstar, double z);

struct LambdaPath {
    int k = 1;
    std::function<Eigen::MatrixXd(double t)> eval;
    double bound_M = 0.0;   // Lipschitz constant in t
    double sup_norm = 0.0;  // sup_t ||Lambda^t||
    bool constant = true;

    // One constant bounding both the norm and the time variation.
    double M_Lambda() const { return std::max(bound_M, sup_norm); }
};

LambdaPath make_constant_lambda(int k, double lambda);
LambdaPath make_constant_lambda(const Eigen::MatrixXd& lambda);
// Linear interpolation from A at t=0 to B at t=1, constant afterwards.
LambdaPath make_ramp_lambda(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// Declarative model description, round-trips through the experiment config.
struct ModelSpec {
    std::string type = "glm";  // glm | shallow_nn | zero
    std::string link = "linear";
    std::string loss = "square";
    int width = 1;
    std::string activation = "tanh";
    std::vector<double> alphas;
    double clamp_radius = 1e6;

    bool operator==(const ModelSpec&) const = default;
};

LossModel build_model(const ModelSpec& spec);

}  // namespace dmftlab
