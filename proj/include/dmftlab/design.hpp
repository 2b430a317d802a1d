#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmftlab/rng.hpp"

namespace dmftlab {

enum class DistKind { Gaussian = 0, Rademacher = 1, UniformCentered = 2 };

DistKind parse_dist_kind(const std::string& name, const std::string& field = "design.dist");
std::string to_string(DistKind kind);

struct DesignMatrix {
    long n = 0;
    long d = 0;
    Eigen::MatrixXd entries;  // n x d, variance 1/d
    DistKind dist_kind = DistKind::Gaussian;
    std::uint64_t seed = 0;

    double delta() const { return double(n) / double(d); }
};

DesignMatrix sample_design(long n, long d, DistKind kind, std::uint64_t seed);

// Law of a row in R^dim. Point masses, finite mixtures, Gaussians, and
// independent products of two laws.
class VectorLaw {
public:
    enum class Kind { PointMass, Mixture, Gaussian, Product };

    static VectorLaw point_mass(Eigen::VectorXd value);
    static VectorLaw mixture(std::vector<Eigen::VectorXd> atoms, std::vector<double> weights);
    static VectorLaw gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);
    static VectorLaw product(const VectorLaw& a, const VectorLaw& b);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    // Number of counter slots consumed per draw.
    int slots() const;
    // Draw using indices [idx0, idx0 + slots()) of `sub` in `s`.
    void draw(const Stream& s, std::uint64_t sub, std::uint64_t idx0, double* out) const;
    Eigen::VectorXd mean() const;
    Eigen::MatrixXd second_moment() const;  // E[x x^T]

    const std::vector<Eigen::VectorXd>& atoms() const { return atoms_; }
    const std::vector<double>& weights() const { return weights_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    const Eigen::VectorXd& mean_vector() const { return mean_; }
    const VectorLaw& left() const { return *parts_[0]; }
    const VectorLaw& right() const { return *parts_[1]; }

private:
    Kind kind_ = Kind::PointMass;
    int dim_ = 0;
    std::vector<Eigen::VectorXd> atoms_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd root_;  // root_ * root_^T = cov_
    std::vector<std::shared_ptr<const VectorLaw>> parts_;
};

class ScalarLaw {
public:
    enum class Kind { PointMass, Mixture, Gaussian, Logistic };

    static ScalarLaw point_mass(double v);
    static ScalarLaw mixture(std::vector<double> atoms, std::vector<double> weights);
    static ScalarLaw gaussian(double mean, double sd);
    static ScalarLaw logistic(double loc, double scale);

    Kind kind() const { return kind_; }
    double draw(const Stream& s, std::uint64_t sub, std::uint64_t idx) const;
    double mean() const;
    double second_moment() const;
    double variance() const { return second_moment() - mean() * mean(); }
    // Nodes and weights summing to 1. Exact for point masses and mixtures;
    // Gauss-Hermite for Gaussians; quantile midpoints for the logistic law.
    void quadrature(int n_nodes, std::vector<double>& nodes, std::vector<double>& weights) const;

    double location() const { return a_; }
    double spread() const { return b_; }
    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    Kind kind_ = Kind::PointMass;
    double a_ = 0.0, b_ = 0.0;
    std::vector<double> atoms_, weights_, cumulative_;
};

struct PopulationSpec {
    VectorLaw init_law = VectorLaw::point_mass(Eigen::VectorXd::Zero(1));
    std::optional<VectorLaw> planted_law;  // joint law of (theta0, theta_star) in R^{2k}
    ScalarLaw noise_law = ScalarLaw::point_mass(0.0);

    bool planted() const { return planted_law.has_value(); }
    // Second moment of (theta0, theta_star) in R^{2k}; zero star blocks if unplanted.
    Eigen::MatrixXd joint_second_moment(int k) const;
    // Draw row values (theta0, theta_star) from slot range of `sub`.
    void draw_row(const Stream& s, std::uint64_t sub, int k, double* theta0, double* theta_star) const;
    void check_dimension(int k) const;
};

struct Population {
    Eigen::MatrixXd theta0;      // d x k
    Eigen::MatrixXd theta_star;  // d x k (zero when unplanted)
    Eigen::VectorXd z;           // n
};

Population sample_population(const PopulationSpec& spec, long d, long n, int k, std::uint64_t seed);

// Little-endian binary matrix dump: eight 64-bit header fields
// (magic, version, n, d, k, dist_kind, seed, checksum) then n*d*k doubles.
void write_matrix_binary(const std::string& path, const Eigen::MatrixXd& m, int k, std::uint64_t dist_kind,
                         std::uint64_t seed);
struct BinaryMatrix {
    Eigen::MatrixXd values;
    int k = 1;
    std::uint64_t dist_kind = 0;
    std::uint64_t seed = 0;
};
BinaryMatrix read_matrix_binary(const std::string& path);
void write_design_binary(const std::string& path, const DesignMatrix& X);
DesignMatrix read_design_binary(const std::string& path);

}  // namespace dmftlab
