#include "dmftlab/design.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "dmftlab/errors.hpp"
#include "dmftlab/quadrature.hpp"

static_assert(std::endian::native == std::endian::little, "binary dumps assume a little-endian host");

namespace dmftlab {

DistKind parse_dist_kind(const std::string& name, const std::string& field) {
    if (name == "gaussian" || name == "Gaussian") return DistKind::Gaussian;
    if (name == "rademacher" || name == "Rademacher") return DistKind::Rademacher;
    if (name == "uniform" || name == "uniform_centered" || name == "UniformCentered") return DistKind::UniformCentered;
    throw ConfigError(field, "unknown design distribution '" + name + "'");
}

std::string to_string(DistKind kind) {
    switch (kind) {
        case DistKind::Gaussian: return "gaussian";
        case DistKind::Rademacher: return "rademacher";
        case DistKind::UniformCentered: return "uniform_centered";
    }
    return "?";
}

DesignMatrix sample_design(long n, long d, DistKind kind, std::uint64_t seed) {
    if (n < 1 || d < 1) throw ConfigError("dims", "design needs n >= 1 and d >= 1");
    if (int(kind) < 0 || int(kind) > 2) throw ConfigError("design.dist", "unknown design distribution");
    DesignMatrix X;
    X.n = n;
    X.d = d;
    X.dist_kind = kind;
    X.seed = seed;
    X.entries.resize(n, d);
    const Stream s(seed, "design");
    const double scale = 1.0 / std::sqrt(double(d));
    const double half_width = std::sqrt(3.0);
    for (long j = 0; j < d; ++j) {
        for (long i = 0; i < n; ++i) {
            double v = 0.0;
            switch (kind) {
                case DistKind::Gaussian: v = s.normal(std::uint64_t(i), std::uint64_t(j)); break;
                case DistKind::Rademacher: v = (s.bits(std::uint64_t(i), std::uint64_t(j)) >> 63) ? 1.0 : -1.0; break;
                case DistKind::UniformCentered:
                    v = half_width * (2.0 * s.uniform(std::uint64_t(i), std::uint64_t(j)) - 1.0);
                    break;
            }
            X.entries(i, j) = v * scale;
        }
    }
    return X;
}

// ---------------------------------------------------------------- VectorLaw

namespace {

Eigen::MatrixXd psd_root(const Eigen::MatrixXd& cov, const std::string& field) {
    if (cov.rows() != cov.cols()) throw ConfigError(field, "covariance must be square");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()))
        throw ConfigError(field, "covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd ev = es.eigenvalues();
    double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-12 * scale) throw ConfigError(field, "covariance is not positive semidefinite");
    return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

std::vector<double> normalized_cumulative(std::vector<double>& w, const std::string& field) {
    if (w.empty()) throw ConfigError(field, "mixture needs at least one atom");
    double total = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "mixture weights must be nonnegative");
        total += v;
    }
    if (!(total > 0.0)) throw ConfigError(field, "mixture weights sum to zero");
    std::vector<double> c(w.size());
    double run = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] /= total;
        run += w[i];
        c[i] = run;
    }
    c.back() = 1.0;
    return c;
}

std::size_t pick(const std::vector<double>& cumulative, double u) {
    std::size_t i = 0;
    while (i + 1 < cumulative.size() && u > cumulative[i]) ++i;
    return i;
}

}  // namespace

VectorLaw VectorLaw::point_mass(Eigen::VectorXd value) {
    VectorLaw L;
    L.kind_ = Kind::PointMass;
    L.dim_ = int(value.size());
    L.mean_ = std::move(value);
    return L;
}

VectorLaw VectorLaw::mixture(std::vector<Eigen::VectorXd> atoms, std::vector<double> weights) {
    if (atoms.size() != weights.size()) throw ConfigError("population", "mixture atoms and weights differ in length");
    VectorLaw L;
    L.kind_ = Kind::Mixture;
    L.cumulative_ = normalized_cumulative(weights, "population");
    L.dim_ = int(atoms.front().size());
    for (const auto& a : atoms)
        if (a.size() != L.dim_) throw ConfigError("population", "mixture atoms differ in dimension");
    L.atoms_ = std::move(atoms);
    L.weights_ = std::move(weights);
    return L;
}

VectorLaw VectorLaw::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    if (cov.rows() != mean.size()) throw ConfigError("population", "gaussian mean and covariance differ in dimension");
    VectorLaw L;
    L.kind_ = Kind::Gaussian;
    L.dim_ = int(mean.size());
    L.root_ = psd_root(cov, "population");
    L.mean_ = std::move(mean);
    L.cov_ = std::move(cov);
    return L;
}

VectorLaw VectorLaw::product(const VectorLaw& a, const VectorLaw& b) {
    VectorLaw L;
    L.kind_ = Kind::Product;
    L.dim_ = a.dim() + b.dim();
    L.parts_ = {std::make_shared<const VectorLaw>(a), std::make_shared<const VectorLaw>(b)};
    return L;
}

int VectorLaw::slots() const {
    switch (kind_) {
        case Kind::PointMass: return 0;
        case Kind::Mixture: return 1;
        case Kind::Gaussian: return dim_;
        case Kind::Product: return parts_[0]->slots() + parts_[1]->slots();
    }
    return 0;
}

void VectorLaw::draw(const Stream& s, std::uint64_t sub, std::uint64_t idx0, double* out) const {
    switch (kind_) {
        case Kind::PointMass:
            for (int a = 0; a < dim_; ++a) out[a] = mean_(a);
            return;
        case Kind::Mixture: {
            const auto& atom = atoms_[pick(cumulative_, s.uniform(sub, idx0))];
            for (int a = 0; a < dim_; ++a) out[a] = atom(a);
            return;
        }
        case Kind::Gaussian: {
            double xi[64];
            std::vector<double> big;
            double* g = xi;
            if (dim_ > 64) {
                big.resize(dim_);
                g = big.data();
            }
            for (int a = 0; a < dim_; ++a) g[a] = s.normal(sub, idx0 + a);
            for (int a = 0; a < dim_; ++a) {
                double v = mean_(a);
                for (int b = 0; b < dim_; ++b) v += root_(a, b) * g[b];
                out[a] = v;
            }
            return;
        }
        case Kind::Product:
            parts_[0]->draw(s, sub, idx0, out);
            parts_[1]->draw(s, sub, idx0 + parts_[0]->slots(), out + parts_[0]->dim());
            return;
    }
}

Eigen::VectorXd VectorLaw::mean() const {
    switch (kind_) {
        case Kind::PointMass:
        case Kind::Gaussian: return mean_;
        case Kind::Mixture: {
            Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
            for (std::size_t i = 0; i < atoms_.size(); ++i) m += weights_[i] * atoms_[i];
            return m;
        }
        case Kind::Product: {
            Eigen::VectorXd m(dim_);
            m << parts_[0]->mean(), parts_[1]->mean();
            return m;
        }
    }
    return {};
}

Eigen::MatrixXd VectorLaw::second_moment() const {
    switch (kind_) {
        case Kind::PointMass: return mean_ * mean_.transpose();
        case Kind::Gaussian: return cov_ + mean_ * mean_.transpose();
        case Kind::Mixture: {
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
            for (std::size_t i = 0; i < atoms_.size(); ++i) m += weights_[i] * atoms_[i] * atoms_[i].transpose();
            return m;
        }
        case Kind::Product: {
            const int p = parts_[0]->dim();
            Eigen::MatrixXd m(dim_, dim_);
            m.topLeftCorner(p, p) = parts_[0]->second_moment();
            m.bottomRightCorner(dim_ - p, dim_ - p) = parts_[1]->second_moment();
            m.topRightCorner(p, dim_ - p) = parts_[0]->mean() * parts_[1]->mean().transpose();
            m.bottomLeftCorner(dim_ - p, p) = m.topRightCorner(p, dim_ - p).transpose();
            return m;
        }
    }
    return {};
}

// ---------------------------------------------------------------- ScalarLaw

ScalarLaw ScalarLaw::point_mass(double v) {
    ScalarLaw L;
    L.kind_ = Kind::PointMass;
    L.a_ = v;
    return L;
}

ScalarLaw ScalarLaw::mixture(std::vector<double> atoms, std::vector<double> weights) {
    if (atoms.size() != weights.size()) throw ConfigError("population.noise", "mixture atoms and weights differ in length");
    ScalarLaw L;
    L.kind_ = Kind::Mixture;
    L.cumulative_ = normalized_cumulative(weights, "population.noise");
    L.atoms_ = std::move(atoms);
    L.weights_ = std::move(weights);
    return L;
}

ScalarLaw ScalarLaw::gaussian(double mean, double sd) {
    if (!(sd >= 0.0)) throw ConfigError("population.noise.sd", "standard deviation must be nonnegative");
    ScalarLaw L;
    L.kind_ = Kind::Gaussian;
    L.a_ = mean;
    L.b_ = sd;
    return L;
}

ScalarLaw ScalarLaw::logistic(double loc, double scale) {
    if (!(scale > 0.0)) throw ConfigError("population.noise.scale", "scale must be positive");
    ScalarLaw L;
    L.kind_ = Kind::Logistic;
    L.a_ = loc;
    L.b_ = scale;
    return L;
}

double ScalarLaw::draw(const Stream& s, std::uint64_t sub, std::uint64_t idx) const {
    switch (kind_) {
        case Kind::PointMass: return a_;
        case Kind::Mixture: return atoms_[pick(cumulative_, s.uniform(sub, idx))];
        case Kind::Gaussian: return a_ + b_ * s.normal(sub, idx);
        case Kind::Logistic: {
            double u = s.uniform(sub, idx);
            return a_ + b_ * std::log(u / (1.0 - u));
        }
    }
    return 0.0;
}

double ScalarLaw::mean() const {
    if (kind_ == Kind::Mixture) {
        double m = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) m += weights_[i] * atoms_[i];
        return m;
    }
    return a_;
}

double ScalarLaw::second_moment() const {
    switch (kind_) {
        case Kind::PointMass: return a_ * a_;
        case Kind::Mixture: {
            double m = 0.0;
            for (std::size_t i = 0; i < atoms_.size(); ++i) m += weights_[i] * atoms_[i] * atoms_[i];
            return m;
        }
        case Kind::Gaussian: return a_ * a_ + b_ * b_;
        case Kind::Logistic: return a_ * a_ + b_ * b_ * std::numbers::pi * std::numbers::pi / 3.0;
    }
    return 0.0;
}

void ScalarLaw::quadrature(int n_nodes, std::vector<double>& nodes, std::vector<double>& weights) const {
    nodes.clear();
    weights.clear();
    switch (kind_) {
        case Kind::PointMass:
            nodes = {a_};
            weights = {1.0};
            return;
        case Kind::Mixture:
            nodes = atoms_;
            weights = weights_;
            return;
        case Kind::Gaussian:
            if (b_ == 0.0) {
                nodes = {a_};
                weights = {1.0};
                return;
            }
            gauss_hermite_normal(n_nodes, nodes, weights);
            for (double& x : nodes) x = a_ + b_ * x;
            return;
        case Kind::Logistic:
            for (int q = 0; q < n_nodes; ++q) {
                double p = (q + 0.5) / n_nodes;
                nodes.push_back(a_ + b_ * std::log(p / (1.0 - p)));
                weights.push_back(1.0 / n_nodes);
            }
            return;
    }
}

// ---------------------------------------------------------------- population

void PopulationSpec::check_dimension(int k) const {
    if (planted_law) {
        if (planted_law->dim() != 2 * k)
            throw ConfigError("population.planted", "planted law has dimension " + std::to_string(planted_law->dim()) +
                                                        ", expected 2k = " + std::to_string(2 * k));
    } else if (init_law.dim() != k) {
        throw ConfigError("population.init", "init law has dimension " + std::to_string(init_law.dim()) +
                                                 ", expected k = " + std::to_string(k));
    }
}

Eigen::MatrixXd PopulationSpec::joint_second_moment(int k) const {
    check_dimension(k);
    if (planted_law) return planted_law->second_moment();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    m.topLeftCorner(k, k) = init_law.second_moment();
    return m;
}

void PopulationSpec::draw_row(const Stream& s, std::uint64_t sub, int k, double* theta0, double* theta_star) const {
    if (planted_law) {
        double buf[128];
        std::vector<double> big;
        double* row = buf;
        if (2 * k > 128) {
            big.resize(2 * k);
            row = big.data();
        }
        planted_law->draw(s, sub, 0, row);
        for (int a = 0; a < k; ++a) {
            theta0[a] = row[a];
            theta_star[a] = row[k + a];
        }
    } else {
        init_law.draw(s, sub, 0, theta0);
        for (int a = 0; a < k; ++a) theta_star[a] = 0.0;
    }
}

Population sample_population(const PopulationSpec& spec, long d, long n, int k, std::uint64_t seed) {
    spec.check_dimension(k);
    Population P;
    P.theta0.resize(d, k);
    P.theta_star.resize(d, k);
    P.z.resize(n);
    const Stream base(seed, "population");
    const Stream rows = base.child("theta");
    const Stream noise = base.child("noise");
    std::vector<double> t0(k), ts(k);
    for (long i = 0; i < d; ++i) {
        spec.draw_row(rows, std::uint64_t(i), k, t0.data(), ts.data());
        for (int a = 0; a < k; ++a) {
            P.theta0(i, a) = t0[a];
            P.theta_star(i, a) = ts[a];
        }
    }
    for (long i = 0; i < n; ++i) P.z(i) = spec.noise_law.draw(noise, std::uint64_t(i), 0);
    return P;
}

// ---------------------------------------------------------------- binary io

namespace {

constexpr std::uint64_t kMagic = 0x3142414C54464D44ull;  // "DMFTLAB1" little-endian
constexpr std::uint64_t kVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

void write_matrix_binary(const std::string& path, const Eigen::MatrixXd& m, int k, std::uint64_t dist_kind,
                         std::uint64_t seed) {
    if (k < 1 || m.cols() % k != 0) throw std::invalid_argument("write_matrix_binary: columns not a multiple of k");
    const std::uint64_t n = m.rows(), d = m.cols() / k;
    std::vector<double> payload(std::size_t(n * d * k));
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::uint64_t j = 0; j < d * k; ++j) payload[i * d * k + j] = m(long(i), long(j));
    std::uint64_t header[8] = {kMagic, kVersion, n, d, std::uint64_t(k), dist_kind, seed,
                               fnv1a(payload.data(), payload.size() * sizeof(double))};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for " + path);
}

BinaryMatrix read_matrix_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint64_t header[8];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || header[0] != kMagic) throw std::runtime_error(path + ": bad magic");
    if (header[1] != kVersion) throw std::runtime_error(path + ": unsupported version");
    const std::uint64_t n = header[2], d = header[3], k = header[4];
    std::vector<double> payload(std::size_t(n * d * k));
    in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated payload");
    if (fnv1a(payload.data(), payload.size() * sizeof(double)) != header[7])
        throw std::runtime_error(path + ": checksum mismatch");
    BinaryMatrix B;
    B.k = int(k);
    B.dist_kind = header[5];
    B.seed = header[6];
    B.values.resize(long(n), long(d * k));
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::uint64_t j = 0; j < d * k; ++j) B.values(long(i), long(j)) = payload[i * d * k + j];
    return B;
}

void write_design_binary(const std::string& path, const DesignMatrix& X) {
    write_matrix_binary(path, X.entries, 1, std::uint64_t(X.dist_kind), X.seed);
}

DesignMatrix read_design_binary(const std::string& path) {
    BinaryMatrix B = read_matrix_binary(path);
    if (B.dist_kind > 2) throw ConfigError("design.dist", "unknown design distribution in " + path);
    DesignMatrix X;
    X.n = B.values.rows();
    X.d = B.values.cols();
    X.dist_kind = DistKind(B.dist_kind);
    X.seed = B.seed;
    X.entries = std::move(B.values);
    return X;
}

}  // namespace dmftlab
