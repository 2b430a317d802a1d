#include "dmftlab/kernel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dmftlab/errors.hpp"
#include "dmftlab/rng.hpp"

namespace dmftlab {

namespace {
std::vector<int> all_knots(const TimeGrid& g) {
    std::vector<int> v(g.size());
    for (int i = 0; i < g.size(); ++i) v[i] = i;
    return v;
}
}  // namespace

BlockKernel::BlockKernel(const TimeGrid& g, int k_, bool with_star) : BlockKernel(g, all_knots(g), k_, with_star) {}

BlockKernel::BlockKernel(const TimeGrid& g, std::vector<int> kn, int k_, bool with_star)
    : grid(g), knots(std::move(kn)), k(k_), has_star(with_star) {
    blocks.assign(knots.size() * knots.size(), Eigen::MatrixXd::Zero(k, k));
    if (has_star) {
        star.assign(knots.size(), Eigen::MatrixXd::Zero(k, k));
        star_star = Eigen::MatrixXd::Zero(k, k);
    }
}

void BlockKernel::set_symmetric(int i, int j, const Eigen::MatrixXd& v) {
    block(i, j) = v;
    block(j, i) = v.transpose();
}

Eigen::MatrixXd BlockKernel::assemble() const {
    const int off = has_star ? k : 0;
    const int N = size() * k + off;
    Eigen::MatrixXd A(N, N);
    if (has_star) {
        A.topLeftCorner(k, k) = star_star;
        for (int i = 0; i < size(); ++i) {
            A.block(off + i * k, 0, k, k) = star[i];
            A.block(0, off + i * k, k, k) = star[i].transpose();
        }
    }
    for (int i = 0; i < size(); ++i)
        for (int j = 0; j < size(); ++j) A.block(off + i * k, off + j * k, k, k) = block(i, j);
    return A;
}

double BlockKernel::mean_diagonal() const {
    Eigen::MatrixXd A = assemble();
    return A.rows() ? A.diagonal().mean() : 0.0;
}

BlockKernel BlockKernel::restrict_to(const std::vector<int>& grid_knots) const {
    std::vector<int> pos;
    for (int g : grid_knots) {
        int p = -1;
        for (int i = 0; i < size(); ++i)
            if (knots[i] == g) p = i;
        if (p < 0) throw std::out_of_range("knot " + std::to_string(g) + " not present in kernel");
        pos.push_back(p);
    }
    BlockKernel R(grid, grid_knots, k, has_star);
    for (std::size_t a = 0; a < pos.size(); ++a) {
        for (std::size_t b = 0; b < pos.size(); ++b) R.block(int(a), int(b)) = block(pos[a], pos[b]);
        if (has_star) R.star[a] = star[pos[a]];
    }
    if (has_star) R.star_star = star_star;
    return R;
}

ResponseKernel::ResponseKernel(const TimeGrid& g, int k_, bool with_star) : grid(g), k(k_), has_star(with_star) {
    const std::size_t n = std::size_t(g.size());
    blocks.assign(n * (n + 1) / 2, Eigen::MatrixXd::Zero(k, k));
    if (has_star) star.assign(n, Eigen::MatrixXd::Zero(k, k));
}

Eigen::MatrixXd& ResponseKernel::block(int i, int j) {
    if (j > i || j < 0 || i >= size()) throw std::out_of_range("response kernel is causal: need j <= i");
    return blocks[std::size_t(i) * (i + 1) / 2 + j];
}

const Eigen::MatrixXd& ResponseKernel::block(int i, int j) const {
    if (j > i || j < 0 || i >= size()) throw std::out_of_range("response kernel is causal: need j <= i");
    return blocks[std::size_t(i) * (i + 1) / 2 + j];
}

// ---------------------------------------------------------------- factors

IncrementalFactor::IncrementalFactor(int k, bool psd_project) : k_(k), psd_project_(psd_project) {}

void IncrementalFactor::extend(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& diag) {
    const int k = k_;
    if (cross.rows() != n_ || cross.cols() != k || diag.rows() != k || diag.cols() != k)
        throw std::invalid_argument("IncrementalFactor::extend: shape mismatch");

    // X = L^{-1} cross; rows with a zero pivot carry no variance and are skipped.
    Eigen::MatrixXd X(n_, k);
    for (int i = 0; i < n_; ++i) {
        const double piv = L_(i, i);
        for (int c = 0; c < k; ++c) {
            double v = cross(i, c);
            for (int j = 0; j < i; ++j) v -= L_(i, j) * X(j, c);
            X(i, c) = piv > 0.0 ? v / piv : 0.0;
        }
    }
    Eigen::MatrixXd S = diag - X.transpose() * X;
    S = 0.5 * (S + S.transpose());
    diag_sum_ += diag.trace();
    const double scale = diag_sum_ / double(n_ + k);

    Eigen::MatrixXd Lnew = Eigen::MatrixXd::Zero(k, k);
    last_jitter_ = 0.0;
    if (scale > 0.0) {
        bool done = false;
        for (double rel = 1e-10; rel <= 1e-4 * (1 + 1e-9); rel *= 10.0) {
            Eigen::LLT<Eigen::MatrixXd> llt(S + rel * scale * Eigen::MatrixXd::Identity(k, k));
            if (llt.info() == Eigen::Success) {
                Lnew = llt.matrixL();
                last_jitter_ = rel * scale;
                done = true;
                if (rel > 1e-10)
                    warnings_.push_back("jitter escalated to " + format_double(rel) + " x mean diagonal at block " +
                                        std::to_string(blocks()));
                break;
            }
        }
        if (!done) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
            const double min_eig = es.eigenvalues().minCoeff();
            if (!psd_project_) throw PsdError(min_eig, "kernel not positive semidefinite at block " + std::to_string(blocks()));
            Eigen::MatrixXd P = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
                                es.eigenvectors().transpose();
            Eigen::LLT<Eigen::MatrixXd> llt(P + 1e-10 * scale * Eigen::MatrixXd::Identity(k, k));
            Lnew = llt.matrixL();
            last_jitter_ = 1e-10 * scale;
            warnings_.push_back("negative eigenvalue " + format_double(min_eig) + " clipped at block " +
                                std::to_string(blocks()));
        }
    } else if (S.cwiseAbs().maxCoeff() > 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        throw PsdError(es.eigenvalues().minCoeff(), "kernel has nonpositive mean diagonal");
    }

    Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(n_ + k, n_ + k);
    grown.topLeftCorner(n_, n_) = L_;
    grown.block(n_, 0, k, n_) = X.transpose();
    grown.block(n_, n_, k, k) = Lnew;
    L_.swap(grown);
    n_ += k;
}

FactorResult assemble_and_factor(const BlockKernel& kernel, double jitter_rel, double jitter_max_rel) {
    if (!(jitter_rel > 0.0) || jitter_max_rel < jitter_rel) throw ConfigError("jitter", "need 0 < jitter <= jitter_max");
    Eigen::MatrixXd A = kernel.assemble();
    if (!A.allFinite()) throw std::invalid_argument("assemble_and_factor: kernel has non-finite entries");
    A = 0.5 * (A + A.transpose());
    FactorResult out;
    const int N = int(A.rows());
    const double scale = N ? A.diagonal().mean() : 0.0;
    if (scale == 0.0 && (N == 0 || A.cwiseAbs().maxCoeff() == 0.0)) {
        out.L = Eigen::MatrixXd::Zero(N, N);
        return out;
    }
    if (scale > 0.0) {
        for (double rel = jitter_rel; rel <= jitter_max_rel * (1 + 1e-9); rel *= 10.0) {
            Eigen::LLT<Eigen::MatrixXd> llt(A + rel * scale * Eigen::MatrixXd::Identity(N, N));
            if (llt.info() == Eigen::Success) {
                out.L = llt.matrixL();
                out.jitter = rel * scale;
                if (rel > jitter_rel) out.warnings.push_back("jitter escalated to " + format_double(rel) + " x mean diagonal");
                return out;
            }
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    throw PsdError(es.eigenvalues().minCoeff(), "kernel not factorizable at maximal jitter");
}

GpSamples sample_gp(const BlockKernel& kernel, double scale, long n_paths, std::uint64_t seed) {
    if (scale < 0.0) throw std::invalid_argument("sample_gp: scale must be nonnegative");
    FactorResult f = assemble_and_factor(kernel);
    const int N = int(f.L.rows());
    const int off = kernel.has_star ? kernel.k : 0;
    const double root = std::sqrt(scale);
    const Stream s(seed, "gp");
    GpSamples out;
    out.paths.resize(n_paths, N - off);
    if (off) out.star.resize(n_paths, off);
    std::vector<double> xi(N), v(N);
    for (long p = 0; p < n_paths; ++p) {
        for (int b = 0; b < N; ++b) xi[b] = s.normal(std::uint64_t(p), std::uint64_t(b));
        for (int a = 0; a < N; ++a) {
            double acc = 0.0;
            for (int b = 0; b <= a; ++b) acc += f.L(a, b) * xi[b];
            v[a] = root * acc;
        }
        for (int a = 0; a < off; ++a) out.star(p, a) = v[a];
        for (int a = off; a < N; ++a) out.paths(p, a - off) = v[a];
    }
    return out;
}

PsdReport check_psd(const BlockKernel& kernel) {
    Eigen::MatrixXd A = kernel.assemble();
    PsdReport r;
    if (A.rows() == 0) return r;
    A = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    r.min_eigenvalue = es.eigenvalues().minCoeff();
    r.ok = r.min_eigenvalue >= -1e-8 * std::abs(A.diagonal().mean());
    return r;
}

// ---------------------------------------------------------------- output

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

void write_sidecar(const std::string& path, const TimeGrid& g, int k, const std::string& kind, std::uint64_t seed,
                   const std::vector<int>& knots) {
    nlohmann::ordered_json j;
    j["grid"] = {{"eta", g.eta}, {"m", g.m}, {"T", g.horizon()}};
    j["knots"] = knots;
    j["k"] = k;
    j["kind"] = kind;
    j["seed"] = seed;
    std::ofstream out(path + ".json");
    if (!out) throw std::runtime_error("cannot write " + path + ".json");
    out << j.dump(2) << "\n";
}

void row(std::ofstream& out, const std::string& i, const std::string& j, int a, int b, const std::string& ti,
         const std::string& tj, double v) {
    out << i << ',' << j << ',' << a << ',' << b << ',' << ti << ',' << tj << ',' << format_double(v) << '\n';
}

}  // namespace

void write_kernel_csv(const std::string& path, const BlockKernel& K, const std::string& kind, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "i,j,a,b,t_i,t_j,value\n";
    auto t = [&](int i) { return format_double(K.grid.time(K.knots[i])); };
    for (int i = 0; i < K.size(); ++i)
        for (int j = 0; j < K.size(); ++j)
            for (int a = 0; a < K.k; ++a)
                for (int b = 0; b < K.k; ++b)
                    row(out, std::to_string(K.knots[i]), std::to_string(K.knots[j]), a, b, t(i), t(j), K.block(i, j)(a, b));
    if (K.has_star) {
        for (int i = 0; i < K.size(); ++i)
            for (int a = 0; a < K.k; ++a)
                for (int b = 0; b < K.k; ++b) row(out, std::to_string(K.knots[i]), "*", a, b, t(i), "*", K.star[i](a, b));
        for (int a = 0; a < K.k; ++a)
            for (int b = 0; b < K.k; ++b) row(out, "*", "*", a, b, "*", "*", K.star_star(a, b));
    }
    write_sidecar(path, K.grid, K.k, kind, seed, K.knots);
}

void write_kernel_csv(const std::string& path, const ResponseKernel& K, const std::string& kind, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "i,j,a,b,t_i,t_j,value\n";
    for (int i = 0; i < K.size(); ++i)
        for (int j = 0; j <= i; ++j)
            for (int a = 0; a < K.k; ++a)
                for (int b = 0; b < K.k; ++b)
                    row(out, std::to_string(i), std::to_string(j), a, b, format_double(K.grid.time(i)),
                        format_double(K.grid.time(j)), K.block(i, j)(a, b));
    if (K.has_star)
        for (int i = 0; i < K.size(); ++i)
            for (int a = 0; a < K.k; ++a)
                for (int b = 0; b < K.k; ++b)
                    row(out, std::to_string(i), "*", a, b, format_double(K.grid.time(i)), "*", K.star[i](a, b));
    std::vector<int> knots(K.size());
    for (int i = 0; i < K.size(); ++i) knots[i] = i;
    write_sidecar(path, K.grid, K.k, kind, seed, knots);
}

}  // namespace dmftlab
