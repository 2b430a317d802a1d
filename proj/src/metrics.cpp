#include "dmftlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dmftlab/errors.hpp"
#include "dmftlab/parallel.hpp"
#include "dmftlab/rng.hpp"

namespace dmftlab {

namespace {

constexpr int kQuantiles = 2048;

double quantile(const Eigen::VectorXd& sorted, double q) {
    const long n = sorted.size();
    long idx = static_cast<long>(std::floor(q * double(n)));
    return sorted(std::clamp<long>(idx, 0, n - 1));
}

double spectral_norm_small(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    if (m.size() == 1) return std::abs(m(0, 0));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

}  // namespace

SampleCloud::SampleCloud(Eigen::MatrixXd p, std::string l) : points(std::move(p)), label(std::move(l)) {}

void SampleCloud::validate() const {
    if (points.rows() < 2) throw ConfigError("cloud." + label, "need at least 2 points");
    if (points.cols() < 1) throw ConfigError("cloud." + label, "dimension must be positive");
    if (!points.allFinite()) throw ConfigError("cloud." + label, "non-finite entries");
}

double wasserstein2_1d(Eigen::VectorXd a, Eigen::VectorXd b) {
    if (a.size() < 1 || b.size() < 1) throw ConfigError("cloud", "empty sample");
    std::sort(a.data(), a.data() + a.size());
    std::sort(b.data(), b.data() + b.size());
    double s = 0.0;
    if (a.size() == b.size()) {
        for (long i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
        return std::sqrt(s / double(a.size()));
    }
    for (int q = 0; q < kQuantiles; ++q) {
        const double u = (q + 0.5) / kQuantiles;
        const double d = quantile(a, u) - quantile(b, u);
        s += d * d;
    }
    return std::sqrt(s / kQuantiles);
}

double wasserstein2_1d(const SampleCloud& a, const SampleCloud& b) {
    a.validate();
    b.validate();
    if (a.dim() != 1 || b.dim() != 1) throw ConfigError("cloud", "wasserstein2_1d needs 1-dimensional clouds");
    return wasserstein2_1d(Eigen::VectorXd(a.points.col(0)), Eigen::VectorXd(b.points.col(0)));
}

double sliced_w2(const SampleCloud& a, const SampleCloud& b, int n_directions, std::uint64_t seed) {
    a.validate();
    b.validate();
    if (a.dim() != b.dim()) throw ConfigError("cloud", "dimension mismatch");
    if (n_directions < 1) throw ConfigError("n_directions", "must be positive");
    const int D = a.dim();
    const Stream st(seed, "directions");
    std::vector<double> vals(n_directions, 0.0);
    for_chunks(n_directions, 1, [&](long c, long, long) {
        Eigen::VectorXd u(D);
        double nrm = 0.0;
        for (std::uint64_t tries = 0; nrm == 0.0; ++tries) {
            for (int j = 0; j < D; ++j) u(j) = st.normal(std::uint64_t(c), tries * D + j);
            nrm = u.norm();
        }
        u /= nrm;
        const double w = wasserstein2_1d(Eigen::VectorXd(a.points * u), Eigen::VectorXd(b.points * u));
        vals[c] = w * w;
    });
    double s = 0.0;
    for (double v : vals) s += v;
    return std::sqrt(s / n_directions);
}

SupDiff kernel_sup_diff(const BlockKernel& A, const BlockKernel& B) {
    if (!(A.grid == B.grid) || A.knots != B.knots) throw ConfigError("kernel", "grid mismatch");
    if (A.k != B.k) throw ConfigError("kernel", "block size mismatch");
    SupDiff out;
    out.sup = -1.0;
    for (int i = 0; i < A.size(); ++i)
        for (int j = 0; j < A.size(); ++j) {
            const double v = spectral_norm_small(A.block(i, j) - B.block(i, j));
            if (v > out.sup) out = {v, i, j};
        }
    if (out.sup < 0.0) out.sup = 0.0;
    return out;
}

}  // namespace dmftlab
