#include "dmftlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dmftlab/dmft.hpp"
#include "dmftlab/errors.hpp"
#include "dmftlab/flow.hpp"
#include "dmftlab/kernel.hpp"
#include "dmftlab/metrics.hpp"
#include "dmftlab/parallel.hpp"
#include "dmftlab/rng.hpp"
#include "dmftlab/stationary.hpp"

#ifndef DMFTLAB_GIT_REV
#define DMFTLAB_GIT_REV "unknown"
#endif

namespace dmftlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- json access

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError(join(path, it.key()), "unknown field");
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

double num(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
}

long integer(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    return v.get<long>();
}

bool boolean(const json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
    return v.get<bool>();
}

std::string str(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
}

std::vector<double> num_array(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path, "expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(num(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

template <class T, class F>
void opt(const json& j, const char* key, const std::string& path, T& dst, F&& conv) {
    if (const json* v = find(j, key)) dst = conv(*v, join(path, key));
}

Eigen::VectorXd to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json mat_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
    return a;
}

Eigen::MatrixXd mat_from(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of rows");
    const std::size_t rows = v.size();
    std::vector<std::vector<double>> r;
    for (std::size_t i = 0; i < rows; ++i) r.push_back(num_array(v[i], path + "[" + std::to_string(i) + "]"));
    Eigen::MatrixXd m(rows, r[0].size());
    for (std::size_t i = 0; i < rows; ++i) {
        if (r[i].size() != r[0].size()) throw ConfigError(path, "ragged matrix");
        for (std::size_t c = 0; c < r[i].size(); ++c) m(i, c) = r[i][c];
    }
    return m;
}

// Canonical JSON of a law: validated and with only known keys.
json canonical_scalar_law(const json& j, const std::string& path) {
    ScalarLaw law = parse_scalar_law(j, path);
    switch (law.kind()) {
        case ScalarLaw::Kind::PointMass: return {{"kind", "point_mass"}, {"value", law.location()}};
        case ScalarLaw::Kind::Mixture: return {{"kind", "mixture"}, {"atoms", law.atoms()}, {"weights", law.weights()}};
        case ScalarLaw::Kind::Gaussian: return {{"kind", "gaussian"}, {"mean", law.location()}, {"sd", law.spread()}};
        case ScalarLaw::Kind::Logistic: return {{"kind", "logistic"}, {"loc", law.location()}, {"scale", law.spread()}};
    }
    return {};
}

json canonical_vector_law(const json& j, const std::string& path) {
    VectorLaw law = parse_vector_law(j, path);
    switch (law.kind()) {
        case VectorLaw::Kind::PointMass: return {{"kind", "point_mass"}, {"value", vec_json(law.atoms()[0])}};
        case VectorLaw::Kind::Mixture: {
            json atoms = json::array();
            for (const auto& a : law.atoms()) atoms.push_back(vec_json(a));
            return {{"kind", "mixture"}, {"atoms", atoms}, {"weights", law.weights()}};
        }
        case VectorLaw::Kind::Gaussian:
            return {{"kind", "gaussian"}, {"mean", vec_json(law.mean_vector())}, {"cov", mat_json(law.cov())}};
        case VectorLaw::Kind::Product:
            return {{"kind", "product"},
                    {"left", canonical_vector_law(j.at("left"), join(path, "left"))},
                    {"right", canonical_vector_law(j.at("right"), join(path, "right"))}};
    }
    return {};
}

json default_population(int k) {
    return {{"init", {{"kind", "gaussian"}, {"mean", vec_json(Eigen::VectorXd::Zero(k))},
                      {"cov", mat_json(Eigen::MatrixXd::Identity(k, k))}}},
            {"planted", nullptr},
            {"noise", {{"kind", "point_mass"}, {"value", 0.0}}}};
}

json canonical_population(const json& j, const std::string& path, int k) {
    check_keys(j, path, {"init", "planted", "noise"});
    json def = default_population(k);
    json out;
    out["init"] = canonical_vector_law(j.contains("init") ? j["init"] : def["init"], join(path, "init"));
    const json* pl = find(j, "planted");
    out["planted"] = (pl && !pl->is_null()) ? canonical_vector_law(*pl, join(path, "planted")) : json(nullptr);
    out["noise"] = canonical_scalar_law(j.contains("noise") ? j["noise"] : def["noise"], join(path, "noise"));
    return out;
}

// ---------------------------------------------------------------- csv helpers

void write_samples_csv(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (Eigen::Index c = 0; c < m.cols(); ++c) f << (c ? "," : "") << "c" << c;
    f << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) f << (c ? "," : "") << format_double(m(i, c));
        f << "\n";
    }
}

Eigen::MatrixXd read_samples_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) numeric = false;
            row.push_back(v);
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error(path + ": non-numeric row");
        }
        first = false;
        if (!rows.empty() && row.size() != rows[0].size()) throw std::runtime_error(path + ": ragged rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no samples");
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c) m(i, c) = rows[i][c];
    return m;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- run context

struct StageError : std::runtime_error {
    StageError(const std::string& stage, const std::string& what) : std::runtime_error("stage " + stage + ": " + what) {}
};

struct SimResult {
    long d = 0;
    int rep = 0;
    BlockKernel C_hat;
    Eigen::MatrixXd marginal;  // d x (times * k)
};

struct Context {
    const ExperimentConfig& cfg;
    LossModel model;
    LambdaPath lambda;
    PopulationSpec pop;
    TimeGrid grid;
    fs::path dir;
    RunReport& rep;
    json plot;  // plot_source.json contents
};

template <class F>
void stage(Context& cx, const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
    cx.rep.stage_seconds.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void add_metric(Context& cx, const std::string& name, double value, double threshold, const std::string& rel) {
    MetricRow r{name, value, threshold, rel, true};
    if (rel == "<=") r.pass = value <= threshold;
    else if (rel == ">=") r.pass = value >= threshold;
    cx.rep.metrics.push_back(r);
}

std::string rel(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

std::vector<SimResult> run_simulations(Context& cx) {
    const auto& c = cx.cfg;
    std::vector<SimResult> out;
    const DistKind dist = parse_dist_kind(c.design_dist, "design.dist");
    for (long d : c.d_values) {
        const long n = c.n ? *c.n : std::lround(c.delta * double(d));
        for (int r = 0; r < c.design_seeds; ++r) {
            const std::string tag = "d" + std::to_string(d) + ".s" + std::to_string(r);
            const DesignMatrix X = sample_design(n, d, dist, hash_label(c.seed, "design." + tag));
            const Population P = sample_population(cx.pop, d, n, c.k, hash_label(c.seed, "population." + tag));
            FlowOptions fo;
            fo.store_full = true;
            fo.observe_times = c.compare_times;
            fo.model_id = cx.model.name;
            fo.lambda_id = c.lambda.kind;
            std::optional<Eigen::MatrixXd> ts;
            if (c.planted) ts = P.theta_star;
            Trajectory tr = run_flow_euler(X, P.theta0, ts, P.z, cx.model, cx.lambda, cx.grid, fo);
            for (const auto& w : tr.warnings) cx.rep.metrics.push_back({"warning: " + w, 0.0, 0.0, "info", true});

            SimResult s;
            s.d = d;
            s.rep = r;
            s.C_hat = empirical_kernel(tr);
            s.marginal = empirical_marginal(tr, c.compare_times, MarginalKind::ThetaRows);
            const fs::path sd = cx.dir / "sim" / tag;
            fs::create_directories(sd);
            write_kernel_csv((sd / "C_theta_hat.csv").string(), s.C_hat, "C_theta_hat", X.seed);
            write_samples_csv((sd / "marginal.csv").string(), s.marginal);
            cx.rep.artifacts.push_back(rel(sd / "C_theta_hat.csv", cx.dir));
            cx.rep.artifacts.push_back(rel(sd / "marginal.csv", cx.dir));
            if (c.mode == Mode::Simulate) {
                write_trajectory_csv((sd / "trajectory.csv").string(), tr);
                cx.rep.artifacts.push_back(rel(sd / "trajectory.csv", cx.dir));
            }

            // With ell = 0 and constant Lambda = lambda I the Euler iterates are (1 - eta lambda)^i theta0.
            if (cx.model.name == "zero" && c.lambda.kind == "constant") {
                const double f = std::pow(1.0 - c.eta * c.lambda.value, cx.grid.m);
                const double err = (tr.theta.back() - f * P.theta0).cwiseAbs().maxCoeff();
                const double scale = 1.0 + P.theta0.cwiseAbs().maxCoeff();
                add_metric(cx, "exact_decay_error." + tag, err, 1e-12 * scale, "<=");
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

struct DmftResult {
    DmftSolution sol;
    Eigen::MatrixXd marginal;  // samples x (times * k)
};

DmftResult run_dmft(Context& cx, bool amp) {
    const auto& c = cx.cfg;
    DmftOptions o;
    o.psd_project = c.psd_project;
    const std::uint64_t mc_seed = hash_label(c.seed, "mc");
    DmftResult res;
    res.sol = amp ? solve_amp_se(cx.model, cx.lambda, cx.pop, c.delta, cx.grid, c.mc_paths, mc_seed, c.planted, o)
                  : solve_dmft_discrete(cx.model, cx.lambda, cx.pop, c.delta, cx.grid, c.mc_paths, mc_seed, c.planted, o);
    const fs::path dd = cx.dir / "dmft";
    write_solution(dd.string(), res.sol, cx.model.name, c.lambda.kind);
    for (const char* f : {"C_theta.csv", "C_ell.csv", "R_theta.csv", "R_ell.csv", "Gamma.csv", "manifest.json"})
        cx.rep.artifacts.push_back(rel(dd / f, cx.dir));
    for (const auto& w : res.sol.diagnostics.warnings) cx.rep.metrics.push_back({"warning: " + w, 0.0, 0.0, "info", true});

    const PsdReport psd = check_psd(res.sol.C_theta);
    add_metric(cx, "C_theta_min_eigenvalue", psd.min_eigenvalue, -1e-8 * std::max(1.0, res.sol.C_theta.mean_diagonal()),
               ">=");
    add_metric(cx, "max_se_C_theta", res.sol.diagnostics.max_se_C_theta, 0.0, "info");

    if (c.dmft_samples > 0) {
        DmftSamples smp = sample_dmft_paths(res.sol, cx.model, cx.lambda, cx.pop, c.dmft_samples,
                                            hash_label(c.seed, "mc.samples"));
        const int k = c.k;
        res.marginal.resize(smp.theta.rows(), Eigen::Index(c.compare_times.size()) * k);
        for (std::size_t q = 0; q < c.compare_times.size(); ++q) {
            const int knot = cx.grid.knot_of(c.compare_times[q]);
            res.marginal.middleCols(Eigen::Index(q) * k, k) = smp.theta.middleCols(Eigen::Index(knot) * k, k);
        }
        write_samples_csv((dd / "samples.csv").string(), res.marginal);
        cx.rep.artifacts.push_back(rel(dd / "samples.csv", cx.dir));
    }

    json diag = json::array();
    for (int i = 0; i < cx.grid.size(); ++i) diag.push_back(res.sol.C_theta.block(i, i).trace() / c.k);
    cx.plot["diag"]["dmft"] = diag;
    return res;
}

json quantiles_of(Eigen::VectorXd v) {
    std::sort(v.data(), v.data() + v.size());
    json q = json::array();
    for (int p = 1; p < 20; ++p) {
        const double u = p / 20.0;
        long idx = std::clamp<long>(long(std::floor(u * double(v.size()))), 0, long(v.size()) - 1);
        q.push_back(v(idx));
    }
    return q;
}

void run_compare_pipeline(Context& cx, const std::vector<SimResult>& sims, const DmftResult& dm) {
    const auto& c = cx.cfg;
    const int k = c.k;
    const std::uint64_t dir_seed = hash_label(c.seed, "directions");
    std::vector<double> mean_sup;
    for (long d : c.d_values) {
        double sup = 0.0;
        int cnt = 0;
        std::vector<double> w2(c.compare_times.size(), 0.0);
        json diag = json::array();
        std::vector<double> diag_sum(cx.grid.size(), 0.0);
        for (const auto& s : sims) {
            if (s.d != d) continue;
            ++cnt;
            sup += kernel_sup_diff(s.C_hat, dm.sol.C_theta).sup;
            for (int i = 0; i < cx.grid.size(); ++i) diag_sum[i] += s.C_hat.block(i, i).trace() / k;
            if (dm.marginal.rows() > 0)
                for (std::size_t q = 0; q < c.compare_times.size(); ++q) {
                    SampleCloud a(s.marginal.middleCols(Eigen::Index(q) * k, k), "empirical");
                    SampleCloud b(dm.marginal.middleCols(Eigen::Index(q) * k, k), "dmft");
                    w2[q] += sliced_w2(a, b, c.directions, dir_seed);
                }
        }
        sup /= cnt;
        mean_sup.push_back(sup);
        add_metric(cx, "kernel_sup_diff.d" + std::to_string(d), sup, 0.0, "info");
        for (double v : diag_sum) diag.push_back(v / cnt);
        cx.plot["diag"]["empirical_d" + std::to_string(d)] = diag;
        for (std::size_t q = 0; q < c.compare_times.size(); ++q) {
            w2[q] /= cnt;
            cx.plot["w2"][std::to_string(d)].push_back(w2[q]);
            add_metric(cx, "sliced_w2.d" + std::to_string(d) + ".t" + format_double(c.compare_times[q]), w2[q],
                       0.0, "info");
        }
    }
    const double thr = std::max(c.kernel_threshold, 3.0 * dm.sol.diagnostics.max_se_C_theta);
    add_metric(cx, "kernel_sup_diff.largest_d", mean_sup.back(), thr, "<=");
    if (mean_sup.size() >= 2) {
        bool dec = true;
        for (std::size_t i = 1; i < mean_sup.size(); ++i) dec = dec && mean_sup[i] < mean_sup[i - 1];
        add_metric(cx, "kernel_sup_diff.decreasing", dec ? 1.0 : 0.0, 1.0, ">=");
    }
    if (c.w2_threshold && dm.marginal.rows() > 0) {
        double worst = 0.0;
        for (double v : cx.plot["w2"][std::to_string(c.d_values.back())]) worst = std::max(worst, v);
        add_metric(cx, "sliced_w2.largest_d", worst, *c.w2_threshold, "<=");
    }

    // QQ data: first component at each compare time, DMFT vs pooled largest-d empirical sample.
    if (dm.marginal.rows() > 0) {
        for (std::size_t q = 0; q < c.compare_times.size(); ++q) {
            std::vector<double> pooled;
            for (const auto& s : sims)
                if (s.d == c.d_values.back())
                    for (Eigen::Index i = 0; i < s.marginal.rows(); ++i) pooled.push_back(s.marginal(i, Eigen::Index(q) * k));
            json entry;
            entry["time"] = c.compare_times[q];
            entry["dmft"] = quantiles_of(dm.marginal.col(Eigen::Index(q) * k));
            entry["empirical"] = quantiles_of(to_vec(pooled));
            cx.plot["qq"].push_back(entry);
        }
    }
}

void run_stationary_stage(Context& cx) {
    const auto& c = cx.cfg;
    if (c.lambda.kind != "constant") throw ConfigError("lambda.kind", "the stationary solver needs a constant lambda");
    ExpectationConfig ec;
    ec.gh_nodes = c.gh_nodes;
    ec.z_nodes = c.z_nodes;
    ec.mc_samples = c.stat_mc_samples;
    ec.seed = hash_label(c.seed, "stationary");
    ec.noise = cx.pop.noise_law;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(c.k, c.k);
    if (c.planted) S = cx.pop.joint_second_moment(c.k).bottomRightCorner(c.k, c.k);
    StationaryPoint sp = solve_stationary(cx.model, c.lambda.value, c.delta, S, ec, c.damping, c.tol, c.max_iter);
    json out;
    out["R_ell_inf"] = mat_json(sp.R_ell_inf);
    out["R_theta_inf"] = mat_json(sp.R_theta_inf);
    out["R_ell_star"] = mat_json(sp.R_ell_star);
    out["C_theta_inf"] = mat_json(sp.C_theta_inf);
    out["C_ell_inf"] = mat_json(sp.C_ell_inf);
    out["Gamma_inf"] = mat_json(sp.Gamma_inf);
    out["residual"] = sp.residual;
    out["iterations"] = sp.iterations;
    out["converged"] = sp.converged;
    add_metric(cx, "stationary.residual", sp.residual, c.tol, "<=");
    if (c.k == 1 && sp.converged) {
        GordonResult g = gordon_residual(sp, cx.model, c.lambda.value, c.delta, ec);
        out["gordon_residual"] = {g.residual[0], g.residual[1], g.residual[2]};
        add_metric(cx, "gordon.residual", std::max({g.residual[0], g.residual[1], g.residual[2]}), c.gordon_threshold,
                   "<=");
    }
    if (cx.model.name == "logistic+logistic" && c.lambda.value == 0.0 && c.k == 1) {
        SurCandesPoint sc = map_sur_candes(sp);
        out["logistic_parameters"] = {{"alpha", sc.alpha}, {"sigma", sc.sigma}, {"lambda", sc.lambda_par},
                                      {"kappa", sc.kappa}, {"gamma", sc.gamma}};
    }
    write_json((cx.dir / "stationary.json").string(), out);
    cx.rep.artifacts.push_back("stationary.json");
}

void run_compare_files(Context& cx) {
    const auto& c = cx.cfg;
    if (c.compare_a.empty()) throw ConfigError("compare.a", "sample CSV path required for mode=compare");
    if (c.compare_b.empty()) throw ConfigError("compare.b", "sample CSV path required for mode=compare");
    SampleCloud a(read_samples_csv(c.compare_a), "a"), b(read_samples_csv(c.compare_b), "b");
    const double sw = sliced_w2(a, b, c.directions, hash_label(c.seed, "directions"));
    json out{{"a", c.compare_a}, {"b", c.compare_b}, {"sliced_w2", sw}, {"directions", c.directions},
             {"metric_note", "sliced W2 used as a weak-convergence surrogate; thresholds are run settings"}};
    if (a.dim() == 1) out["w2_1d"] = wasserstein2_1d(a, b);
    if (c.w2_threshold) add_metric(cx, "sliced_w2", sw, *c.w2_threshold, "<=");
    else add_metric(cx, "sliced_w2", sw, 0.0, "info");
    write_json((cx.dir / "compare.json").string(), out);
    cx.rep.artifacts.push_back("compare.json");
}

}  // namespace

// ---------------------------------------------------------------- public API

Mode parse_mode(const std::string& s) {
    if (s == "simulate") return Mode::Simulate;
    if (s == "dmft") return Mode::Dmft;
    if (s == "amp_oracle") return Mode::AmpOracle;
    if (s == "stationary") return Mode::Stationary;
    if (s == "compare") return Mode::Compare;
    if (s == "full_pipeline") return Mode::FullPipeline;
    throw ConfigError("mode", "unknown mode '" + s + "'");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Simulate: return "simulate";
        case Mode::Dmft: return "dmft";
        case Mode::AmpOracle: return "amp_oracle";
        case Mode::Stationary: return "stationary";
        case Mode::Compare: return "compare";
        case Mode::FullPipeline: return "full_pipeline";
    }
    return "";
}

LambdaPath build_lambda(const LambdaSpec& spec, int k) {
    if (spec.kind == "constant") return make_constant_lambda(k, spec.value);
    if (spec.kind == "ramp") {
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
        return make_ramp_lambda(spec.start * I, spec.end * I);
    }
    throw ConfigError("lambda.kind", "unknown kind '" + spec.kind + "'");
}

ScalarLaw parse_scalar_law(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    const std::string kind = str(j.contains("kind") ? j["kind"] : json(), join(path, "kind"));
    if (kind == "point_mass") {
        check_keys(j, path, {"kind", "value"});
        return ScalarLaw::point_mass(num(j.value("value", json(0.0)), join(path, "value")));
    }
    if (kind == "mixture") {
        check_keys(j, path, {"kind", "atoms", "weights"});
        if (!j.contains("atoms") || !j.contains("weights")) throw ConfigError(path, "mixture needs atoms and weights");
        auto a = num_array(j["atoms"], join(path, "atoms"));
        auto w = num_array(j["weights"], join(path, "weights"));
        if (a.empty() || a.size() != w.size()) throw ConfigError(join(path, "weights"), "must match atoms in length");
        return ScalarLaw::mixture(a, w);
    }
    if (kind == "gaussian") {
        check_keys(j, path, {"kind", "mean", "sd"});
        const double sd = num(j.value("sd", json(1.0)), join(path, "sd"));
        if (sd < 0.0) throw ConfigError(join(path, "sd"), "must be non-negative");
        return ScalarLaw::gaussian(num(j.value("mean", json(0.0)), join(path, "mean")), sd);
    }
    if (kind == "logistic") {
        check_keys(j, path, {"kind", "loc", "scale"});
        const double s = num(j.value("scale", json(1.0)), join(path, "scale"));
        if (!(s > 0.0)) throw ConfigError(join(path, "scale"), "must be positive");
        return ScalarLaw::logistic(num(j.value("loc", json(0.0)), join(path, "loc")), s);
    }
    throw ConfigError(join(path, "kind"), "unknown law '" + kind + "'");
}

VectorLaw parse_vector_law(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    const std::string kind = str(j.contains("kind") ? j["kind"] : json(), join(path, "kind"));
    if (kind == "point_mass") {
        check_keys(j, path, {"kind", "value"});
        if (!j.contains("value")) throw ConfigError(join(path, "value"), "required");
        return VectorLaw::point_mass(to_vec(num_array(j["value"], join(path, "value"))));
    }
    if (kind == "mixture") {
        check_keys(j, path, {"kind", "atoms", "weights"});
        if (!j.contains("atoms") || !j.contains("weights")) throw ConfigError(path, "mixture needs atoms and weights");
        std::vector<Eigen::VectorXd> atoms;
        const json& a = j["atoms"];
        if (!a.is_array() || a.empty()) throw ConfigError(join(path, "atoms"), "expected a non-empty array");
        for (std::size_t i = 0; i < a.size(); ++i)
            atoms.push_back(to_vec(num_array(a[i], join(path, "atoms") + "[" + std::to_string(i) + "]")));
        auto w = num_array(j["weights"], join(path, "weights"));
        if (w.size() != atoms.size()) throw ConfigError(join(path, "weights"), "must match atoms in length");
        for (const auto& v : atoms)
            if (v.size() != atoms[0].size()) throw ConfigError(join(path, "atoms"), "atoms differ in dimension");
        return VectorLaw::mixture(atoms, w);
    }
    if (kind == "gaussian") {
        check_keys(j, path, {"kind", "mean", "cov"});
        if (!j.contains("mean") || !j.contains("cov")) throw ConfigError(path, "gaussian needs mean and cov");
        Eigen::VectorXd mu = to_vec(num_array(j["mean"], join(path, "mean")));
        Eigen::MatrixXd cov = mat_from(j["cov"], join(path, "cov"));
        if (cov.rows() != mu.size() || cov.cols() != mu.size()) throw ConfigError(join(path, "cov"), "shape mismatch");
        try {
            return VectorLaw::gaussian(mu, cov);
        } catch (const std::exception& e) {
            throw ConfigError(join(path, "cov"), e.what());
        }
    }
    if (kind == "product") {
        check_keys(j, path, {"kind", "left", "right"});
        if (!j.contains("left") || !j.contains("right")) throw ConfigError(path, "product needs left and right");
        return VectorLaw::product(parse_vector_law(j["left"], join(path, "left")),
                                  parse_vector_law(j["right"], join(path, "right")));
    }
    throw ConfigError(join(path, "kind"), "unknown law '" + kind + "'");
}

PopulationSpec build_population(const json& population, bool planted, int k) {
    PopulationSpec p;
    p.init_law = parse_vector_law(population.at("init"), "population.init");
    if (planted) {
        if (population.at("planted").is_null())
            throw ConfigError("population.planted", "planted mode needs the joint law of (theta0, theta_star)");
        p.planted_law = parse_vector_law(population.at("planted"), "population.planted");
    }
    p.noise_law = parse_scalar_law(population.at("noise"), "population.noise");
    try {
        p.check_dimension(k);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("population", e.what());
    }
    return p;
}

ExperimentConfig parse_config(const json& j) {
    check_keys(j, "", {"name", "mode", "model", "lambda", "population", "planted", "dims", "design", "grid", "dmft",
                       "compare", "stationary", "seed", "output_dir", "threads"});
    ExperimentConfig c;
    opt(j, "name", "", c.name, str);
    if (c.name.empty() || c.name.find('/') != std::string::npos) throw ConfigError("name", "must be a plain non-empty name");
    if (const json* v = find(j, "mode")) c.mode = parse_mode(str(*v, "mode"));

    if (const json* m = find(j, "model")) {
        check_keys(*m, "model", {"type", "link", "loss", "width", "activation", "alphas", "clamp_radius"});
        opt(*m, "type", "model", c.model.type, str);
        opt(*m, "link", "model", c.model.link, str);
        opt(*m, "loss", "model", c.model.loss, str);
        long w = c.model.width;
        opt(*m, "width", "model", w, integer);
        c.model.width = int(w);
        opt(*m, "activation", "model", c.model.activation, str);
        opt(*m, "alphas", "model", c.model.alphas, num_array);
        opt(*m, "clamp_radius", "model", c.model.clamp_radius, num);
    }
    const LossModel model = build_model(c.model);

    if (const json* l = find(j, "lambda")) {
        check_keys(*l, "lambda", {"kind", "value", "start", "end"});
        opt(*l, "kind", "lambda", c.lambda.kind, str);
        opt(*l, "value", "lambda", c.lambda.value, num);
        opt(*l, "start", "lambda", c.lambda.start, num);
        opt(*l, "end", "lambda", c.lambda.end, num);
        if (c.lambda.kind != "constant" && c.lambda.kind != "ramp")
            throw ConfigError("lambda.kind", "expected constant or ramp");
    }
    opt(j, "planted", "", c.planted, boolean);

    if (const json* d = find(j, "dims")) {
        check_keys(*d, "dims", {"k", "delta", "d", "n"});
        long k = c.k;
        opt(*d, "k", "dims", k, integer);
        c.k = int(k);
        opt(*d, "delta", "dims", c.delta, num);
        if (const json* dv = find(*d, "d")) {
            c.d_values.clear();
            if (dv->is_array()) {
                for (std::size_t i = 0; i < dv->size(); ++i)
                    c.d_values.push_back(integer((*dv)[i], "dims.d[" + std::to_string(i) + "]"));
            } else {
                c.d_values.push_back(integer(*dv, "dims.d"));
            }
        }
        if (const json* nv = find(*d, "n")) c.n = integer(*nv, "dims.n");
    } else {
        c.k = model.k;
    }
    if (c.k != model.k) throw ConfigError("dims.k", "model has k = " + std::to_string(model.k));
    if (!(c.delta > 0.0)) throw ConfigError("dims.delta", "must be positive");
    if (c.d_values.empty()) throw ConfigError("dims.d", "at least one dimension required");
    for (long d : c.d_values)
        if (d < 1) throw ConfigError("dims.d", "must be positive");
    if (c.n) {
        if (c.d_values.size() != 1) throw ConfigError("dims.n", "only allowed with a single d");
        if (std::abs(double(*c.n) / double(c.d_values[0]) - c.delta) > 1e-12)
            throw ConfigError("dims.n", "n / d differs from delta");
    } else {
        for (long d : c.d_values) {
            const double nd = c.delta * double(d);
            if (std::abs(nd - std::round(nd)) > 1e-9 * std::max(1.0, nd))
                throw ConfigError("dims.d", "delta * d must be an integer");
        }
    }

    const json& pop = j.contains("population") ? j["population"] : default_population(c.k);
    c.population = canonical_population(pop, "population", c.k);
    build_population(c.population, c.planted, c.k);

    if (const json* d = find(j, "design")) {
        check_keys(*d, "design", {"dist", "seeds"});
        opt(*d, "dist", "design", c.design_dist, str);
        long s = c.design_seeds;
        opt(*d, "seeds", "design", s, integer);
        c.design_seeds = int(s);
    }
    parse_dist_kind(c.design_dist, "design.dist");
    if (c.design_seeds < 1) throw ConfigError("design.seeds", "must be at least 1");

    if (const json* g = find(j, "grid")) {
        check_keys(*g, "grid", {"eta", "T"});
        opt(*g, "eta", "grid", c.eta, num);
        opt(*g, "T", "grid", c.T, num);
    }
    TimeGrid::from_horizon(c.eta, c.T);

    if (const json* d = find(j, "dmft")) {
        check_keys(*d, "dmft", {"mc_paths", "samples", "psd_project", "oracle"});
        opt(*d, "mc_paths", "dmft", c.mc_paths, integer);
        opt(*d, "samples", "dmft", c.dmft_samples, integer);
        opt(*d, "psd_project", "dmft", c.psd_project, boolean);
        opt(*d, "oracle", "dmft", c.oracle, str);
    }
    if (c.mc_paths < 2) throw ConfigError("dmft.mc_paths", "need at least 2 paths");
    if (c.dmft_samples < 0) throw ConfigError("dmft.samples", "must be non-negative");
    if (c.oracle != "discrete" && c.oracle != "amp") throw ConfigError("dmft.oracle", "expected discrete or amp");

    if (const json* d = find(j, "compare")) {
        check_keys(*d, "compare", {"times", "directions", "kernel_threshold", "w2_threshold", "a", "b"});
        opt(*d, "times", "compare", c.compare_times, num_array);
        long dirs = c.directions;
        opt(*d, "directions", "compare", dirs, integer);
        c.directions = int(dirs);
        opt(*d, "kernel_threshold", "compare", c.kernel_threshold, num);
        if (const json* w = find(*d, "w2_threshold"); w && !w->is_null()) c.w2_threshold = num(*w, "compare.w2_threshold");
        opt(*d, "a", "compare", c.compare_a, str);
        opt(*d, "b", "compare", c.compare_b, str);
    }
    if (c.directions < 1) throw ConfigError("compare.directions", "must be positive");
    const TimeGrid grid = TimeGrid::from_horizon(c.eta, c.T);
    for (std::size_t i = 0; i < c.compare_times.size(); ++i) {
        try {
            grid.knot_of(c.compare_times[i]);
        } catch (const std::out_of_range&) {
            throw ConfigError("compare.times[" + std::to_string(i) + "]", "not a grid knot");
        }
    }

    if (const json* s = find(j, "stationary")) {
        check_keys(*s, "stationary", {"gh_nodes", "z_nodes", "mc_samples", "damping", "tol", "max_iter",
                                      "gordon_threshold", "enabled"});
        long v = c.gh_nodes;
        opt(*s, "gh_nodes", "stationary", v, integer);
        c.gh_nodes = int(v);
        v = c.z_nodes;
        opt(*s, "z_nodes", "stationary", v, integer);
        c.z_nodes = int(v);
        opt(*s, "mc_samples", "stationary", c.stat_mc_samples, integer);
        opt(*s, "damping", "stationary", c.damping, num);
        opt(*s, "tol", "stationary", c.tol, num);
        v = c.max_iter;
        opt(*s, "max_iter", "stationary", v, integer);
        c.max_iter = int(v);
        opt(*s, "gordon_threshold", "stationary", c.gordon_threshold, num);
        opt(*s, "enabled", "stationary", c.run_stationary, boolean);
    }
    if (c.gh_nodes < 2) throw ConfigError("stationary.gh_nodes", "need at least 2 nodes");
    if (c.z_nodes < 1) throw ConfigError("stationary.z_nodes", "need at least 1 node");
    if (!(c.damping > 0.0 && c.damping <= 1.0)) throw ConfigError("stationary.damping", "must lie in (0, 1]");
    if (!(c.tol > 0.0)) throw ConfigError("stationary.tol", "must be positive");
    if (c.max_iter < 1) throw ConfigError("stationary.max_iter", "must be at least 1");

    if (const json* s = find(j, "seed")) {
        if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<long long>() >= 0))
            throw ConfigError("seed", "expected a non-negative integer");
        c.seed = s->get<std::uint64_t>();
    }
    opt(j, "output_dir", "", c.output_dir, str);
    long th = c.threads;
    opt(j, "threads", "", th, integer);
    c.threads = int(th);
    if (c.threads < 1) throw ConfigError("threads", "must be at least 1");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["mode"] = to_string(c.mode);
    j["model"] = {{"type", c.model.type},       {"link", c.model.link},     {"loss", c.model.loss},
                  {"width", c.model.width},     {"activation", c.model.activation},
                  {"alphas", c.model.alphas},   {"clamp_radius", c.model.clamp_radius}};
    j["lambda"] = {{"kind", c.lambda.kind}, {"value", c.lambda.value}, {"start", c.lambda.start}, {"end", c.lambda.end}};
    j["population"] = c.population;
    j["planted"] = c.planted;
    j["dims"] = {{"k", c.k}, {"delta", c.delta}, {"d", c.d_values}};
    if (c.n) j["dims"]["n"] = *c.n;
    j["design"] = {{"dist", c.design_dist}, {"seeds", c.design_seeds}};
    j["grid"] = {{"eta", c.eta}, {"T", c.T}};
    j["dmft"] = {{"mc_paths", c.mc_paths}, {"samples", c.dmft_samples}, {"psd_project", c.psd_project},
                 {"oracle", c.oracle}};
    j["compare"] = {{"times", c.compare_times}, {"directions", c.directions}, {"kernel_threshold", c.kernel_threshold},
                    {"w2_threshold", c.w2_threshold ? json(*c.w2_threshold) : json(nullptr)},
                    {"a", c.compare_a},        {"b", c.compare_b}};
    j["stationary"] = {{"gh_nodes", c.gh_nodes}, {"z_nodes", c.z_nodes}, {"mc_samples", c.stat_mc_samples},
                       {"damping", c.damping},   {"tol", c.tol},         {"max_iter", c.max_iter},
                       {"gordon_threshold", c.gordon_threshold},         {"enabled", c.run_stationary}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
    return j;
}

json RunReport::to_json() const {
    json j;
    j["config"] = config;
    j["fingerprint"] = fingerprint;
    json st = json::array();
    for (const auto& [name, s] : stage_seconds) st.push_back({{"stage", name}, {"seconds", s}});
    j["stages"] = st;
    json mt = json::array();
    for (const auto& m : metrics)
        mt.push_back({{"name", m.name}, {"value", m.value}, {"threshold", m.threshold}, {"relation", m.relation},
                      {"pass", m.pass}});
    j["metrics"] = mt;
    j["artifacts"] = artifacts;
    j["run_dir"] = run_dir;
    j["error"] = error;
    j["exit_code"] = exit_code;
    return j;
}

std::string default_output_root() {
    if (const char* e = std::getenv("DMFT_LAB_OUT"); e && *e) return e;
    return "runs";
}

RunReport run_experiment(const ExperimentConfig& config) {
    RunReport rep;
    rep.config = to_json(config);
    rep.fingerprint = std::string("dmftlab git ") + DMFTLAB_GIT_REV + ", " + __VERSION__;
    const fs::path root = config.output_dir.empty() ? fs::path(default_output_root()) : fs::path(config.output_dir);
    const fs::path dir = root / config.name;
    rep.run_dir = dir.string();
    set_thread_count(config.threads);
    try {
        fs::create_directories(dir);
        Context cx{config, build_model(config.model), build_lambda(config.lambda, config.k),
                   build_population(config.population, config.planted, config.k),
                   TimeGrid::from_horizon(config.eta, config.T), dir, rep, json::object()};
        switch (config.mode) {
            case Mode::Simulate: stage(cx, "simulate", [&] { run_simulations(cx); }); break;
            case Mode::Dmft:
            case Mode::AmpOracle: {
                const bool amp = config.mode == Mode::AmpOracle || config.oracle == "amp";
                stage(cx, amp ? "amp_oracle" : "dmft", [&] { run_dmft(cx, amp); });
                break;
            }
            case Mode::Stationary: stage(cx, "stationary", [&] { run_stationary_stage(cx); }); break;
            case Mode::Compare: stage(cx, "compare", [&] { run_compare_files(cx); }); break;
            case Mode::FullPipeline: {
                std::vector<SimResult> sims;
                DmftResult dm;
                stage(cx, "simulate", [&] { sims = run_simulations(cx); });
                stage(cx, "dmft", [&] { dm = run_dmft(cx, config.oracle == "amp"); });
                stage(cx, "compare", [&] { run_compare_pipeline(cx, sims, dm); });
                if (config.run_stationary) stage(cx, "stationary", [&] { run_stationary_stage(cx); });
                break;
            }
        }
        if (!cx.plot.empty()) {
            cx.plot["times"] = cx.grid.times();
            cx.plot["compare_times"] = config.compare_times;
            cx.plot["artifacts"] = rep.artifacts;
            write_json((dir / "plot_source.json").string(), cx.plot);
            rep.artifacts.push_back("plot_source.json");
        }
        rep.exit_code = 0;
        for (const auto& m : rep.metrics)
            if (!m.pass) rep.exit_code = 2;
    } catch (const ConfigError& e) {
        rep.error = std::string("config error: ") + e.what();
        rep.exit_code = 1;
    } catch (const std::exception& e) {
        rep.error = e.what();
        rep.exit_code = 1;
    }
    try {
        fs::create_directories(dir);
        write_json((dir / "report.json").string(), rep.to_json());
    } catch (const std::exception& e) {
        if (rep.error.empty()) rep.error = e.what();
        rep.exit_code = 1;
    }
    return rep;
}

std::vector<std::string> emit_plot_data(const std::string& report_dir) {
    const fs::path dir(report_dir);
    const fs::path src = dir / "plot_source.json";
    std::vector<std::string> missing;
    if (!fs::exists(src)) missing.push_back("plot_source.json");
    json pj;
    if (missing.empty()) {
        std::ifstream f(src);
        pj = json::parse(f);
        for (const auto& a : pj.value("artifacts", json::array()))
            if (!fs::exists(dir / a.get<std::string>())) missing.push_back(a.get<std::string>());
    }
    if (!missing.empty()) {
        std::string msg = "missing artifacts in " + report_dir + ":";
        for (const auto& m : missing) msg += " " + m;
        throw std::runtime_error(msg);
    }
    const fs::path out = dir / "plots";
    fs::create_directories(out);
    std::vector<std::string> written;
    const std::vector<double> times = pj["times"].get<std::vector<double>>();
    const std::vector<double> ctimes = pj["compare_times"].get<std::vector<double>>();

    {
        std::ofstream f(out / "diag_C_theta.csv");
        f << "time,series,value\n";
        if (pj.contains("diag"))
            for (auto it = pj["diag"].begin(); it != pj["diag"].end(); ++it)
                for (std::size_t i = 0; i < it->size(); ++i)
                    f << format_double(times[i]) << "," << it.key() << "," << format_double((*it)[i].get<double>()) << "\n";
        written.push_back((out / "diag_C_theta.csv").string());
    }
    {
        std::ofstream f(out / "qq.csv");
        f << "time,series,quantile,value\n";
        if (pj.contains("qq"))
            for (const auto& e : pj["qq"])
                for (const char* s : {"dmft", "empirical"})
                    for (std::size_t q = 0; q < e[s].size(); ++q)
                        f << format_double(e["time"].get<double>()) << "," << s << ","
                          << format_double(double(q + 1) / 20.0) << "," << format_double(e[s][q].get<double>()) << "\n";
        written.push_back((out / "qq.csv").string());
    }
    {
        std::ofstream f(out / "w2_vs_d.csv");
        f << "time,series,value\n";
        for (std::size_t q = 0; q < ctimes.size(); ++q)
            if (pj.contains("w2"))
                for (auto it = pj["w2"].begin(); it != pj["w2"].end(); ++it)
                    f << format_double(ctimes[q]) << ",d=" << it.key() << "," << format_double((*it)[q].get<double>())
                      << "\n";
        written.push_back((out / "w2_vs_d.csv").string());
    }
    return written;
}

}  // namespace dmftlab
