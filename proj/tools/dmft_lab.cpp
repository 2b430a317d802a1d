#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "dmftlab/errors.hpp"
#include "dmftlab/experiment.hpp"
#include "dmftlab/kernel.hpp"

using namespace dmftlab;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    int threads = 0;
    std::string out;
    std::optional<double> eta, T;
    std::optional<long> mc_paths;
    bool planted = false, psd_project = false;
    std::string oracle;
};

struct StationaryFlags {
    std::string loss;
    std::optional<double> delta, lambda, gamma2, tol, damping;
};

void add_common(CLI::App* sub, Common& c, bool need_config) {
    auto* opt = sub->add_option("--config", c.config, "experiment config (JSON)");
    if (need_config) opt->required();
    sub->add_option("--threads", c.threads, "worker cap");
    sub->add_option("--out", c.out, "output root (default $DMFT_LAB_OUT or ./runs)");
    sub->add_option("--eta", c.eta, "override grid.eta");
    sub->add_option("--T", c.T, "override grid.T");
    sub->add_option("--mc-paths", c.mc_paths, "override dmft.mc_paths");
    sub->add_flag("--planted", c.planted, "planted mode");
    sub->add_flag("--psd-project", c.psd_project, "clip negative eigenvalues when factoring kernels");
    sub->add_option("--oracle", c.oracle, "discrete | amp");
}

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
}

void apply_common(json& j, const Common& c, const std::string& mode) {
    j["mode"] = mode;
    if (c.threads > 0) j["threads"] = c.threads;
    if (!c.out.empty()) j["output_dir"] = c.out;
    if (c.eta) j["grid"]["eta"] = *c.eta;
    if (c.T) j["grid"]["T"] = *c.T;
    if (c.mc_paths) j["dmft"]["mc_paths"] = *c.mc_paths;
    if (c.planted) j["planted"] = true;
    if (c.psd_project) j["dmft"]["psd_project"] = true;
    if (!c.oracle.empty()) j["dmft"]["oracle"] = c.oracle;
}

// Config for `stationary` without --config.
json stationary_config(const StationaryFlags& s) {
    json j;
    const double g2 = s.gamma2.value_or(0.0);
    j["name"] = "stationary_" + s.loss;
    if (s.loss == "logistic") {
        j["model"] = {{"type", "glm"}, {"link", "logistic"}, {"loss", "logistic"}};
        j["population"]["noise"] = {{"kind", "logistic"}, {"loc", 0.0}, {"scale", 1.0}};
    } else if (s.loss == "linear" || s.loss == "ridge") {
        j["model"] = {{"type", "glm"}, {"link", "linear"}, {"loss", "square"}};
    } else {
        throw ConfigError("loss", "expected logistic or linear without --config");
    }
    if (g2 > 0.0) {
        j["planted"] = true;
        j["population"]["planted"] = {{"kind", "gaussian"}, {"mean", {0.0, 0.0}}, {"cov", {{1.0, 0.0}, {0.0, g2}}}};
    }
    return j;
}

int print_report(const RunReport& r) {
    for (const auto& m : r.metrics) {
        if (m.relation == "info") std::printf("  %-40s %.6g\n", m.name.c_str(), m.value);
        else
            std::printf("  %-40s %.6g %s %.6g  %s\n", m.name.c_str(), m.value, m.relation.c_str(), m.threshold,
                        m.pass ? "PASS" : "FAIL");
    }
    if (!r.error.empty()) std::fprintf(stderr, "error: %s\n", r.error.c_str());
    std::printf("run directory: %s\nexit code: %d\n", r.run_dir.c_str(), r.exit_code);
    return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dmft-lab: finite-size gradient flow, DMFT kernels and stationary points"};
    app.require_subcommand(1);

    Common common;
    StationaryFlags sflags;
    std::string plot_dir;
    const std::vector<std::string> modes{"simulate", "dmft", "amp_oracle", "compare", "full_pipeline"};
    std::vector<CLI::App*> subs;
    for (const auto& m : modes) {
        auto* sub = app.add_subcommand(m, "run mode " + m);
        add_common(sub, common, true);
        subs.push_back(sub);
    }
    auto* st = app.add_subcommand("stationary", "long-time fixed point and Gordon residual");
    add_common(st, common, false);
    st->add_option("--loss", sflags.loss, "logistic | linear (used without --config)");
    st->add_option("--delta", sflags.delta, "aspect ratio n/d");
    st->add_option("--lambda", sflags.lambda, "ridge strength");
    st->add_option("--gamma2", sflags.gamma2, "second moment of theta_star");
    st->add_option("--tol", sflags.tol, "fixed-point tolerance");
    st->add_option("--damping", sflags.damping, "damping in (0, 1]");
    auto* ep = app.add_subcommand("emit-plots", "tidy CSVs from a finished run directory");
    ep->add_option("dir", plot_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ep->parsed()) {
            for (const auto& p : emit_plot_data(plot_dir)) std::printf("%s\n", p.c_str());
            return 0;
        }
        std::string mode;
        json j;
        if (st->parsed()) {
            mode = "stationary";
            if (!common.config.empty()) j = read_json(common.config);
            else if (!sflags.loss.empty()) j = stationary_config(sflags);
            else throw ConfigError("config", "stationary needs --config or --loss");
            if (sflags.delta) j["dims"]["delta"] = *sflags.delta;
            if (sflags.lambda) j["lambda"] = {{"kind", "constant"}, {"value", *sflags.lambda}};
            if (sflags.tol) j["stationary"]["tol"] = *sflags.tol;
            if (sflags.damping) j["stationary"]["damping"] = *sflags.damping;
            if (sflags.gamma2 && !common.config.empty())
                throw ConfigError("gamma2", "set the planted law in the config file instead");
        } else {
            for (std::size_t i = 0; i < subs.size(); ++i)
                if (subs[i]->parsed()) mode = modes[i];
            j = read_json(common.config);
        }
        apply_common(j, common, mode);
        const ExperimentConfig cfg = parse_config(j);
        return print_report(run_experiment(cfg));
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
