#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmftlab/design.hpp"
#include "dmftlab/loss.hpp"

namespace dmftlab {

enum class Mode { Simulate, Dmft, AmpOracle, Stationary, Compare, FullPipeline };
Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct LambdaSpec {
    std::string kind = "constant";  // constant | ramp
    double value = 0.0;             // constant: lambda I
    double start = 0.0, end = 0.0;  // ramp from start I to end I over t in [0, 1]
    bool operator==(const LambdaSpec&) const = default;
};
LambdaPath build_lambda(const LambdaSpec& spec, int k);

struct ExperimentConfig {
    std::string name = "run";
    Mode mode = Mode::FullPipeline;
    ModelSpec model;
    LambdaSpec lambda;
    // Laws kept in canonical JSON form: {"init": .., "planted": .. | null, "noise": ..}.
    nlohmann::json population;
    bool planted = false;

    int k = 1;
    double delta = 2.0;
    std::vector<long> d_values{250};
    std::optional<long> n;  // only with a single d; must equal delta * d
    std::string design_dist = "gaussian";
    int design_seeds = 1;

    double eta = 0.05;
    double T = 1.0;
    long mc_paths = 5000;
    long dmft_samples = 20000;
    bool psd_project = false;
    std::string oracle = "discrete";  // discrete | amp

    std::vector<double> compare_times{0.5};
    int directions = 128;
    double kernel_threshold = 0.06;
    std::optional<double> w2_threshold;
    std::string compare_a, compare_b;  // sample CSVs for mode=compare

    int gh_nodes = 41;
    int z_nodes = 21;
    long stat_mc_samples = 20000;
    double damping = 0.5;
    double tol = 1e-10;
    int max_iter = 500;
    double gordon_threshold = 1e-6;
    bool run_stationary = false;  // in full_pipeline

    std::uint64_t seed = 1;
    std::string output_dir;  // empty: $DMFT_LAB_OUT or ./runs
    int threads = 1;

    bool operator==(const ExperimentConfig&) const = default;
};

// Field paths in ConfigError follow the JSON layout, e.g. "grid.eta".
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

PopulationSpec build_population(const nlohmann::json& population, bool planted, int k);
VectorLaw parse_vector_law(const nlohmann::json& j, const std::string& path);
ScalarLaw parse_scalar_law(const nlohmann::json& j, const std::string& path);

struct MetricRow {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // "<=", ">=", "info"
    bool pass = true;
};

struct RunReport {
    nlohmann::json config;
    std::string fingerprint;
    std::vector<std::pair<std::string, double>> stage_seconds;
    std::vector<MetricRow> metrics;
    std::vector<std::string> artifacts;  // paths relative to run_dir
    std::string run_dir;
    std::string error;
    int exit_code = 0;  // 0 all pass, 2 metric failure, 1 execution error

    nlohmann::json to_json() const;
};

// Output root: explicit argument, else $DMFT_LAB_OUT, else "runs".
std::string default_output_root();

RunReport run_experiment(const ExperimentConfig& config);

// Writes plots/{diag_C_theta,qq,w2_vs_d}.csv from plot_source.json in the run
// directory. Returns the written paths.
std::vector<std::string> emit_plot_data(const std::string& report_dir);

}  // namespace dmftlab
