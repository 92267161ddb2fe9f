#pragma once

// Scenario sampling and labeling for predictor training data.

#include "freqopf/freq_sim.hpp"
#include "freqopf/grid_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace freqopf {

inline constexpr int kDatasetSchemaVersion = 1;

using Range = std::pair<double, double>;

struct ScenarioRanges {
    Range load_scale{0.9, 1.1};
    Range ibr_scale{0.9, 1.1};
    Range sg_setpoint_scale{0.75, 1.25};
    Range gfm_alpha{0.0, 1.0};
    /// Output levels of the outage candidate, as fractions of its p_max.
    std::vector<double> restricted_gen_levels{0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

    /// Throws InvalidConfig.
    void validate() const;
};

/// Defaults for a case: the wider load band applies to systems with 30 or more buses.
ScenarioRanges default_ranges(const GridCase& gc);

struct Scenario {
    int id = 0;
    double load_scale = 1.0;
    double ibr_scale = 1.0;
    int restricted_gen_id = 0;
    double restricted_output_mw = 0.0;
    std::vector<double> sg_setpoint_scale;  ///< per gen; ignored for the restricted unit
    std::vector<double> gfm_alpha;          ///< per IBR
    Contingency contingency;

    bool operator==(const Scenario&) const = default;
};

struct Sample {
    int scenario_id = 0;
    Eigen::VectorXd features;
    Eigen::VectorXd labels;
};

struct Dataset {
    std::string case_fingerprint;
    std::uint64_t seed = 0;
    int schema_version = kDatasetSchemaVersion;
    ScenarioRanges ranges;
    std::vector<std::string> feature_names;
    std::vector<std::string> label_names;
    std::vector<Sample> samples;

    Eigen::MatrixXd feature_matrix() const;
    Eigen::MatrixXd label_matrix() const;
};

/// Column names, f_/l_ prefixed.
std::vector<std::string> feature_names(const GridCase& gc);
std::vector<std::string> label_names(const GridCase& gc);

/// Label column offsets.
struct LabelLayout {
    int alpha = 0, headroom = 0, rocof = 0, nadir = 0;
};
LabelLayout label_layout(const GridCase& gc);

/// Stratified over (candidate, level) cells, uniform within. Throws NoOutageCandidates / InvalidConfig.
std::vector<Scenario> generate_scenarios(const GridCase& gc, const ScenarioRanges& ranges, int n, std::uint64_t seed);

/// Throws InfeasibleScenario / UnsettledSimulation.
Sample label_scenario(const GridCase& gc, const Scenario& s, const SimConfig& sim = {});

/// Dispatch fed to the simulator for a scenario (scaled case returned through scaled).
Dispatch scenario_dispatch(const GridCase& gc, const Scenario& s, GridCase& scaled);

struct SkippedScenario {
    int scenario_id = 0;
    std::string reason;
};

struct BuildReport {
    std::vector<SkippedScenario> skipped;
    double elapsed_s = 0.0;
};

/// Labels every scenario on a bounded worker pool; samples ordered by scenario id.
Dataset build_dataset(const GridCase& gc, const ScenarioRanges& ranges, int n, std::uint64_t seed,
                      BuildReport* report = nullptr, int threads = 0, const SimConfig& sim = {});

/// Writes path (CSV) and path + ".meta.json".
void write_dataset(const Dataset& d, const std::filesystem::path& path);
/// Throws SchemaMismatch / FingerprintMismatch / IoError.
Dataset read_dataset(const std::filesystem::path& path, const GridCase& gc);

}  // namespace freqopf
