#pragma once

// End-to-end runs: dataset, predictor, the three dispatch models, simulator
// validation, sweeps, charts and the output manifest.

#include "freqopf/dataset_gen.hpp"
#include "freqopf/freq_sim.hpp"
#include "freqopf/neural_predictor.hpp"
#include "freqopf/opf_models.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace freqopf {

struct RunConfig {
    GridCase grid;
    std::string case_name;
    Contingency contingency;
    FreqLimits limits;
    EncodingChoice encoding;
    std::vector<int> hidden{32};
    int samples = 2000;
    std::uint64_t seed = 1;
    double time_limit_s = 60.0;
    double load_scale = 1.0;
    double ibr_scale = 1.0;
    bool refine_mccormick = false;
    int threads = 0;  ///< 0 = hardware concurrency
    ScenarioRanges ranges;
    TrainConfig train;
    SimConfig sim;
    OpfOptions opf;
    std::optional<std::filesystem::path> dataset_path;
    std::optional<std::filesystem::path> net_path;
    std::filesystem::path out_dir = "out";
    std::vector<double> penalty_grid{10, 100, 1000, 5000, 10000};
    std::vector<int> neuron_grid{4, 8, 16, 32, 64};
    int two_layer_first = 32;
};

/// Per-stage seeds derived from the top seed.
enum class SeedStage : std::uint64_t { Dataset = 1, Train = 2, Sweep = 3 };
std::uint64_t stage_seed(std::uint64_t top, SeedStage stage);

/// Reads a JSON config. Keys mirror the CLI flags; the case is loaded from "case" (file or bundled name).
/// Throws ParseError / ValidationError / IoError.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");

/// Case file path or bundled case name.
GridCase resolve_case(const std::string& ref, std::string* name = nullptr);

/// Loads or builds the dataset the config points at.
Dataset obtain_dataset(const RunConfig& cfg, BuildReport* report = nullptr);
/// Loads the configured net, or trains one on obtain_dataset().
MlpNet obtain_predictor(const RunConfig& cfg, TrainReport* report = nullptr);

struct MetricTriple {
    std::optional<double> estimated;
    std::optional<double> exact;
    std::optional<double> rel_error;  ///< |est - exact| / |exact| when both exist
};

struct ModelRow {
    ModelKind kind = ModelKind::TOPF;
    std::string status;
    std::string error;  ///< non-empty on failure
    std::optional<Dispatch> dispatch;
    double cost = 0.0;
    double solve_time_s = 0.0;
    double p_outage_mw = 0.0;
    MetricTriple rocof, nadir;
    std::vector<MetricTriple> headroom;  ///< per IBR, MW
    std::optional<SimResult> sim;
};

struct ComparisonReport {
    std::string case_name;
    std::string case_fingerprint;
    Contingency contingency;
    FreqLimits limits;
    EncodingChoice encoding;
    double load_scale = 1.0, ibr_scale = 1.0;
    std::vector<ModelRow> rows;
};

/// Solves T-OPF, L-FCOPF and DL-FCOPF on identical conditions and validates each dispatch.
ComparisonReport run_pipeline(const RunConfig& cfg, const MlpNet& net);
ComparisonReport run_pipeline(const RunConfig& cfg);

/// Simulates one dispatch under the configured contingency.
SimResult validate_dispatch(const GridCase& gc, const Dispatch& d, const Contingency& c, const SimConfig& sim = {});

enum class SweepAxis { Neurons1Layer, Neurons2Layer, Penalty, Encoding };
const char* axis_name(SweepAxis a);
SweepAxis parse_axis(const std::string& s);

struct SweepRow {
    std::string label;
    double value = 0.0;
    std::string status;
    std::string error;
    double cost = 0.0;
    std::vector<double> alpha;
    double solve_time_s = 0.0;
    double mip_gap = 0.0;
    double linearization_error = 0.0;
    double real_error = 0.0;  ///< MSE over RoCoF, nadir and per-IBR headroom (pu) vs the simulator
    double mccormick_gap_mw = 0.0;
};

struct SweepTable {
    SweepAxis axis = SweepAxis::Penalty;
    std::vector<SweepRow> rows;
};

/// Architecture axes train on data; penalty and encoding axes reuse net.
SweepTable run_sensitivity_sweep(const RunConfig& cfg, SweepAxis axis, const Dataset* data, const MlpNet* net);

std::string report_to_json(const ComparisonReport& r);
std::string sweep_to_json(const SweepTable& t);
/// Dispatch from the JSON written by dispatch_to_json. Throws ParseError.
Dispatch dispatch_from_json(const std::string& text, const GridCase& gc);

struct Chart {
    std::string title, x_label, y_label;
    struct Series {
        std::string name;
        std::vector<double> x, y;
    };
    std::vector<Series> series;
};

void write_chart_svg(const Chart& c, const std::filesystem::path& path);
void write_chart_csv(const Chart& c, const std::filesystem::path& path);
Chart read_chart_csv(const std::filesystem::path& path);

/// Windowed RoCoF series (f(t) - f(t - w)) / w for t >= w.
Chart::Series rocof_series(const Trajectory& t, double window_s, const std::string& name);

/// Returns written files. Throws IoError.
std::vector<std::filesystem::path> emit_plots(const ComparisonReport& r, const std::filesystem::path& dir,
                                              double rocof_window_s = 0.167);
std::vector<std::filesystem::path> emit_plots(const SweepTable& t, const std::filesystem::path& dir);

/// manifest.json listing files relative to dir.
std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::vector<std::filesystem::path>& files);

}  // namespace freqopf
