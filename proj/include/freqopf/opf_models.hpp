#pragma once

// DC dispatch models: plain DC-OPF, the same with a swing-equation RoCoF cap,
// and the same with an embedded ReLU frequency predictor. All decision
// variables are per-unit on the case base; Dispatch converts back to MW.

#include "freqopf/dispatch.hpp"
#include "freqopf/grid_model.hpp"
#include "freqopf/neural_predictor.hpp"
#include "freqopf/opt_kernel.hpp"

#include <optional>
#include <string>
#include <vector>

namespace freqopf {

struct FreqLimits {
    double rocof_limit_hz_per_s = -0.5;
    double nadir_limit_hz = 59.5;

    /// Sentinels that switch both constraints off.
    static FreqLimits disabled() { return {-kInf, -kInf}; }
};

enum class EncodingKind { BPWL, CTAR, PCTAR, PCAR };
const char* encoding_name(EncodingKind k);
EncodingKind parse_encoding(const std::string& s);

struct EncodingChoice {
    EncodingKind kind = EncodingKind::BPWL;
    double penalty = 5000.0;  ///< c_h, used by PCTAR and PCAR
};

enum class ModelKind { TOPF, LFCOPF, DLFCOPF };
const char* model_name(ModelKind k);

struct OpfOptions {
    int pwl_segments = 10;
    bool include_outaged_inertia = false;
    /// LP-based tightening of neuron bounds over the model relaxation (BPWL only).
    bool tighten_bpwl_bounds = true;
};

/// One feature of the embedded network: a model variable (x = scale * var) or a constant.
struct InputWire {
    int var = -1;
    double scale = 1.0;
    double constant = 0.0;

    static InputWire variable(int v, double s = 1.0) { return {v, s, 0.0}; }
    static InputWire fixed(double c) { return {-1, 1.0, c}; }
};

struct EmbeddedNetwork {
    std::vector<int> outputs;                   ///< variables equal to the raw network outputs
    std::vector<std::vector<int>> pre;          ///< pre-activation variables per hidden layer
    std::vector<std::vector<int>> post;         ///< post-activation variables per hidden layer
    std::vector<std::vector<int>> binaries;     ///< -1 where the encoding adds none
    /// Bound-dependent rows per neuron: (upper row, BPWL off row or -1).
    std::vector<std::vector<std::pair<int, int>>> relu_rows;
    EncodingChoice encoding;
    int binary_count = 0;                       ///< binaries left free after bound fixing
};

/// Appends the network as constraints on m. Throws UnsoundBounds / DimensionMismatch.
EmbeddedNetwork embed_network(OptModel& m, const MlpNet& net, const NeuronBounds& bounds, const EncodingChoice& enc,
                              const std::vector<InputWire>& wiring);

/// Replaces the interval of one hidden neuron and rewrites its encoding rows.
void set_neuron_bounds(OptModel& m, EmbeddedNetwork& e, std::size_t layer, std::size_t neuron, double lo, double hi);

/// Shrinks every neuron interval to the LP-relaxation range of its pre-activation, layer by layer.
/// Returns the number of neurons that became stable.
int tighten_neuron_bounds(OptModel& m, EmbeddedNetwork& e);

/// Max over hidden neurons of |z - max(zhat, 0)| at a point (normalized units).
double linearization_error(const EmbeddedNetwork& e, const std::vector<double>& x);

struct OpfModel {
    ModelKind kind = ModelKind::TOPF;
    GridCase gc;
    OptModel model;
    std::vector<int> p_gen, p_ibr, theta, flow;
    std::vector<double> pwl_error_bound;   ///< $/h per gen

    // Frequency models.
    std::optional<Contingency> contingency;
    double rocof_coef = 0.0;               ///< L-FCOPF estimate = rocof_coef * P_otg (pu)
    double rocof_cap_pu = kInf;            ///< L-FCOPF bound on P_otg (pu)
    FreqLimits limits = FreqLimits::disabled();

    // DL-FCOPF.
    EncodingChoice encoding;
    EmbeddedNetwork net;
    MlpNet predictor;
    std::vector<InputWire> wiring;
    std::vector<int> p_gfm, p_gfl, alpha, mccormick_w;
    std::vector<std::vector<int>> mccormick_rows;  ///< 4 per IBR
    std::vector<std::pair<double, double>> alpha_box;
    int out_rocof = -1, out_nadir = -1;
    std::vector<int> out_alpha, out_headroom;
    int rocof_row = -1, nadir_row = -1;
    double build_time_s = 0.0;             ///< includes bound tightening
};

/// Plain DC-OPF with PWL generation costs.
OpfModel build_topf(const GridCase& gc, const OpfOptions& opt = {});

/// DC-OPF plus the linear RoCoF cap on the outaged unit.
OpfModel build_lfcopf(const GridCase& gc, const Contingency& c, const FreqLimits& limits, const OpfOptions& opt = {});

/// Raw-feature box implied by the case (loads and contingency fixed).
void predictor_input_box(const GridCase& gc, const Contingency& c, Eigen::VectorXd& lo, Eigen::VectorXd& hi);

/// DC-OPF plus the embedded predictor and its output couplings.
OpfModel build_dlfcopf(const GridCase& gc, const Contingency& c, const MlpNet& net, const FreqLimits& limits,
                       const EncodingChoice& enc, const OpfOptions& opt = {});

/// Narrow the McCormick envelope of IBR i to alpha in [lo, hi].
void set_alpha_box(OpfModel& om, std::size_t ibr, double lo, double hi);

/// Throws NotOptimal unless s is Optimal (or TimeLimit with an incumbent when allowed).
Dispatch extract_dispatch(const OpfModel& om, const Solution& s, bool allow_incumbent = false);

/// Feature vector of the predictor for a dispatch.
Eigen::VectorXd dispatch_features(const GridCase& gc, const Dispatch& d, const Contingency& c);

/// Max over IBRs of |P_GFM - P_IBR * alpha|, MW.
double mccormick_gap_mw(const OpfModel& om, const std::vector<double>& x);

struct LimitDiagnostic {
    double rocof_violation_hz_s = 0.0;
    double nadir_violation_hz = 0.0;
    SolveStatus status = SolveStatus::Infeasible;
};

struct SolveConfig {
    double time_limit_s = 60.0;
    double mip_rel_gap = 1e-6;
    /// BPWL: re-tighten neuron bounds under an objective cap from the activation heuristic.
    bool cutoff_tightening = true;
    bool refine_mccormick = false;
    int max_refinements = 12;
    double mccormick_tol_frac = 1e-3;   ///< of p_available_max
    bool diagnose_infeasible = true;
};

struct OpfResult {
    Solution solution;
    std::optional<Dispatch> dispatch;
    std::optional<LimitDiagnostic> diagnostic;
    double mccormick_gap_mw = 0.0;
    bool mccormick_ok = true;
    double linearization_error = 0.0;
    int refinements = 0;
};

/// Solve with the LP or MILP kernel as the model requires.
OpfResult solve_opf(OpfModel& om, const SolveConfig& cfg = {});

/// Dispatch export with model metadata.
std::string dispatch_to_json(const Dispatch& d, const OpfModel& om, const OpfResult& r);

}  // namespace freqopf
