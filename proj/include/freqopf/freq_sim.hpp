#pragma once

// Reduced-order post-contingency frequency simulator.
//
// Synchronous units: swing equation behind a transient reactance, proportional
// droop governor feeding a first-order turbine lag. Grid-forming inverter share:
// droop plus virtual inertia through a first-order power loop, saturated at the
// reserved headroom. Grid-following share: constant power. The network is a DC
// (lossless, linear) Kron-reduced to the machine internal nodes.

#include "freqopf/dispatch.hpp"
#include "freqopf/grid_model.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace freqopf {

struct SimConfig {
    double dt_s = 0.001;
    double t_end_s = 20.0;
    double rocof_window_s = 0.167;
    std::optional<Contingency> event;

    bool include_outaged_inertia = false;
    bool governors_enabled = true;
    bool gfm_enabled = true;

    double transient_reactance_pu = 0.25;  ///< machine base
    double intermachine_damping = 2.0;     ///< 1/s, acts on f_g - f_coi only
    double gfm_measurement_filter_s = 0.02;
    double settle_window_s = 1.0;
    double settle_tol_hz_s = 1e-3;

    /// Scales every unit's inertia constant; used for sensitivity studies.
    double inertia_scale = 1.0;
};

struct SimState {
    double time_s = 0.0;
    std::vector<double> rotor_freq_hz;
    std::vector<double> rotor_angle_rad;
    std::vector<double> mech_power_pu;
    std::vector<double> valve_pu;        ///< governor output (algebraic)
    std::vector<double> gfm_power_pu;
    std::vector<double> gfm_freq_state_hz;
};

struct FreqMetrics {
    double worst_rocof_hz_per_s = 0.0;
    double nadir_hz = 0.0;
    std::vector<double> headroom_used_mw;  ///< per IBR
    bool settled = false;
};

struct Trajectory {
    std::vector<double> t_s;
    std::vector<double> f_coi_hz;
    std::vector<std::vector<double>> f_gen_hz;     ///< [gen][sample]
    std::vector<std::vector<double>> p_gfm_mw;     ///< [ibr][sample]
};

struct SimResult {
    Trajectory trajectory;
    FreqMetrics metrics;
    std::vector<int> gen_ids;
    std::vector<int> ibr_ids;
};

/// Equilibrium state for a balanced dispatch. Throws Unbalanced.
SimState steady_state_init(const GridCase& gc, const Dispatch& d, const SimConfig& cfg = {});

/// Max |d/dt| over all state variables at the given state (pre-event dynamics).
double max_state_derivative(const GridCase& gc, const Dispatch& d, const SimState& s, const SimConfig& cfg = {});

/// Fixed-step RK4 run. Throws NumericalDivergence, Unbalanced, InvalidConfig.
SimResult simulate(const GridCase& gc, const Dispatch& d, const SimConfig& cfg);

/// Inertia-weighted mean frequency; inertias on a common base (MW*s). Throws EmptySystem.
double coi_frequency(std::span<const double> freqs_hz, std::span<const double> inertias_mws);

/// Most negative windowed difference quotient of f over the series. Throws TooShort.
double worst_rocof(std::span<const double> t_s, std::span<const double> f_hz, double window_s);

/// Minimum of the series. Throws Empty.
double frequency_nadir(std::span<const double> f_hz);

/// Max over t >= event_time of (P(t) - pre_event), floored at 0. Throws Empty.
double gfm_headroom_used(std::span<const double> t_s, std::span<const double> p_mw, double pre_event_mw,
                         double event_time_s = 0.0);

void write_trajectory_csv(const SimResult& r, const std::filesystem::path& path);

/// Dispatch with angles/flows left empty; GFM/GFL split from alpha. For tests and tools.
Dispatch make_dispatch(const GridCase& gc, std::vector<double> p_gen_mw, std::vector<double> p_ibr_mw,
                       std::vector<double> alpha);

}  // namespace freqopf
