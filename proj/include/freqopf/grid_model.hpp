#pragma once

// Static grid description: buses, lines, synchronous units and inverter plants.
// Quantities are stored in the engineering units of the case file (MW, MVA, s);
// solvers convert to per-unit on base_mva at their boundary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace freqopf {

struct Bus {
    int id = 0;
    double load_mw = 0.0;

    bool operator==(const Bus&) const = default;
};

struct Line {
    int id = 0;
    int from_bus = 0;
    int to_bus = 0;
    double reactance_pu = 0.0;
    double thermal_limit_mw = 0.0;

    bool operator==(const Line&) const = default;
};

struct SyncGen {
    int id = 0;
    int bus = 0;
    double p_min_mw = 0.0;
    double p_max_mw = 0.0;
    double inertia_h_s = 0.0;  ///< on machine base rating_mva
    double rating_mva = 0.0;
    double cost_a = 0.0;       ///< $/MW^2h
    double cost_b = 0.0;       ///< $/MWh
    double cost_c = 0.0;       ///< $/h
    double governor_droop_pu = 0.05;
    double turbine_time_const_s = 0.3;
    bool outage_candidate = false;

    /// Stored kinetic energy at rated speed, MW*s.
    double kinetic_energy_mws() const { return inertia_h_s * rating_mva; }

    bool operator==(const SyncGen&) const = default;
};

struct InverterPlant {
    int id = 0;
    int bus = 0;
    double p_available_max_mw = 0.0;
    double gfm_droop_pu = 0.02;
    double gfm_virtual_inertia_s = 0.0;
    double gfm_response_time_const_s = 0.1;

    bool operator==(const InverterPlant&) const = default;
};

struct Contingency {
    int outaged_gen_id = 0;
    double event_time_s = 1.0;

    bool operator==(const Contingency&) const = default;
};

struct GridCase {
    double base_mva = 100.0;
    double base_freq_hz = 60.0;
    int slack_bus = 0;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<SyncGen> gens;
    std::vector<InverterPlant> ibrs;

    // Index lookups; -1 when absent.
    int bus_index(int bus_id) const;
    int gen_index(int gen_id) const;
    int ibr_index(int ibr_id) const;

    const SyncGen& gen(int gen_id) const;

    double total_load_mw() const;
    double total_capacity_mw() const;
    /// Buses with strictly positive load, in bus order.
    std::vector<int> load_bus_ids() const;
    /// Outage-candidate generator ids, in gen order.
    std::vector<int> outage_candidate_ids() const;

    bool operator==(const GridCase&) const = default;
};

/// Parse a case document (JSON text). Throws Error{ParseError|ValidationError}.
GridCase parse_case(const std::string& text);
GridCase load_case(const std::filesystem::path& path);

std::string case_to_json(const GridCase& gc, int indent = 2);
void save_case(const GridCase& gc, const std::filesystem::path& path);

/// All invariant violations; empty iff the case is valid.
std::vector<std::string> validate_case(const GridCase& gc);

/// Copy of the case with the outaged unit removed. Throws UnknownGen / NotOutageCandidate.
GridCase apply_contingency(const GridCase& gc, const Contingency& c);

/// Check a contingency against a case without building the reduced case.
void check_contingency(const GridCase& gc, const Contingency& c);

/// Loads multiplied by load_scale, inverter availability by ibr_scale.
GridCase scale_case(const GridCase& gc, double load_scale, double ibr_scale);

/// Stable 64-bit FNV-1a hash of the canonical case document, as hex.
std::string case_fingerprint(const GridCase& gc);

/// Sum of H*S over online units (MW*s), optionally excluding one unit.
double system_kinetic_energy_mws(const GridCase& gc, std::optional<int> exclude_gen_id = std::nullopt);

/// Directory holding the bundled case files.
std::filesystem::path bundled_case_dir();
GridCase load_bundled_case(const std::string& name);

}  // namespace freqopf
