#pragma once

#include <optional>
#include <string>
#include <vector>

namespace freqopf {

/// A solved operating point. Per-unit vectors are aligned with the case's
/// gens / ibrs / buses / lines order; values are in MW and rad.
struct Dispatch {
    std::vector<int> gen_ids;
    std::vector<double> p_gen_mw;

    std::vector<int> ibr_ids;
    std::vector<double> p_ibr_mw;
    std::vector<double> p_gfm_mw;
    std::vector<double> p_gfl_mw;
    std::vector<double> alpha;        ///< GFM share of each plant, in [0, 1]
    std::vector<double> headroom_mw;  ///< reserved headroom p_available_max - p_ibr

    std::vector<int> bus_ids;
    std::vector<double> angle_rad;
    std::vector<int> line_ids;
    std::vector<double> flow_mw;

    std::optional<double> predicted_rocof_hz_s;
    std::optional<double> predicted_nadir_hz;
    std::vector<double> predicted_headroom_mw;

    double total_cost = 0.0;  ///< generation cost only, penalty terms excluded
    double solve_time_s = 0.0;
};

}  // namespace freqopf
