#pragma once

#include "freqopf/grid_model.hpp"

#include <filesystem>
#include <string>

namespace fixtures {

using namespace freqopf;

inline SyncGen gen(int id, int bus, double pmin, double pmax, double h, double rating, double b, bool candidate = false)
{
    SyncGen g;
    g.id = id;
    g.bus = bus;
    g.p_min_mw = pmin;
    g.p_max_mw = pmax;
    g.inertia_h_s = h;
    g.rating_mva = rating;
    g.cost_b = b;
    g.outage_candidate = candidate;
    return g;
}

/// Two buses joined by one line; gen 1 at bus 1, gen 2 at bus 2, load at bus 2.
inline GridCase two_bus(double load_mw, double line_limit_mw, double b1 = 10.0, double b2 = 30.0)
{
    GridCase gc;
    gc.slack_bus = 1;
    gc.buses = {{1, 0.0}, {2, load_mw}};
    gc.lines = {{1, 1, 2, 0.1, line_limit_mw}};
    gc.gens = {gen(1, 1, 0, 100, 5.0, 120, b1, true), gen(2, 2, 0, 100, 10.0, 100, b2)};
    return gc;
}

/// two_bus plus an inverter plant at bus 2.
inline GridCase two_bus_ibr(double load_mw, double p_avail_mw)
{
    GridCase gc = two_bus(load_mw, 500.0);
    InverterPlant p;
    p.id = 1;
    p.bus = 2;
    p.p_available_max_mw = p_avail_mw;
    p.gfm_virtual_inertia_s = 4.0;
    gc.ibrs = {p};
    return gc;
}

inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("freqopf_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixtures
