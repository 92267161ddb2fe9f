#include "freqopf/grid_model.hpp"

#include "freqopf/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#ifndef FREQOPF_DATA_DIR
#define FREQOPF_DATA_DIR "data"
#endif

namespace freqopf {

using nlohmann::json;

int GridCase::bus_index(int bus_id) const
{
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].id == bus_id)
            return static_cast<int>(i);
    return -1;
}

int GridCase::gen_index(int gen_id) const
{
    for (std::size_t i = 0; i < gens.size(); ++i)
        if (gens[i].id == gen_id)
            return static_cast<int>(i);
    return -1;
}

int GridCase::ibr_index(int ibr_id) const
{
    for (std::size_t i = 0; i < ibrs.size(); ++i)
        if (ibrs[i].id == ibr_id)
            return static_cast<int>(i);
    return -1;
}

const SyncGen& GridCase::gen(int gen_id) const
{
    int idx = gen_index(gen_id);
    if (idx < 0)
        throw Error(Errc::UnknownGen, "generator " + std::to_string(gen_id) + " not in case");
    return gens[static_cast<std::size_t>(idx)];
}

double GridCase::total_load_mw() const
{
    double s = 0.0;
    for (const auto& b : buses)
        s += b.load_mw;
    return s;
}

double GridCase::total_capacity_mw() const
{
    double s = 0.0;
    for (const auto& g : gens)
        s += g.p_max_mw;
    for (const auto& p : ibrs)
        s += p.p_available_max_mw;
    return s;
}

std::vector<int> GridCase::load_bus_ids() const
{
    std::vector<int> ids;
    for (const auto& b : buses)
        if (b.load_mw > 0.0)
            ids.push_back(b.id);
    return ids;
}

std::vector<int> GridCase::outage_candidate_ids() const
{
    std::vector<int> ids;
    for (const auto& g : gens)
        if (g.outage_candidate)
            ids.push_back(g.id);
    return ids;
}

namespace {

void require_keys(const json& obj, const std::set<std::string>& required, const std::set<std::string>& optional,
                  const std::string& where)
{
    if (!obj.is_object())
        throw Error(Errc::ParseError, where + " is not an object");
    for (const auto& [key, _] : obj.items()) {
        if (!required.count(key) && !optional.count(key))
            throw Error(Errc::ParseError, where + ": unknown key '" + key + "'");
    }
    for (const auto& key : required) {
        if (!obj.contains(key))
            throw Error(Errc::ParseError, where + ": missing key '" + key + "'");
    }
}

template <class T>
T get_field(const json& obj, const char* key, const std::string& where)
{
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, where + "." + key + ": " + e.what());
    }
}

const json& get_array(const json& doc, const char* key)
{
    const json& arr = doc.at(key);
    if (!arr.is_array())
        throw Error(Errc::ParseError, std::string(key) + " must be an array");
    return arr;
}

}  // namespace

GridCase parse_case(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::ParseError, e.what());
    }
    require_keys(doc, {"base_mva", "base_freq_hz", "buses", "lines", "gens", "ibrs"}, {"slack_bus"}, "case");

    GridCase gc;
    gc.base_mva = get_field<double>(doc, "base_mva", "case");
    gc.base_freq_hz = get_field<double>(doc, "base_freq_hz", "case");

    for (const auto& b : get_array(doc, "buses")) {
        std::string where = "buses[]";
        require_keys(b, {"id", "load_mw"}, {}, where);
        gc.buses.push_back({get_field<int>(b, "id", where), get_field<double>(b, "load_mw", where)});
    }
    for (const auto& l : get_array(doc, "lines")) {
        std::string where = "lines[]";
        require_keys(l, {"id", "from_bus", "to_bus", "reactance_pu", "thermal_limit_mw"}, {}, where);
        gc.lines.push_back({get_field<int>(l, "id", where), get_field<int>(l, "from_bus", where),
                            get_field<int>(l, "to_bus", where), get_field<double>(l, "reactance_pu", where),
                            get_field<double>(l, "thermal_limit_mw", where)});
    }
    for (const auto& g : get_array(doc, "gens")) {
        std::string where = "gens[]";
        require_keys(g,
                     {"id", "bus", "p_min_mw", "p_max_mw", "inertia_h_s", "rating_mva", "cost_a", "cost_b", "cost_c",
                      "governor_droop_pu", "turbine_time_const_s", "outage_candidate"},
                     {}, where);
        SyncGen sg;
        sg.id = get_field<int>(g, "id", where);
        sg.bus = get_field<int>(g, "bus", where);
        sg.p_min_mw = get_field<double>(g, "p_min_mw", where);
        sg.p_max_mw = get_field<double>(g, "p_max_mw", where);
        sg.inertia_h_s = get_field<double>(g, "inertia_h_s", where);
        sg.rating_mva = get_field<double>(g, "rating_mva", where);
        sg.cost_a = get_field<double>(g, "cost_a", where);
        sg.cost_b = get_field<double>(g, "cost_b", where);
        sg.cost_c = get_field<double>(g, "cost_c", where);
        sg.governor_droop_pu = get_field<double>(g, "governor_droop_pu", where);
        sg.turbine_time_const_s = get_field<double>(g, "turbine_time_const_s", where);
        sg.outage_candidate = get_field<bool>(g, "outage_candidate", where);
        gc.gens.push_back(sg);
    }
    for (const auto& p : get_array(doc, "ibrs")) {
        std::string where = "ibrs[]";
        require_keys(p,
                     {"id", "bus", "p_available_max_mw", "gfm_droop_pu", "gfm_virtual_inertia_s",
                      "gfm_response_time_const_s"},
                     {}, where);
        InverterPlant ip;
        ip.id = get_field<int>(p, "id", where);
        ip.bus = get_field<int>(p, "bus", where);
        ip.p_available_max_mw = get_field<double>(p, "p_available_max_mw", where);
        ip.gfm_droop_pu = get_field<double>(p, "gfm_droop_pu", where);
        ip.gfm_virtual_inertia_s = get_field<double>(p, "gfm_virtual_inertia_s", where);
        ip.gfm_response_time_const_s = get_field<double>(p, "gfm_response_time_const_s", where);
        gc.ibrs.push_back(ip);
    }

    if (doc.contains("slack_bus")) {
        gc.slack_bus = get_field<int>(doc, "slack_bus", "case");
    } else {
        // Lowest-id bus hosting a synchronous unit.
        int best = 0;
        bool found = false;
        for (const auto& g : gc.gens) {
            if (!found || g.bus < best) {
                best = g.bus;
                found = true;
            }
        }
        if (!found && !gc.buses.empty())
            best = gc.buses.front().id;
        gc.slack_bus = best;
    }

    auto violations = validate_case(gc);
    if (!violations.empty())
        throw Error(Errc::ValidationError, violations.front(), violations);
    return gc;
}

GridCase load_case(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::ParseError, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

std::string case_to_json(const GridCase& gc, int indent)
{
    json doc;
    doc["base_mva"] = gc.base_mva;
    doc["base_freq_hz"] = gc.base_freq_hz;
    doc["slack_bus"] = gc.slack_bus;
    doc["buses"] = json::array();
    for (const auto& b : gc.buses)
        doc["buses"].push_back({{"id", b.id}, {"load_mw", b.load_mw}});
    doc["lines"] = json::array();
    for (const auto& l : gc.lines)
        doc["lines"].push_back({{"id", l.id},
                                {"from_bus", l.from_bus},
                                {"to_bus", l.to_bus},
                                {"reactance_pu", l.reactance_pu},
                                {"thermal_limit_mw", l.thermal_limit_mw}});
    doc["gens"] = json::array();
    for (const auto& g : gc.gens)
        doc["gens"].push_back({{"id", g.id},
                               {"bus", g.bus},
                               {"p_min_mw", g.p_min_mw},
                               {"p_max_mw", g.p_max_mw},
                               {"inertia_h_s", g.inertia_h_s},
                               {"rating_mva", g.rating_mva},
                               {"cost_a", g.cost_a},
                               {"cost_b", g.cost_b},
                               {"cost_c", g.cost_c},
                               {"governor_droop_pu", g.governor_droop_pu},
                               {"turbine_time_const_s", g.turbine_time_const_s},
                               {"outage_candidate", g.outage_candidate}});
    doc["ibrs"] = json::array();
    for (const auto& p : gc.ibrs)
        doc["ibrs"].push_back({{"id", p.id},
                               {"bus", p.bus},
                               {"p_available_max_mw", p.p_available_max_mw},
                               {"gfm_droop_pu", p.gfm_droop_pu},
                               {"gfm_virtual_inertia_s", p.gfm_virtual_inertia_s},
                               {"gfm_response_time_const_s", p.gfm_response_time_const_s}});
    return doc.dump(indent);
}

void save_case(const GridCase& gc, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::IoError, "cannot write " + path.string());
    out << case_to_json(gc) << "\n";
}

std::vector<std::string> validate_case(const GridCase& gc)
{
    std::vector<std::string> v;
    auto bad = [&v](const std::string& s) { v.push_back(s); };
    auto finite = [](double x) { return std::isfinite(x); };

    if (!(gc.base_mva > 0.0) || !finite(gc.base_mva))
        bad("case: base_mva must be positive");
    if (!(gc.base_freq_hz > 0.0) || !finite(gc.base_freq_hz))
        bad("case: base_freq_hz must be positive");
    if (gc.buses.empty())
        bad("case: no buses");

    std::set<int> bus_ids;
    for (const auto& b : gc.buses) {
        if (!bus_ids.insert(b.id).second)
            bad("bus " + std::to_string(b.id) + ": duplicate id");
        if (!finite(b.load_mw) || b.load_mw < 0.0)
            bad("bus " + std::to_string(b.id) + ": load must be finite and non-negative");
    }

    std::set<int> line_ids;
    for (const auto& l : gc.lines) {
        std::string tag = "line " + std::to_string(l.id);
        if (!line_ids.insert(l.id).second)
            bad(tag + ": duplicate id");
        if (l.from_bus == l.to_bus)
            bad(tag + ": from_bus equals to_bus");
        if (!bus_ids.count(l.from_bus) || !bus_ids.count(l.to_bus))
            bad(tag + ": endpoint bus does not exist");
        if (!(l.reactance_pu > 0.0) || !finite(l.reactance_pu))
            bad(tag + ": reactance must be strictly positive");
        if (!(l.thermal_limit_mw > 0.0))
            bad(tag + ": thermal limit must be strictly positive");
    }

    std::set<int> gen_ids;
    for (const auto& g : gc.gens) {
        std::string tag = "gen " + std::to_string(g.id);
        if (!gen_ids.insert(g.id).second)
            bad(tag + ": duplicate id");
        if (!bus_ids.count(g.bus))
            bad(tag + ": bus does not exist");
        if (!(g.rating_mva > 0.0))
            bad(tag + ": rating must be positive");
        if (!(g.p_min_mw >= 0.0 && g.p_min_mw <= g.p_max_mw && g.p_max_mw <= g.rating_mva))
            bad(tag + ": limits must satisfy 0 <= p_min <= p_max <= rating");
        if (!(g.inertia_h_s > 0.0))
            bad(tag + ": inertia must be positive");
        if (!(g.governor_droop_pu > 0.0))
            bad(tag + ": governor droop must be positive");
        if (!(g.turbine_time_const_s > 0.0))
            bad(tag + ": turbine time constant must be positive");
        if (!finite(g.cost_a) || !finite(g.cost_b) || !finite(g.cost_c))
            bad(tag + ": cost coefficients must be finite");
    }

    std::set<int> ibr_ids;
    std::set<int> ibr_buses;
    for (const auto& p : gc.ibrs) {
        std::string tag = "ibr " + std::to_string(p.id);
        if (!ibr_ids.insert(p.id).second)
            bad(tag + ": duplicate id");
        if (!bus_ids.count(p.bus))
            bad(tag + ": bus does not exist");
        if (!ibr_buses.insert(p.bus).second)
            bad(tag + ": more than one plant at bus " + std::to_string(p.bus));
        if (!finite(p.p_available_max_mw) || p.p_available_max_mw < 0.0)
            bad(tag + ": available power must be non-negative");
        if (!(p.gfm_droop_pu > 0.0))
            bad(tag + ": GFM droop must be positive");
        if (!(p.gfm_virtual_inertia_s >= 0.0))
            bad(tag + ": GFM virtual inertia must be non-negative");
        if (!(p.gfm_response_time_const_s > 0.0))
            bad(tag + ": GFM response time constant must be positive");
    }

    if (!gc.buses.empty() && !bus_ids.count(gc.slack_bus))
        bad("case: slack bus " + std::to_string(gc.slack_bus) + " does not exist");

    // Connectivity over lines whose endpoints exist.
    if (!gc.buses.empty()) {
        std::map<int, std::vector<int>> adj;
        for (const auto& l : gc.lines) {
            if (bus_ids.count(l.from_bus) && bus_ids.count(l.to_bus)) {
                adj[l.from_bus].push_back(l.to_bus);
                adj[l.to_bus].push_back(l.from_bus);
            }
        }
        std::set<int> seen{gc.buses.front().id};
        std::vector<int> stack{gc.buses.front().id};
        while (!stack.empty()) {
            int b = stack.back();
            stack.pop_back();
            for (int n : adj[b])
                if (seen.insert(n).second)
                    stack.push_back(n);
        }
        if (seen.size() != bus_ids.size()) {
            std::string missing;
            for (int b : bus_ids)
                if (!seen.count(b))
                    missing += (missing.empty() ? "" : ",") + std::to_string(b);
            bad("connectivity: buses {" + missing + "} unreachable");
        }
    }

    if (gc.total_capacity_mw() < gc.total_load_mw())
        bad("insolvable: total capacity below total load");

    return v;
}

void check_contingency(const GridCase& gc, const Contingency& c)
{
    int idx = gc.gen_index(c.outaged_gen_id);
    if (idx < 0)
        throw Error(Errc::UnknownGen, "generator " + std::to_string(c.outaged_gen_id) + " not in case");
    if (!gc.gens[static_cast<std::size_t>(idx)].outage_candidate)
        throw Error(Errc::NotOutageCandidate, "generator " + std::to_string(c.outaged_gen_id));
    if (!(c.event_time_s > 0.0))
        throw Error(Errc::ValidationError, "contingency event time must be positive");
}

GridCase apply_contingency(const GridCase& gc, const Contingency& c)
{
    check_contingency(gc, c);
    GridCase out = gc;
    out.gens.erase(out.gens.begin() + gc.gen_index(c.outaged_gen_id));
    return out;
}

GridCase scale_case(const GridCase& gc, double load_scale, double ibr_scale)
{
    GridCase out = gc;
    for (auto& b : out.buses)
        b.load_mw *= load_scale;
    for (auto& p : out.ibrs)
        p.p_available_max_mw *= ibr_scale;
    return out;
}

std::string case_fingerprint(const GridCase& gc)
{
    std::string doc = case_to_json(gc, -1);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : doc) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double system_kinetic_energy_mws(const GridCase& gc, std::optional<int> exclude_gen_id)
{
    double s = 0.0;
    for (const auto& g : gc.gens)
        if (!exclude_gen_id || g.id != *exclude_gen_id)
            s += g.kinetic_energy_mws();
    return s;
}

std::filesystem::path bundled_case_dir()
{
    return std::filesystem::path(FREQOPF_DATA_DIR) / "cases";
}

GridCase load_bundled_case(const std::string& name)
{
    return load_case(bundled_case_dir() / (name + ".json"));
}

}  // namespace freqopf
