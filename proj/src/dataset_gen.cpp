#include "freqopf/dataset_gen.hpp"

#include "freqopf/error.hpp"
#include "freqopf/opf_models.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace freqopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, const Range& r) { return r.first + (r.second - r.first) * unit_draw(rng); }

void check_range(const Range& r, const char* name, double min_lo, double max_hi)
{
    if (!(r.first <= r.second) || r.first < min_lo || r.second > max_hi || !std::isfinite(r.first) ||
        !std::isfinite(r.second))
        throw Error(Errc::InvalidConfig, std::string("range ") + name + " is invalid");
}

}  // namespace

void ScenarioRanges::validate() const
{
    check_range(load_scale, "load_scale", 0.0, 10.0);
    check_range(ibr_scale, "ibr_scale", 0.0, 10.0);
    check_range(sg_setpoint_scale, "sg_setpoint_scale", 0.0, 10.0);
    check_range(gfm_alpha, "gfm_alpha", 0.0, 1.0);
    if (restricted_gen_levels.empty())
        throw Error(Errc::InvalidConfig, "restricted_gen_levels is empty");
    for (double v : restricted_gen_levels)
        if (!(v >= 0.0 && v <= 1.0))
            throw Error(Errc::InvalidConfig, "restricted levels must lie in [0, 1]");
}

ScenarioRanges default_ranges(const GridCase& gc)
{
    ScenarioRanges r;
    if (gc.buses.size() >= 30)
        r.load_scale = {0.7, 1.1};
    return r;
}

MatrixXd Dataset::feature_matrix() const
{
    MatrixXd X(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(feature_names.size()));
    for (std::size_t i = 0; i < samples.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
    return X;
}

MatrixXd Dataset::label_matrix() const
{
    MatrixXd Y(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(label_names.size()));
    for (std::size_t i = 0; i < samples.size(); ++i)
        Y.row(static_cast<Eigen::Index>(i)) = samples[i].labels.transpose();
    return Y;
}

std::vector<std::string> feature_names(const GridCase& gc)
{
    std::vector<std::string> n;
    for (const auto& g : gc.gens)
        n.push_back("f_pg_" + std::to_string(g.id));
    for (int b : gc.load_bus_ids())
        n.push_back("f_load_" + std::to_string(b));
    for (const auto& r : gc.ibrs)
        n.push_back("f_gfm_" + std::to_string(r.id));
    for (const auto& r : gc.ibrs)
        n.push_back("f_gfl_" + std::to_string(r.id));
    for (int id : gc.outage_candidate_ids())
        n.push_back("f_ctg_" + std::to_string(id));
    return n;
}

std::vector<std::string> label_names(const GridCase& gc)
{
    std::vector<std::string> n;
    for (const auto& r : gc.ibrs)
        n.push_back("l_alpha_" + std::to_string(r.id));
    for (const auto& r : gc.ibrs)
        n.push_back("l_hdrm_" + std::to_string(r.id));
    n.push_back("l_rocof");
    n.push_back("l_nadir");
    return n;
}

LabelLayout label_layout(const GridCase& gc)
{
    int ni = static_cast<int>(gc.ibrs.size());
    return {0, ni, 2 * ni, 2 * ni + 1};
}

std::vector<Scenario> generate_scenarios(const GridCase& gc, const ScenarioRanges& ranges, int n, std::uint64_t seed)
{
    if (n < 1)
        throw Error(Errc::InvalidConfig, "scenario count must be >= 1");
    ranges.validate();
    auto cands = gc.outage_candidate_ids();
    if (cands.empty())
        throw Error(Errc::NoOutageCandidates, "case has no outage-candidate generator");
    const auto& levels = ranges.restricted_gen_levels;
    const std::size_t cells = cands.size() * levels.size();

    std::mt19937_64 rng(seed);
    std::vector<Scenario> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::size_t cell = static_cast<std::size_t>(i) % cells;
        Scenario s;
        s.id = i;
        s.restricted_gen_id = cands[cell / levels.size()];
        const auto& g = gc.gen(s.restricted_gen_id);
        s.restricted_output_mw = std::clamp(levels[cell % levels.size()] * g.p_max_mw, g.p_min_mw, g.p_max_mw);
        s.contingency = {s.restricted_gen_id, 1.0};
        s.load_scale = uniform(rng, ranges.load_scale);
        s.ibr_scale = uniform(rng, ranges.ibr_scale);
        for (std::size_t k = 0; k < gc.gens.size(); ++k)
            s.sg_setpoint_scale.push_back(uniform(rng, ranges.sg_setpoint_scale));
        for (std::size_t k = 0; k < gc.ibrs.size(); ++k)
            s.gfm_alpha.push_back(uniform(rng, ranges.gfm_alpha));
        out.push_back(std::move(s));
    }
    return out;
}

Dispatch scenario_dispatch(const GridCase& gc, const Scenario& s, GridCase& scaled)
{
    scaled = scale_case(gc, s.load_scale, s.ibr_scale);
    const int rk = scaled.gen_index(s.restricted_gen_id);
    if (rk < 0)
        throw Error(Errc::UnknownGen, "restricted generator " + std::to_string(s.restricted_gen_id) + " not in case");
    if (s.sg_setpoint_scale.size() != scaled.gens.size() || s.gfm_alpha.size() != scaled.ibrs.size())
        throw Error(Errc::DimensionMismatch, "scenario does not match the case");
    const double S = scaled.base_mva;

    OpfModel om = build_topf(scaled);
    double pin = s.restricted_output_mw / S;
    om.model.set_bounds(om.p_gen[static_cast<std::size_t>(rk)], pin, pin);
    Solution sol = solve_lp(om.model);
    if (sol.status != SolveStatus::Optimal)
        throw Error(Errc::InfeasibleScenario, "scenario " + std::to_string(s.id) + ": T-OPF is " +
                                                  status_name(sol.status));

    std::vector<double> pg, pibr;
    double target = scaled.total_load_mw();
    double total = 0.0;
    for (std::size_t k = 0; k < scaled.gens.size(); ++k) {
        const auto& g = scaled.gens[k];
        double p = sol.values[static_cast<std::size_t>(om.p_gen[k])] * S;
        if (static_cast<int>(k) == rk)
            p = s.restricted_output_mw;
        else
            p = std::clamp(p * s.sg_setpoint_scale[k], g.p_min_mw, g.p_max_mw);
        pg.push_back(p);
        total += p;
    }
    double avail = 0.0;
    for (const auto& r : scaled.ibrs)
        avail += r.p_available_max_mw;
    // Inverters absorb the mismatch in proportion to availability, SGs take any remainder.
    double need = target - total;
    double share = avail > 0.0 ? std::clamp(need / avail, 0.0, 1.0) : 0.0;
    double placed = 0.0;
    for (const auto& r : scaled.ibrs) {
        pibr.push_back(share * r.p_available_max_mw);
        placed += pibr.back();
    }
    double rest = need - placed;
    for (std::size_t k = 0; k < pg.size() && std::abs(rest) > 1e-9; ++k) {
        if (static_cast<int>(k) == rk)
            continue;
        const auto& g = scaled.gens[k];
        double np = std::clamp(pg[k] + rest, g.p_min_mw, g.p_max_mw);
        rest -= np - pg[k];
        pg[k] = np;
    }
    if (std::abs(rest) > 1e-6)
        throw Error(Errc::InfeasibleScenario, "scenario " + std::to_string(s.id) + ": cannot balance perturbed dispatch");
    return make_dispatch(scaled, std::move(pg), std::move(pibr), s.gfm_alpha);
}

Sample label_scenario(const GridCase& gc, const Scenario& s, const SimConfig& sim)
{
    GridCase scaled;
    Dispatch d = scenario_dispatch(gc, s, scaled);
    SimConfig cfg = sim;
    cfg.event = s.contingency;
    SimResult r = simulate(scaled, d, cfg);
    if (!r.metrics.settled)
        throw Error(Errc::UnsettledSimulation, "scenario " + std::to_string(s.id) + " did not settle");

    const double S = scaled.base_mva;
    Sample out;
    out.scenario_id = s.id;
    out.features = dispatch_features(scaled, d, s.contingency);
    const std::size_t ni = scaled.ibrs.size();
    out.labels.resize(static_cast<Eigen::Index>(2 * ni + 2));
    for (std::size_t i = 0; i < ni; ++i) {
        out.labels[static_cast<Eigen::Index>(i)] = d.alpha[i];
        out.labels[static_cast<Eigen::Index>(ni + i)] = r.metrics.headroom_used_mw[i] / S;
    }
    out.labels[static_cast<Eigen::Index>(2 * ni)] = r.metrics.worst_rocof_hz_per_s;
    out.labels[static_cast<Eigen::Index>(2 * ni + 1)] = r.metrics.nadir_hz;
    return out;
}

Dataset build_dataset(const GridCase& gc, const ScenarioRanges& ranges, int n, std::uint64_t seed, BuildReport* report,
                      int threads, const SimConfig& sim)
{
    auto t0 = std::chrono::steady_clock::now();
    auto scen = generate_scenarios(gc, ranges, n, seed);
    std::vector<std::optional<Sample>> slots(scen.size());
    std::vector<std::string> errors(scen.size());

    if (threads <= 0)
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min<int>(threads, static_cast<int>(scen.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < scen.size();) {
            try {
                slots[i] = label_scenario(gc, scen[i], sim);
            } catch (const Error& e) {
                if (e.code() != Errc::InfeasibleScenario && e.code() != Errc::UnsettledSimulation &&
                    e.code() != Errc::NumericalDivergence)
                    errors[i] = std::string("!") + e.what();
                else
                    errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (!e.empty() && e[0] == '!')
            throw Error(Errc::InvalidConfig, "labeling failed: " + e.substr(1));

    Dataset d;
    d.case_fingerprint = case_fingerprint(gc);
    d.seed = seed;
    d.ranges = ranges;
    d.feature_names = feature_names(gc);
    d.label_names = label_names(gc);
    BuildReport rep;
    for (std::size_t i = 0; i < scen.size(); ++i) {
        if (slots[i])
            d.samples.push_back(std::move(*slots[i]));
        else
            rep.skipped.push_back({scen[i].id, errors[i]});
    }
    rep.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report)
        *report = std::move(rep);
    return d;
}

namespace {

json ranges_to_json(const ScenarioRanges& r)
{
    auto pr = [](const Range& x) { return json::array({x.first, x.second}); };
    return {{"load_scale", pr(r.load_scale)},
            {"ibr_scale", pr(r.ibr_scale)},
            {"sg_setpoint_scale", pr(r.sg_setpoint_scale)},
            {"gfm_alpha", pr(r.gfm_alpha)},
            {"restricted_gen_levels", r.restricted_gen_levels}};
}

ScenarioRanges ranges_from_json(const json& j)
{
    auto pr = [](const json& x) { return Range{x.at(0).get<double>(), x.at(1).get<double>()}; };
    ScenarioRanges r;
    r.load_scale = pr(j.at("load_scale"));
    r.ibr_scale = pr(j.at("ibr_scale"));
    r.sg_setpoint_scale = pr(j.at("sg_setpoint_scale"));
    r.gfm_alpha = pr(j.at("gfm_alpha"));
    r.restricted_gen_levels = j.at("restricted_gen_levels").get<std::vector<double>>();
    return r;
}

std::filesystem::path meta_path(const std::filesystem::path& p)
{
    return std::filesystem::path(p.string() + ".meta.json");
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');)
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double parse_num(const std::string& s, std::size_t line)
{
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos == s.size())
            return v;
    } catch (const std::exception&) {
    }
    throw Error(Errc::SchemaMismatch, "non-numeric cell '" + s + "' on line " + std::to_string(line));
}

}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream csv(path);
    if (!csv)
        throw Error(Errc::IoError, "cannot write " + path.string());
    csv << "schema,scenario_id";
    for (const auto& n : d.feature_names)
        csv << ',' << n;
    for (const auto& n : d.label_names)
        csv << ',' << n;
    csv << '\n';
    char buf[40];
    for (const auto& s : d.samples) {
        csv << d.schema_version << ',' << s.scenario_id;
        for (Eigen::Index k = 0; k < s.features.size(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", s.features[k]);
            csv << buf;
        }
        for (Eigen::Index k = 0; k < s.labels.size(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", s.labels[k]);
            csv << buf;
        }
        csv << '\n';
    }
    if (!csv)
        throw Error(Errc::IoError, "write failed for " + path.string());

    json meta{{"schema_version", d.schema_version},
              {"seed", d.seed},
              {"case_fingerprint", d.case_fingerprint},
              {"samples", d.samples.size()},
              {"ranges", ranges_to_json(d.ranges)}};
    std::ofstream mf(meta_path(path));
    if (!mf)
        throw Error(Errc::IoError, "cannot write " + meta_path(path).string());
    mf << meta.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& path, const GridCase& gc)
{
    std::ifstream mf(meta_path(path));
    if (!mf)
        throw Error(Errc::IoError, "cannot read " + meta_path(path).string());
    json meta;
    try {
        meta = json::parse(mf);
    } catch (const json::exception& e) {
        throw Error(Errc::SchemaMismatch, std::string("metadata is not JSON: ") + e.what());
    }
    Dataset d;
    try {
        d.schema_version = meta.at("schema_version").get<int>();
        d.seed = meta.at("seed").get<std::uint64_t>();
        d.case_fingerprint = meta.at("case_fingerprint").get<std::string>();
        d.ranges = ranges_from_json(meta.at("ranges"));
    } catch (const json::exception& e) {
        throw Error(Errc::SchemaMismatch, std::string("metadata incomplete: ") + e.what());
    }
    if (d.schema_version != kDatasetSchemaVersion)
        throw Error(Errc::SchemaMismatch, "dataset schema " + std::to_string(d.schema_version) + ", expected " +
                                              std::to_string(kDatasetSchemaVersion));
    std::string fp = case_fingerprint(gc);
    if (d.case_fingerprint != fp)
        throw Error(Errc::FingerprintMismatch, "dataset was built for case " + d.case_fingerprint + ", not " + fp);
    d.feature_names = feature_names(gc);
    d.label_names = label_names(gc);

    std::ifstream csv(path);
    if (!csv)
        throw Error(Errc::IoError, "cannot read " + path.string());
    std::string line;
    if (!std::getline(csv, line))
        throw Error(Errc::SchemaMismatch, "dataset CSV has no header");
    std::vector<std::string> expect{"schema", "scenario_id"};
    expect.insert(expect.end(), d.feature_names.begin(), d.feature_names.end());
    expect.insert(expect.end(), d.label_names.begin(), d.label_names.end());
    if (split_csv(line) != expect)
        throw Error(Errc::SchemaMismatch, "CSV header does not match the case schema");
    const auto nf = static_cast<Eigen::Index>(d.feature_names.size());
    const auto nl = static_cast<Eigen::Index>(d.label_names.size());
    for (std::size_t ln = 2; std::getline(csv, line); ++ln) {
        if (line.empty())
            continue;
        auto cells = split_csv(line);
        if (cells.size() != expect.size())
            throw Error(Errc::SchemaMismatch, "line " + std::to_string(ln) + " has " + std::to_string(cells.size()) +
                                                  " cells, expected " + std::to_string(expect.size()));
        if (cells[0] != std::to_string(d.schema_version))
            throw Error(Errc::SchemaMismatch, "line " + std::to_string(ln) + " carries schema " + cells[0]);
        Sample s;
        s.scenario_id = static_cast<int>(parse_num(cells[1], ln));
        s.features.resize(nf);
        s.labels.resize(nl);
        for (Eigen::Index k = 0; k < nf; ++k)
            s.features[k] = parse_num(cells[static_cast<std::size_t>(2 + k)], ln);
        for (Eigen::Index k = 0; k < nl; ++k)
            s.labels[k] = parse_num(cells[static_cast<std::size_t>(2 + nf + k)], ln);
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace freqopf
