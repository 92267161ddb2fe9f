#include "freqopf/reporting.hpp"

#include "freqopf/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace freqopf {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t stage_seed(std::uint64_t top, SeedStage stage)
{
    // splitmix64 over (top, stage)
    std::uint64_t z = top + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stage) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

GridCase resolve_case(const std::string& ref, std::string* name)
{
    fs::path p(ref);
    if (fs::exists(p)) {
        if (name)
            *name = p.stem().string();
        return load_case(p);
    }
    if (name)
        *name = ref;
    return load_bundled_case(ref);
}

namespace {

Range range_of(const json& j)
{
    if (!j.is_array() || j.size() != 2)
        throw Error(Errc::ParseError, "ranges must be [lo, hi] pairs");
    return {j[0].get<double>(), j[1].get<double>()};
}

double limit_of(const json& j)
{
    return j.is_null() ? -kInf : j.get<double>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("config is not JSON: ") + e.what());
    }
    if (!j.is_object())
        throw Error(Errc::ParseError, "config must be a JSON object");
    RunConfig c;
    auto rel = [&](const std::string& s) {
        fs::path p(s);
        return p.is_absolute() ? p : base_dir / p;
    };
    try {
        if (!j.contains("case"))
            throw Error(Errc::ValidationError, "config needs a \"case\" entry");
        std::string ref = j.at("case").get<std::string>();
        fs::path rp = rel(ref);
        c.grid = resolve_case(fs::exists(rp) ? rp.string() : ref, &c.case_name);
        auto cands = c.grid.outage_candidate_ids();
        if (!cands.empty())
            c.contingency.outaged_gen_id = cands.front();
        if (j.contains("outaged_gen_id"))
            c.contingency.outaged_gen_id = j["outaged_gen_id"].get<int>();
        if (j.contains("event_time_s"))
            c.contingency.event_time_s = j["event_time_s"].get<double>();
        if (j.contains("rocof_limit"))
            c.limits.rocof_limit_hz_per_s = limit_of(j["rocof_limit"]);
        if (j.contains("nadir_limit"))
            c.limits.nadir_limit_hz = limit_of(j["nadir_limit"]);
        if (j.contains("encoding"))
            c.encoding.kind = parse_encoding(j["encoding"].get<std::string>());
        if (j.contains("penalty"))
            c.encoding.penalty = j["penalty"].get<double>();
        if (j.contains("hidden"))
            c.hidden = j["hidden"].get<std::vector<int>>();
        if (j.contains("samples"))
            c.samples = j["samples"].get<int>();
        if (j.contains("seed"))
            c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("time_limit_s"))
            c.time_limit_s = j["time_limit_s"].get<double>();
        if (j.contains("load_scale"))
            c.load_scale = j["load_scale"].get<double>();
        if (j.contains("ibr_scale"))
            c.ibr_scale = j["ibr_scale"].get<double>();
        if (j.contains("refine_mccormick"))
            c.refine_mccormick = j["refine_mccormick"].get<bool>();
        if (j.contains("threads"))
            c.threads = j["threads"].get<int>();
        if (j.contains("epochs"))
            c.train.epochs = j["epochs"].get<int>();
        if (j.contains("learning_rate"))
            c.train.learning_rate = j["learning_rate"].get<double>();
        if (j.contains("batch_size"))
            c.train.batch_size = j["batch_size"].get<int>();
        if (j.contains("pwl_segments"))
            c.opf.pwl_segments = j["pwl_segments"].get<int>();
        if (j.contains("dataset"))
            c.dataset_path = rel(j["dataset"].get<std::string>());
        if (j.contains("net"))
            c.net_path = rel(j["net"].get<std::string>());
        if (j.contains("out_dir"))
            c.out_dir = rel(j["out_dir"].get<std::string>());
        if (j.contains("penalty_grid"))
            c.penalty_grid = j["penalty_grid"].get<std::vector<double>>();
        if (j.contains("neuron_grid"))
            c.neuron_grid = j["neuron_grid"].get<std::vector<int>>();
        c.ranges = default_ranges(c.grid);
        if (j.contains("ranges")) {
            const auto& r = j["ranges"];
            if (r.contains("load_scale"))
                c.ranges.load_scale = range_of(r["load_scale"]);
            if (r.contains("ibr_scale"))
                c.ranges.ibr_scale = range_of(r["ibr_scale"]);
            if (r.contains("sg_setpoint_scale"))
                c.ranges.sg_setpoint_scale = range_of(r["sg_setpoint_scale"]);
            if (r.contains("gfm_alpha"))
                c.ranges.gfm_alpha = range_of(r["gfm_alpha"]);
            if (r.contains("restricted_gen_levels"))
                c.ranges.restricted_gen_levels = r["restricted_gen_levels"].get<std::vector<double>>();
        }
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("config field has the wrong type: ") + e.what());
    }
    c.ranges.validate();
    check_contingency(c.grid, c.contingency);
    return c;
}

Dataset obtain_dataset(const RunConfig& cfg, BuildReport* report)
{
    if (cfg.dataset_path)
        return read_dataset(*cfg.dataset_path, cfg.grid);
    return build_dataset(cfg.grid, cfg.ranges, cfg.samples, stage_seed(cfg.seed, SeedStage::Dataset), report,
                         cfg.threads, cfg.sim);
}

MlpNet obtain_predictor(const RunConfig& cfg, TrainReport* report)
{
    if (cfg.net_path)
        return load_net(*cfg.net_path);
    Dataset d = obtain_dataset(cfg);
    TrainConfig tc = cfg.train;
    tc.seed = stage_seed(cfg.seed, SeedStage::Train);
    auto [net, rep] = train(d.feature_matrix(), d.label_matrix(), cfg.hidden, tc);
    if (report)
        *report = std::move(rep);
    return net;
}

SimResult validate_dispatch(const GridCase& gc, const Dispatch& d, const Contingency& c, const SimConfig& sim)
{
    SimConfig cfg = sim;
    cfg.event = c;
    return simulate(gc, d, cfg);
}

namespace {

MetricTriple triple(std::optional<double> est, std::optional<double> exact)
{
    MetricTriple t{est, exact, std::nullopt};
    if (est && exact && *exact != 0.0)
        t.rel_error = std::abs(*est - *exact) / std::abs(*exact);
    return t;
}

ModelRow solve_and_validate(OpfModel om, const RunConfig& cfg, const GridCase& gc)
{
    ModelRow row;
    row.kind = om.kind;
    SolveConfig sc;
    sc.time_limit_s = cfg.time_limit_s;
    sc.refine_mccormick = cfg.refine_mccormick;
    OpfResult r = solve_opf(om, sc);
    row.status = status_name(r.solution.status);
    row.solve_time_s = r.solution.solve_time_s + om.build_time_s;
    if (!r.dispatch) {
        row.error = "no dispatch (" + row.status + ")";
        return row;
    }
    const Dispatch& d = *r.dispatch;
    row.dispatch = d;
    row.cost = d.total_cost;
    row.p_outage_mw = d.p_gen_mw[static_cast<std::size_t>(gc.gen_index(cfg.contingency.outaged_gen_id))];
    try {
        SimResult s = validate_dispatch(gc, d, cfg.contingency, cfg.sim);
        row.rocof = triple(d.predicted_rocof_hz_s, s.metrics.worst_rocof_hz_per_s);
        row.nadir = triple(d.predicted_nadir_hz, s.metrics.nadir_hz);
        for (std::size_t i = 0; i < gc.ibrs.size(); ++i) {
            std::optional<double> est;
            if (i < d.predicted_headroom_mw.size())
                est = d.predicted_headroom_mw[i];
            row.headroom.push_back(triple(est, s.metrics.headroom_used_mw[i]));
        }
        row.sim = std::move(s);
    } catch (const Error& e) {
        row.error = std::string("simulation failed: ") + e.what();
    }
    return row;
}

template <class F>
void run_pool(std::size_t n, int threads, F&& fn)
{
    if (threads <= 0)
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;)
                fn(i);
        });
    for (auto& t : pool)
        t.join();
}

}  // namespace

ComparisonReport run_pipeline(const RunConfig& cfg, const MlpNet& net)
{
    ComparisonReport rep;
    rep.case_name = cfg.case_name;
    rep.case_fingerprint = case_fingerprint(cfg.grid);
    rep.contingency = cfg.contingency;
    rep.limits = cfg.limits;
    rep.encoding = cfg.encoding;
    rep.load_scale = cfg.load_scale;
    rep.ibr_scale = cfg.ibr_scale;
    GridCase gc = scale_case(cfg.grid, cfg.load_scale, cfg.ibr_scale);

    for (ModelKind k : {ModelKind::TOPF, ModelKind::LFCOPF, ModelKind::DLFCOPF}) {
        try {
            OpfModel om = k == ModelKind::TOPF     ? build_topf(gc, cfg.opf)
                          : k == ModelKind::LFCOPF ? build_lfcopf(gc, cfg.contingency, cfg.limits, cfg.opf)
                                                   : build_dlfcopf(gc, cfg.contingency, net, cfg.limits, cfg.encoding,
                                                                   cfg.opf);
            rep.rows.push_back(solve_and_validate(std::move(om), cfg, gc));
        } catch (const Error& e) {
            ModelRow row;
            row.kind = k;
            row.status = "Error";
            row.error = std::string(errc_name(e.code())) + ": " + e.what();
            rep.rows.push_back(std::move(row));
        }
    }
    return rep;
}

ComparisonReport run_pipeline(const RunConfig& cfg)
{
    return run_pipeline(cfg, obtain_predictor(cfg));
}

const char* axis_name(SweepAxis a)
{
    switch (a) {
    case SweepAxis::Neurons1Layer: return "neurons_1layer";
    case SweepAxis::Neurons2Layer: return "neurons_2layer";
    case SweepAxis::Penalty: return "penalty";
    case SweepAxis::Encoding: return "encoding";
    }
    return "?";
}

SweepAxis parse_axis(const std::string& s)
{
    for (SweepAxis a : {SweepAxis::Neurons1Layer, SweepAxis::Neurons2Layer, SweepAxis::Penalty, SweepAxis::Encoding})
        if (s == axis_name(a))
            return a;
    throw Error(Errc::InvalidConfig, "unknown sweep axis '" + s + "'");
}

namespace {

struct GridPoint {
    std::string label;
    double value = 0.0;
    std::vector<int> hidden;
    EncodingChoice enc;
};

SweepRow sweep_point(const RunConfig& cfg, const GridPoint& p, const Dataset* data, const MlpNet* net)
{
    SweepRow row;
    row.label = p.label;
    row.value = p.value;
    try {
        MlpNet local;
        const MlpNet* use = net;
        if (!p.hidden.empty()) {
            if (!data)
                throw Error(Errc::EmptyDataset, "architecture sweep needs a dataset");
            TrainConfig tc = cfg.train;
            tc.seed = stage_seed(cfg.seed, SeedStage::Train);
            local = train(data->feature_matrix(), data->label_matrix(), p.hidden, tc).first;
            use = &local;
        }
        if (!use)
            throw Error(Errc::InvalidConfig, "sweep needs a trained predictor");
        GridCase gc = scale_case(cfg.grid, cfg.load_scale, cfg.ibr_scale);
        OpfModel om = build_dlfcopf(gc, cfg.contingency, *use, cfg.limits, p.enc, cfg.opf);
        SolveConfig sc;
        sc.time_limit_s = cfg.time_limit_s;
        sc.refine_mccormick = cfg.refine_mccormick;
        OpfResult r = solve_opf(om, sc);
        row.status = status_name(r.solution.status);
        row.solve_time_s = r.solution.solve_time_s + om.build_time_s;
        row.mip_gap = std::isfinite(r.solution.gap) ? r.solution.gap : -1.0;
        row.linearization_error = r.linearization_error;
        row.mccormick_gap_mw = r.mccormick_gap_mw;
        if (!r.dispatch)
            return row;
        const Dispatch& d = *r.dispatch;
        row.cost = d.total_cost;
        row.alpha = d.alpha;
        SimResult s = validate_dispatch(gc, d, cfg.contingency, cfg.sim);
        const double S = gc.base_mva;
        double se = std::pow(*d.predicted_rocof_hz_s - s.metrics.worst_rocof_hz_per_s, 2) +
                    std::pow(*d.predicted_nadir_hz - s.metrics.nadir_hz, 2);
        for (std::size_t i = 0; i < gc.ibrs.size(); ++i)
            se += std::pow((d.predicted_headroom_mw[i] - s.metrics.headroom_used_mw[i]) / S, 2);
        row.real_error = se / static_cast<double>(2 + gc.ibrs.size());
    } catch (const Error& e) {
        row.status = "Error";
        row.error = std::string(errc_name(e.code())) + ": " + e.what();
    }
    return row;
}

}  // namespace

SweepTable run_sensitivity_sweep(const RunConfig& cfg, SweepAxis axis, const Dataset* data, const MlpNet* net)
{
    std::vector<GridPoint> grid;
    switch (axis) {
    case SweepAxis::Neurons1Layer:
        for (int k : cfg.neuron_grid)
            grid.push_back({"1x" + std::to_string(k), static_cast<double>(k), {k}, cfg.encoding});
        break;
    case SweepAxis::Neurons2Layer:
        for (int k : cfg.neuron_grid)
            grid.push_back({std::to_string(cfg.two_layer_first) + "x" + std::to_string(k), static_cast<double>(k),
                            {cfg.two_layer_first, k}, cfg.encoding});
        break;
    case SweepAxis::Penalty:
        for (double c : cfg.penalty_grid)
            for (EncodingKind k : {EncodingKind::PCTAR, EncodingKind::PCAR}) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s c_h=%g", encoding_name(k), c);
                grid.push_back({buf, c, {}, {k, c}});
            }
        break;
    case SweepAxis::Encoding:
        for (EncodingKind k : {EncodingKind::BPWL, EncodingKind::CTAR, EncodingKind::PCTAR, EncodingKind::PCAR})
            grid.push_back({encoding_name(k), static_cast<double>(grid.size()), {}, {k, cfg.encoding.penalty}});
        break;
    }
    SweepTable t;
    t.axis = axis;
    t.rows.resize(grid.size());
    run_pool(grid.size(), cfg.threads, [&](std::size_t i) { t.rows[i] = sweep_point(cfg, grid[i], data, net); });
    return t;
}

namespace {

json opt_num(const std::optional<double>& v)
{
    return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

json triple_json(const MetricTriple& t)
{
    return {{"estimated", opt_num(t.estimated)}, {"exact", opt_num(t.exact)}, {"rel_error", opt_num(t.rel_error)}};
}

}  // namespace

std::string report_to_json(const ComparisonReport& r)
{
    json j;
    j["case"] = r.case_name;
    j["case_fingerprint"] = r.case_fingerprint;
    j["contingency"] = {{"outaged_gen_id", r.contingency.outaged_gen_id},
                        {"event_time_s", r.contingency.event_time_s}};
    j["limits"] = {{"rocof_hz_s", opt_num(r.limits.rocof_limit_hz_per_s)},
                   {"nadir_hz", opt_num(r.limits.nadir_limit_hz)}};
    j["encoding"] = encoding_name(r.encoding.kind);
    j["penalty"] = r.encoding.penalty;
    j["load_scale"] = r.load_scale;
    j["ibr_scale"] = r.ibr_scale;
    j["models"] = json::array();
    for (const auto& row : r.rows) {
        json m{{"model", model_name(row.kind)},
               {"status", row.status},
               {"error", row.error.empty() ? json(nullptr) : json(row.error)},
               {"cost", row.dispatch ? json(row.cost) : json(nullptr)},
               {"solve_time_s", row.solve_time_s},
               {"p_outage_mw", row.dispatch ? json(row.p_outage_mw) : json(nullptr)},
               {"rocof_hz_s", triple_json(row.rocof)},
               {"nadir_hz", triple_json(row.nadir)}};
        m["headroom_mw"] = json::array();
        for (const auto& h : row.headroom)
            m["headroom_mw"].push_back(triple_json(h));
        if (row.dispatch) {
            m["alpha"] = row.dispatch->alpha;
            m["p_gen_mw"] = row.dispatch->p_gen_mw;
            m["p_ibr_mw"] = row.dispatch->p_ibr_mw;
        }
        j["models"].push_back(std::move(m));
    }
    return j.dump(2);
}

std::string sweep_to_json(const SweepTable& t)
{
    json j;
    j["axis"] = axis_name(t.axis);
    j["rows"] = json::array();
    for (const auto& r : t.rows)
        j["rows"].push_back({{"label", r.label},
                             {"value", r.value},
                             {"status", r.status},
                             {"error", r.error.empty() ? json(nullptr) : json(r.error)},
                             {"cost", r.cost},
                             {"alpha", r.alpha},
                             {"solve_time_s", r.solve_time_s},
                             {"mip_gap", r.mip_gap},
                             {"linearization_error", r.linearization_error},
                             {"real_error", r.real_error},
                             {"mccormick_gap_mw", r.mccormick_gap_mw}});
    return j.dump(2);
}

Dispatch dispatch_from_json(const std::string& text, const GridCase& gc)
{
    Dispatch d;
    try {
        json j = json::parse(text);
        std::vector<double> pg(gc.gens.size(), 0.0), pibr(gc.ibrs.size(), 0.0), alpha(gc.ibrs.size(), 0.0);
        std::vector<double> gfm(gc.ibrs.size(), 0.0);
        std::vector<bool> seen_g(gc.gens.size(), false), seen_i(gc.ibrs.size(), false);
        for (const auto& g : j.at("generators")) {
            int k = gc.gen_index(g.at("id").get<int>());
            if (k < 0)
                throw Error(Errc::ParseError, "dispatch names unknown generator " + g.at("id").dump());
            pg[static_cast<std::size_t>(k)] = g.at("p_mw").get<double>();
            seen_g[static_cast<std::size_t>(k)] = true;
        }
        for (const auto& r : j.at("ibrs")) {
            int k = gc.ibr_index(r.at("id").get<int>());
            if (k < 0)
                throw Error(Errc::ParseError, "dispatch names unknown IBR " + r.at("id").dump());
            auto sk = static_cast<std::size_t>(k);
            pibr[sk] = r.at("p_mw").get<double>();
            alpha[sk] = r.at("alpha").get<double>();
            gfm[sk] = r.value("p_gfm_mw", alpha[sk] * pibr[sk]);
            seen_i[sk] = true;
        }
        if (std::find(seen_g.begin(), seen_g.end(), false) != seen_g.end() ||
            std::find(seen_i.begin(), seen_i.end(), false) != seen_i.end())
            throw Error(Errc::ParseError, "dispatch does not cover every unit of the case");
        d = make_dispatch(gc, pg, pibr, alpha);
        for (std::size_t i = 0; i < gc.ibrs.size(); ++i) {
            d.p_gfm_mw[i] = gfm[i];
            d.p_gfl_mw[i] = pibr[i] - gfm[i];
        }
        if (j.contains("total_cost"))
            d.total_cost = j["total_cost"].get<double>();
        if (j.contains("predicted")) {
            const auto& pr = j["predicted"];
            if (pr.contains("rocof_hz_s"))
                d.predicted_rocof_hz_s = pr["rocof_hz_s"].get<double>();
            if (pr.contains("nadir_hz"))
                d.predicted_nadir_hz = pr["nadir_hz"].get<double>();
            if (pr.contains("headroom_mw"))
                d.predicted_headroom_mw = pr["headroom_mw"].get<std::vector<double>>();
        }
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("dispatch JSON malformed: ") + e.what());
    }
    return d;
}

namespace {

std::string xml_escape(const std::string& s)
{
    std::string o;
    for (char c : s) {
        switch (c) {
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '&': o += "&amp;"; break;
        case '"': o += "&quot;"; break;
        default: o.push_back(c);
        }
    }
    return o;
}

std::ofstream open_out(const fs::path& p)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f)
        throw Error(Errc::IoError, "cannot write " + p.string());
    return f;
}

}  // namespace

void write_chart_svg(const Chart& c, const fs::path& path)
{
    const double W = 720, H = 420, L = 70, R = 20, T = 40, B = 50;
    double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
    for (const auto& s : c.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!(xmin < xmax)) {
        xmin = std::isfinite(xmin) ? xmin - 1 : 0;
        xmax = xmin + 2;
    }
    if (!(ymin < ymax)) {
        ymin = std::isfinite(ymin) ? ymin - 1 : 0;
        ymax = ymin + 2;
    }
    double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    auto f = open_out(path);
    char buf[128];
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(c.title) << "</text>\n";
    f << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        double xv = xmin + (xmax - xmin) * k / 4.0, yv = ymin + (ymax - ymin) * k / 4.0;
        std::snprintf(buf, sizeof buf, "%.4g", xv);
        f << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.4g", yv);
        f << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
        f << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
          << "\" stroke=\"#ddd\"/>\n";
    }
    f << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(c.x_label)
      << "</text>\n";
    f << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(c.y_label) << "</text>\n";
    for (std::size_t k = 0; k < c.series.size(); ++k) {
        const auto& s = c.series[k];
        const char* col = colors[k % 6];
        f << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
        // Thin long series to keep files small.
        std::size_t step = std::max<std::size_t>(1, s.x.size() / 2000);
        for (std::size_t i = 0; i < s.x.size(); i += step) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.x[i]), py(s.y[i]));
            f << buf;
        }
        f << "\"/>\n";
        double ly = T + 16 + 16.0 * static_cast<double>(k);
        f << "<line x1=\"" << W - R - 150 << "\" x2=\"" << W - R - 130 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
          << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
        f << "<text x=\"" << W - R - 125 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
    }
    f << "</svg>\n";
    if (!f)
        throw Error(Errc::IoError, "write failed for " + path.string());
}

void write_chart_csv(const Chart& c, const fs::path& path)
{
    auto f = open_out(path);
    f << "series," << c.x_label << ',' << c.y_label << '\n';
    char buf[80];
    for (const auto& s : c.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", s.x[i], s.y[i]);
            f << s.name << buf;
        }
    if (!f)
        throw Error(Errc::IoError, "write failed for " + path.string());
}

Chart read_chart_csv(const fs::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw Error(Errc::IoError, "cannot read " + path.string());
    Chart c;
    std::string line;
    if (!std::getline(f, line))
        throw Error(Errc::ParseError, "chart CSV is empty");
    {
        std::stringstream ss(line);
        std::string a;
        std::getline(ss, a, ',');
        std::getline(ss, c.x_label, ',');
        std::getline(ss, c.y_label, ',');
    }
    while (std::getline(f, line)) {
        auto p2 = line.rfind(',');
        auto p1 = line.rfind(',', p2 - 1);
        if (p1 == std::string::npos || p2 == std::string::npos)
            throw Error(Errc::ParseError, "bad chart row: " + line);
        std::string name = line.substr(0, p1);
        if (c.series.empty() || c.series.back().name != name)
            c.series.push_back({name, {}, {}});
        c.series.back().x.push_back(std::stod(line.substr(p1 + 1, p2 - p1 - 1)));
        c.series.back().y.push_back(std::stod(line.substr(p2 + 1)));
    }
    return c;
}

Chart::Series rocof_series(const Trajectory& t, double window_s, const std::string& name)
{
    Chart::Series s;
    s.name = name;
    std::size_t j = 0;
    for (std::size_t i = 0; i < t.t_s.size(); ++i) {
        if (t.t_s[i] - t.t_s.front() < window_s - 1e-12)
            continue;
        while (j + 1 < i && t.t_s[i] - t.t_s[j + 1] >= window_s - 1e-12)
            ++j;
        double dt = t.t_s[i] - t.t_s[j];
        if (dt <= 0.0)
            continue;
        s.x.push_back(t.t_s[i]);
        s.y.push_back((t.f_coi_hz[i] - t.f_coi_hz[j]) / dt);
    }
    return s;
}

std::vector<fs::path> emit_plots(const ComparisonReport& r, const fs::path& dir, double rocof_window_s)
{
    Chart freq{"Center-of-inertia frequency", "time_s", "frequency_hz", {}};
    Chart rocof{"Windowed RoCoF", "time_s", "rocof_hz_s", {}};
    for (const auto& row : r.rows) {
        if (!row.sim)
            continue;
        const auto& tr = row.sim->trajectory;
        freq.series.push_back({model_name(row.kind), tr.t_s, tr.f_coi_hz});
        rocof.series.push_back(rocof_series(tr, rocof_window_s, model_name(row.kind)));
    }
    std::vector<fs::path> files;
    if (freq.series.empty())
        return files;
    for (const auto& [chart, stem] : {std::pair{&freq, "frequency"}, std::pair{&rocof, "rocof"}}) {
        fs::path svg = dir / (std::string(stem) + ".svg"), csv = dir / (std::string(stem) + ".csv");
        write_chart_svg(*chart, svg);
        write_chart_csv(*chart, csv);
        files.push_back(svg);
        files.push_back(csv);
    }
    return files;
}

std::vector<fs::path> emit_plots(const SweepTable& t, const fs::path& dir)
{
    std::vector<fs::path> files;
    if (t.rows.empty())
        return files;
    std::string axis = axis_name(t.axis);
    Chart err{"Real error by " + axis, axis, "real_error", {}};
    Chart time{"Solve time by " + axis, axis, "solve_time_s", {}};
    auto series_for = [](const SweepRow& r) {
        auto sp = r.label.find(' ');
        return sp == std::string::npos ? std::string("DL-FCOPF") : r.label.substr(0, sp);
    };
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        if (!r.error.empty())
            continue;
        std::string name = series_for(r);
        auto find = [&](Chart& c) -> Chart::Series& {
            for (auto& s : c.series)
                if (s.name == name)
                    return s;
            c.series.push_back({name, {}, {}});
            return c.series.back();
        };
        find(err).x.push_back(r.value);
        find(err).y.push_back(r.real_error);
        find(time).x.push_back(r.value);
        find(time).y.push_back(r.solve_time_s);
    }
    if (err.series.empty())
        return files;
    for (const auto& [chart, stem] : {std::pair{&err, "sweep_error"}, std::pair{&time, "sweep_time"}}) {
        fs::path svg = dir / (std::string(stem) + "_" + axis + ".svg");
        fs::path csv = dir / (std::string(stem) + "_" + axis + ".csv");
        write_chart_svg(*chart, svg);
        write_chart_csv(*chart, csv);
        files.push_back(svg);
        files.push_back(csv);
    }
    return files;
}

fs::path write_manifest(const fs::path& dir, const std::vector<fs::path>& files)
{
    json j;
    j["files"] = json::array();
    for (const auto& f : files) {
        std::error_code ec;
        auto size = fs::file_size(f, ec);
        j["files"].push_back({{"path", fs::relative(f, dir, ec).generic_string()},
                              {"bytes", ec ? json(nullptr) : json(size)}});
    }
    fs::path p = dir / "manifest.json";
    auto f = open_out(p);
    f << j.dump(2) << '\n';
    return p;
}

}  // namespace freqopf
