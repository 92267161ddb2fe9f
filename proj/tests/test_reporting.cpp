#include "fixtures.hpp"

#include "freqopf/error.hpp"
#include "freqopf/reporting.hpp"

#include <doctest.h>

#include <algorithm>

using namespace freqopf;
namespace fs = std::filesystem;

namespace {

RunConfig small_config()
{
    RunConfig cfg = parse_run_config(R"({"case": "wscc9_modified", "seed": 3, "threads": 2})");
    cfg.limits = FreqLimits::disabled();
    return cfg;
}

MlpNet case_net(const RunConfig& cfg, std::uint64_t seed)
{
    Eigen::VectorXd lo, hi;
    predictor_input_box(cfg.grid, cfg.contingency, lo, hi);
    MlpNet net = MlpNet::random({static_cast<int>(lo.size()), 4, static_cast<int>(label_names(cfg.grid).size())}, seed);
    net.input_norm.mean = 0.5 * (lo + hi);
    net.input_norm.stddev = (0.5 * (hi - lo)).cwiseMax(1.0);
    return net;
}

std::size_t count_ext(const std::vector<fs::path>& files, const std::string& ext)
{
    return static_cast<std::size_t>(
        std::count_if(files.begin(), files.end(), [&](const fs::path& p) { return p.extension() == ext; }));
}

}  // namespace

TEST_CASE("report: config parsing")
{
    RunConfig cfg = parse_run_config(R"({
        "case": "ieee39_modified", "rocof_limit": -0.4, "nadir_limit": null, "encoding": "P-CTAR",
        "penalty": 1000, "hidden": [16, 8], "samples": 50, "time_limit_s": 5,
        "ranges": {"load_scale": [0.8, 1.0], "restricted_gen_levels": [0.5, 1.0]}
    })");
    CHECK(cfg.case_name == "ieee39_modified");
    CHECK(cfg.contingency.outaged_gen_id == 38);
    CHECK(cfg.limits.rocof_limit_hz_per_s == -0.4);
    CHECK(std::isinf(cfg.limits.nadir_limit_hz));
    CHECK(cfg.encoding.kind == EncodingKind::PCTAR);
    CHECK(cfg.encoding.penalty == 1000);
    CHECK(cfg.hidden == std::vector<int>{16, 8});
    CHECK(cfg.ranges.load_scale == Range{0.8, 1.0});
    CHECK(cfg.ranges.ibr_scale == Range{0.9, 1.1});
    CHECK(cfg.ranges.restricted_gen_levels == std::vector<double>{0.5, 1.0});

    auto code_of = [](const std::string& text) {
        try {
            parse_run_config(text);
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::Empty;
    };
    CHECK(code_of("[1, 2]") == Errc::ParseError);
    CHECK(code_of(R"({"case": "wscc9_modified", "samples": "many"})") == Errc::ParseError);
    CHECK(code_of(R"({"case": "wscc9_modified", "outaged_gen_id": 2})") == Errc::NotOutageCandidate);
    CHECK(code_of(R"({"case": "wscc9_modified", "encoding": "relu"})") == Errc::InvalidConfig);
    CHECK(code_of(R"({"seed": 1})") == Errc::ValidationError);
}

TEST_CASE("report: stage seeds are distinct and stable")
{
    CHECK(stage_seed(1, SeedStage::Dataset) == stage_seed(1, SeedStage::Dataset));
    CHECK(stage_seed(1, SeedStage::Dataset) != stage_seed(1, SeedStage::Train));
    CHECK(stage_seed(1, SeedStage::Train) != stage_seed(2, SeedStage::Train));
}

TEST_CASE("report: three-model comparison and plots")
{
    RunConfig cfg = small_config();
    MlpNet net = case_net(cfg, 5);
    ComparisonReport rep = run_pipeline(cfg, net);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[0].kind == ModelKind::TOPF);
    CHECK(rep.rows[1].kind == ModelKind::LFCOPF);
    CHECK(rep.rows[2].kind == ModelKind::DLFCOPF);
    for (const auto& r : rep.rows) {
        CAPTURE(model_name(r.kind));
        REQUIRE(r.error.empty());
        REQUIRE(r.sim);
        CHECK(r.rocof.exact);
        CHECK(r.nadir.exact);
        CHECK(r.headroom.size() == cfg.grid.ibrs.size());
    }
    const auto& t = rep.rows[0];
    CHECK_FALSE(t.rocof.estimated);
    CHECK_FALSE(t.rocof.rel_error);
    CHECK_FALSE(t.nadir.estimated);
    for (const auto& h : t.headroom)
        CHECK_FALSE(h.estimated);
    CHECK(rep.rows[1].rocof.rel_error);
    CHECK_FALSE(rep.rows[1].nadir.estimated);
    CHECK(rep.rows[2].rocof.rel_error);
    CHECK(rep.rows[2].nadir.rel_error);
    CHECK(rep.rows[0].cost <= rep.rows[1].cost + 1e-6);

    auto dir = fixtures::scratch_dir("report");
    auto files = emit_plots(rep, dir);
    CHECK(files.size() == 4);
    CHECK(count_ext(files, ".svg") == 2);
    CHECK(count_ext(files, ".csv") == 2);
    for (const auto& f : files)
        CHECK(fs::file_size(f) > 0);

    Chart back = read_chart_csv(dir / "frequency.csv");
    REQUIRE(back.series.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(back.series[k].name == model_name(rep.rows[k].kind));
        CHECK(back.series[k].x == rep.rows[k].sim->trajectory.t_s);
        CHECK(back.series[k].y == rep.rows[k].sim->trajectory.f_coi_hz);
    }

    auto manifest = write_manifest(dir, files);
    CHECK(fs::exists(manifest));
    CHECK(report_to_json(rep).find("\"N/A\"") == std::string::npos);
}

TEST_CASE("report: windowed RoCoF series")
{
    Trajectory tr;
    for (int k = 0; k <= 1000; ++k) {
        tr.t_s.push_back(k * 1e-3);
        tr.f_coi_hz.push_back(60.0 - 0.5 * k * 1e-3);
    }
    auto s = rocof_series(tr, 0.1, "ramp");
    REQUIRE(!s.x.empty());
    CHECK(s.x.front() == doctest::Approx(0.1));
    for (double y : s.y)
        CHECK(y == doctest::Approx(-0.5));
}

TEST_CASE("report: dispatch JSON round trip")
{
    RunConfig cfg = small_config();
    OpfModel om = build_topf(cfg.grid);
    OpfResult r = solve_opf(om);
    REQUIRE(r.dispatch);
    Dispatch back = dispatch_from_json(dispatch_to_json(*r.dispatch, om, r), cfg.grid);
    CHECK(back.p_gen_mw == r.dispatch->p_gen_mw);
    CHECK(back.p_ibr_mw == r.dispatch->p_ibr_mw);
    CHECK(back.alpha == r.dispatch->alpha);
    CHECK(back.total_cost == r.dispatch->total_cost);
    CHECK_THROWS_AS(dispatch_from_json("{}", cfg.grid), Error);
}

TEST_CASE("report: sweeps")
{
    RunConfig cfg = small_config();
    MlpNet net = case_net(cfg, 9);

    SweepTable enc = run_sensitivity_sweep(cfg, SweepAxis::Encoding, nullptr, &net);
    REQUIRE(enc.rows.size() == 4);
    std::vector<std::string> labels;
    for (const auto& r : enc.rows) {
        labels.push_back(r.label);
        CHECK(r.error.empty());
        CHECK(r.alpha.size() == cfg.grid.ibrs.size());
    }
    CHECK(labels == std::vector<std::string>{"BPWL", "CTAR", "P-CTAR", "PCAR"});
    CHECK(enc.rows[0].linearization_error <= 1e-6);

    Dataset empty;
    empty.feature_names = feature_names(cfg.grid);
    empty.label_names = label_names(cfg.grid);
    SweepTable arch = run_sensitivity_sweep(cfg, SweepAxis::Neurons1Layer, &empty, nullptr);
    REQUIRE(arch.rows.size() == cfg.neuron_grid.size());
    for (const auto& r : arch.rows)
        CHECK(r.error.find("EmptyDataset") == 0);

    auto dir = fixtures::scratch_dir("sweep");
    CHECK(emit_plots(SweepTable{}, dir).empty());
    CHECK(fs::is_empty(dir));
    auto files = emit_plots(enc, dir);
    CHECK(count_ext(files, ".svg") == 2);
    CHECK(count_ext(files, ".csv") == 2);
    CHECK(parse_axis("penalty") == SweepAxis::Penalty);
    CHECK_THROWS_AS(parse_axis("depth"), Error);
}
