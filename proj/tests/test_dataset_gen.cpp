#include "fixtures.hpp"

#include "freqopf/dataset_gen.hpp"
#include "freqopf/error.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace freqopf;

TEST_CASE("data: scenarios are deterministic and in range")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    ScenarioRanges r = default_ranges(gc);
    auto a = generate_scenarios(gc, r, 100, 7);
    auto b = generate_scenarios(gc, r, 100, 7);
    CHECK(a == b);
    CHECK(a != generate_scenarios(gc, r, 100, 8));
    for (const auto& s : a) {
        CHECK(s.load_scale >= 0.9);
        CHECK(s.load_scale <= 1.1);
        CHECK(s.ibr_scale >= 0.9);
        CHECK(s.ibr_scale <= 1.1);
        for (double x : s.gfm_alpha) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
        CHECK(s.contingency.outaged_gen_id == s.restricted_gen_id);
    }
    CHECK(default_ranges(load_bundled_case("ieee39_modified")).load_scale == Range{0.7, 1.1});
}

TEST_CASE("data: stratification over candidate and level cells")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    REQUIRE(gc.outage_candidate_ids().size() == 2);
    ScenarioRanges r;
    r.restricted_gen_levels = {0.4, 0.7, 1.0};
    std::map<std::pair<int, double>, int> cells;
    for (const auto& s : generate_scenarios(gc, r, 60, 1))
        ++cells[{s.restricted_gen_id, s.restricted_output_mw}];
    CHECK(cells.size() == 6);
    for (const auto& [k, n] : cells)
        CHECK(n == 10);

    GridCase none = gc;
    for (auto& g : none.gens)
        g.outage_candidate = false;
    try {
        generate_scenarios(none, r, 10, 1);
        FAIL("case without candidates accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NoOutageCandidates);
    }
    ScenarioRanges bad;
    bad.load_scale = {1.2, 0.8};
    CHECK_THROWS_AS(generate_scenarios(gc, bad, 10, 1), Error);
}

TEST_CASE("data: labels")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    ScenarioRanges r;
    auto scen = generate_scenarios(gc, r, 8, 3);
    std::size_t n_feat = gc.gens.size() + gc.load_bus_ids().size() + 2 * gc.ibrs.size() + gc.outage_candidate_ids().size();
    CHECK(feature_names(gc).size() == n_feat);
    LabelLayout lay = label_layout(gc);
    for (const auto& s : scen) {
        Sample smp = label_scenario(gc, s);
        CHECK(static_cast<std::size_t>(smp.features.size()) == n_feat);
        CHECK(static_cast<std::size_t>(smp.labels.size()) == label_names(gc).size());
        CHECK(smp.labels(lay.rocof) < 0.0);
        CHECK(smp.labels(lay.nadir) < gc.base_freq_hz);
    }

    Scenario gfl_only = scen[0];
    std::fill(gfl_only.gfm_alpha.begin(), gfl_only.gfm_alpha.end(), 0.0);
    Sample smp = label_scenario(gc, gfl_only);
    for (std::size_t i = 0; i < gc.ibrs.size(); ++i)
        CHECK(smp.labels(lay.headroom + static_cast<int>(i)) == 0.0);
}

TEST_CASE("data: write/read round trip and rejection")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    auto dir = fixtures::scratch_dir("data");
    BuildReport rep;
    Dataset d = build_dataset(gc, ScenarioRanges{}, 16, 5, &rep, 2);
    CHECK(d.samples.size() + rep.skipped.size() == 16);
    for (std::size_t i = 1; i < d.samples.size(); ++i)
        CHECK(d.samples[i - 1].scenario_id < d.samples[i].scenario_id);

    auto path = dir / "d.csv";
    write_dataset(d, path);
    Dataset back = read_dataset(path, gc);
    CHECK(back.case_fingerprint == d.case_fingerprint);
    CHECK(back.seed == d.seed);
    CHECK(back.schema_version == d.schema_version);
    CHECK(back.feature_names == d.feature_names);
    CHECK(back.label_names == d.label_names);
    CHECK(back.ranges.load_scale == d.ranges.load_scale);
    CHECK(back.ranges.restricted_gen_levels == d.ranges.restricted_gen_levels);
    REQUIRE(back.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(back.samples[i].scenario_id == d.samples[i].scenario_id);
        CHECK(back.samples[i].features == d.samples[i].features);
        CHECK(back.samples[i].labels == d.samples[i].labels);
    }

    try {
        read_dataset(path, load_bundled_case("ieee39_modified"));
        FAIL("foreign case accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::FingerprintMismatch);
    }

    std::ifstream in(path);
    std::stringstream all;
    all << in.rdbuf();
    std::string text = all.str();
    auto second_row = text.find('\n', text.find('\n') + 1) + 1;
    text.replace(second_row, 1, "2");
    std::filesystem::copy_file(path.string() + ".meta.json", dir / "mixed.csv.meta.json");
    std::ofstream(dir / "mixed.csv") << text;
    try {
        read_dataset(dir / "mixed.csv", gc);
        FAIL("mixed schema accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SchemaMismatch);
    }
    CHECK_THROWS_AS(read_dataset(dir / "missing.csv", gc), Error);
}
