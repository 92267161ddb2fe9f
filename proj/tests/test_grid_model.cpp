#include "fixtures.hpp"

#include "freqopf/error.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>

using namespace freqopf;

namespace {

bool mentions(const std::vector<std::string>& v, const std::string& s)
{
    return std::any_of(v.begin(), v.end(), [&](const std::string& x) { return x.find(s) != std::string::npos; });
}

}  // namespace

TEST_CASE("grid: bundled 9-bus layout")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    CHECK(gc.buses.size() == 9);
    REQUIRE(gc.ibrs.size() == 1);
    CHECK(gc.ibrs[0].bus == 2);
    int at1 = 0, at3 = 0;
    for (const auto& g : gc.gens) {
        CHECK(g.bus != 2);
        at1 += g.bus == 1;
        at3 += g.bus == 3;
    }
    CHECK(at1 > 1);
    CHECK(at3 > 1);
    // Units sharing a bus are identical apart from their id and candidate flag.
    for (const auto& a : gc.gens)
        for (const auto& b : gc.gens)
            if (a.bus == b.bus) {
                CHECK(a.p_max_mw == b.p_max_mw);
                CHECK(a.inertia_h_s == b.inertia_h_s);
                CHECK(a.cost_a == b.cost_a);
            }
    CHECK(validate_case(gc).empty());
}

TEST_CASE("grid: bundled 39-bus layout")
{
    GridCase gc = load_bundled_case("ieee39_modified");
    CHECK(gc.buses.size() == 39);
    std::vector<int> buses;
    for (const auto& p : gc.ibrs)
        buses.push_back(p.bus);
    std::sort(buses.begin(), buses.end());
    CHECK(buses == std::vector<int>{36, 39});
    CHECK(validate_case(gc).empty());
    CHECK(gc.outage_candidate_ids() == std::vector<int>{38});
}

TEST_CASE("grid: parse round trip and validation errors")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    CHECK(parse_case(case_to_json(gc)) == gc);
    CHECK(case_fingerprint(parse_case(case_to_json(gc))) == case_fingerprint(gc));

    auto j = nlohmann::json::parse(case_to_json(gc));
    j["lines"][3]["to_bus"] = j["lines"][3]["from_bus"];
    int line_id = j["lines"][3]["id"].get<int>();
    try {
        parse_case(j.dump());
        FAIL("self-loop accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ValidationError);
        CHECK(std::string(e.what()).find("line " + std::to_string(line_id)) != std::string::npos);
    }

    CHECK_THROWS_AS(parse_case("{not json"), Error);
    CHECK_THROWS_AS(load_case("/nonexistent/case.json"), Error);
}

TEST_CASE("grid: validate_case reports insolvable and disconnected cases")
{
    GridCase gc = fixtures::two_bus(250.0, 500.0);
    auto v = validate_case(gc);
    CHECK(v.size() == 1);
    CHECK(mentions(v, "insolvable"));

    GridCase iso = fixtures::two_bus(50.0, 500.0);
    iso.buses.push_back({3, 0.0});
    v = validate_case(iso);
    CHECK(v.size() == 1);
    CHECK(mentions(v, "connectivity"));
}

TEST_CASE("grid: apply_contingency")
{
    GridCase gc = fixtures::two_bus(50.0, 500.0);
    gc.gens.push_back(fixtures::gen(3, 2, 0, 50, 3.0, 60, 20.0));
    gc.gens[1].outage_candidate = true;

    GridCase out = apply_contingency(gc, {2, 1.0});
    CHECK(out.gens.size() == 2);
    CHECK(out.gen_index(2) == -1);
    CHECK(out.buses == gc.buses);
    CHECK(out.lines == gc.lines);

    try {
        apply_contingency(gc, {99, 1.0});
        FAIL("unknown gen accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnknownGen);
    }
    try {
        apply_contingency(gc, {3, 1.0});
        FAIL("non-candidate accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NotOutageCandidate);
    }
}

TEST_CASE("grid: scale_case and kinetic energy")
{
    GridCase gc = fixtures::two_bus_ibr(80.0, 40.0);
    GridCase s = scale_case(gc, 1.5, 0.5);
    CHECK(s.total_load_mw() == doctest::Approx(120.0));
    CHECK(s.ibrs[0].p_available_max_mw == doctest::Approx(20.0));
    CHECK(system_kinetic_energy_mws(gc) == doctest::Approx(5.0 * 120 + 10.0 * 100));
    CHECK(system_kinetic_energy_mws(gc, 1) == doctest::Approx(1000.0));
    CHECK(case_fingerprint(s) != case_fingerprint(gc));
}
