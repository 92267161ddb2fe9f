#include "fixtures.hpp"

#include "freqopf/dataset_gen.hpp"
#include "freqopf/error.hpp"
#include "freqopf/neural_predictor.hpp"
#include "freqopf/opf_models.hpp"

#include <doctest.h>

#include <cmath>

using namespace freqopf;
using Eigen::VectorXd;

namespace {

MlpNet one_neuron()
{
    MlpNet n = MlpNet::zeros({1, 1, 1});
    n.weights[0](0, 0) = 1.0;
    n.weights[1](0, 0) = 1.0;
    return n;
}

NeuronBounds box_bounds(const MlpNet& n, double lo, double hi)
{
    return interval_bounds(n, VectorXd::Constant(1, lo), VectorXd::Constant(1, hi));
}

double optimize(OptModel m, int var, double sign)
{
    m.clear_objective();
    m.add_objective(var, sign);
    Solution s = m.num_binaries() ? solve_milp(m, 60.0) : solve_lp(m);
    REQUIRE(s.status == SolveStatus::Optimal);
    return s.values[static_cast<std::size_t>(var)];
}

/// Random net sized for the case, normalized over the predictor input box so outputs stay O(1).
MlpNet random_case_net(const GridCase& gc, const Contingency& c, int width, std::uint64_t seed)
{
    VectorXd lo, hi;
    predictor_input_box(gc, c, lo, hi);
    const int nin = static_cast<int>(lo.size());
    const int nout = static_cast<int>(label_names(gc).size());
    MlpNet net = MlpNet::random({nin, width, nout}, seed);
    net.input_norm.mean = 0.5 * (lo + hi);
    net.input_norm.stddev = (0.5 * (hi - lo)).cwiseMax(1.0);
    return net;
}

}  // namespace

TEST_CASE("opf: single neuron encodings")
{
    MlpNet n = one_neuron();
    {
        OptModel m;
        auto e = embed_network(m, n, box_bounds(n, -4, 4), {EncodingKind::BPWL, 0}, {{-1, 1.0, -2.0}});
        REQUIRE(e.binaries[0][0] >= 0);
        m.set_bounds(e.binaries[0][0], 0, 0);
        CHECK(optimize(m, e.outputs[0], 1.0) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(optimize(m, e.outputs[0], -1.0) == doctest::Approx(0.0).epsilon(1e-9));
    }
    for (EncodingKind k : {EncodingKind::BPWL, EncodingKind::CTAR, EncodingKind::PCTAR, EncodingKind::PCAR}) {
        CAPTURE(encoding_name(k));
        OptModel m;
        auto e = embed_network(m, n, box_bounds(n, -4, 4), {k, 100.0}, {{-1, 1.0, 3.0}});
        // Penalty encodings carry their own objective; the others need a direction.
        if (k == EncodingKind::BPWL || k == EncodingKind::CTAR)
            m.add_objective(e.outputs[0], 1.0);
        Solution s = m.num_binaries() ? solve_milp(m, 60.0) : solve_lp(m);
        REQUIRE(s.status == SolveStatus::Optimal);
        CHECK(s.values[static_cast<std::size_t>(e.outputs[0])] == doctest::Approx(3.0).epsilon(1e-9));
    }
    {
        OptModel m;
        NeuronBounds nb = box_bounds(n, 0.0, 0.0);
        nb.lo[0](0) = -1.0;
        nb.hi[0](0) = 1.0;
        auto e = embed_network(m, n, nb, {EncodingKind::CTAR, 0}, {{-1, 1.0, 0.0}});
        int z = e.post[0][0];
        CHECK(optimize(m, z, 1.0) == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(optimize(m, z, -1.0) == doctest::Approx(0.5).epsilon(1e-6));
    }
    OptModel m;
    CHECK_THROWS_AS(embed_network(m, n, box_bounds(n, -1, 1), {EncodingKind::BPWL, 0}, {{-1, 1.0, 3.0}}), Error);
}

TEST_CASE("opf: T-OPF on small systems")
{
    GridCase one;
    one.slack_bus = 1;
    one.buses = {{1, 37.5}};
    one.gens = {fixtures::gen(1, 1, 0, 100, 5, 120, 10)};
    OpfModel om = build_topf(one);
    OpfResult r = solve_opf(om);
    REQUIRE(r.dispatch);
    CHECK(r.dispatch->p_gen_mw[0] == doctest::Approx(37.5).epsilon(1e-9));

    GridCase two = fixtures::two_bus(100.0, 60.0);
    two.gens[0].cost_a = 0.02;
    two.gens[1].cost_a = 0.01;
    OpfModel om2 = build_topf(two, {.pwl_segments = 200});
    OpfResult r2 = solve_opf(om2);
    REQUIRE(r2.dispatch);
    double best_cost = 1e300, best_p1 = -1;
    for (int k = 0; k <= 10000; ++k) {
        double p1 = 0.01 * k;
        double p2 = 100.0 - p1;
        if (p1 > 60.0 + 1e-12 || p2 < 0 || p2 > 100)
            continue;
        double cost = 0.02 * p1 * p1 + 10 * p1 + 0.01 * p2 * p2 + 30 * p2;
        if (cost < best_cost) {
            best_cost = cost;
            best_p1 = p1;
        }
    }
    CHECK(std::abs(r2.dispatch->p_gen_mw[0] - best_p1) <= 0.1);
    CHECK(r2.dispatch->flow_mw[0] == doctest::Approx(r2.dispatch->p_gen_mw[0]).epsilon(1e-9));

    GridCase over = fixtures::two_bus(250.0, 500.0);
    OpfModel om3 = build_topf(over);
    OpfResult r3 = solve_opf(om3);
    CHECK(r3.solution.status == SolveStatus::Infeasible);
    CHECK_FALSE(r3.dispatch);
}

TEST_CASE("opf: L-FCOPF RoCoF cap")
{
    GridCase gc = fixtures::two_bus(100.0, 500.0, 10.0, 30.0);
    gc.gens[1].inertia_h_s = 10.0;  // 1000 MW*s left after losing gen 1
    Contingency c{1, 1.0};
    FreqLimits lim{-0.5, -kInf};
    OpfModel om = build_lfcopf(gc, c, lim);
    CHECK(om.rocof_cap_pu * gc.base_mva == doctest::Approx(0.5 * 2.0 * 1000.0 / 60.0).epsilon(1e-12));
    CHECK(std::abs(om.rocof_cap_pu * gc.base_mva - 16.6666666667) < 1e-9);
    OpfResult r = solve_opf(om);
    REQUIRE(r.dispatch);
    CHECK(r.dispatch->p_gen_mw[0] <= 50.0 / 3.0 + 1e-9);
    CHECK(r.dispatch->p_gen_mw[0] == doctest::Approx(50.0 / 3.0).epsilon(1e-9));
    REQUIRE(r.dispatch->predicted_rocof_hz_s);
    CHECK(*r.dispatch->predicted_rocof_hz_s == doctest::Approx(-0.5).epsilon(1e-9));

    OpfModel free_om = build_lfcopf(gc, c, FreqLimits::disabled());
    OpfModel t = build_topf(gc);
    auto rf = solve_opf(free_om);
    auto rt = solve_opf(t);
    REQUIRE(rf.dispatch);
    REQUIRE(rt.dispatch);
    CHECK(rf.dispatch->p_gen_mw == rt.dispatch->p_gen_mw);
    CHECK(rf.dispatch->total_cost == doctest::Approx(rt.dispatch->total_cost));

    // Tight limit: the zero-outage point stays feasible.
    OpfModel tight = build_lfcopf(gc, c, {-1e-9, -kInf});
    auto rz = solve_opf(tight);
    REQUIRE(rz.dispatch);
    CHECK(std::abs(rz.dispatch->p_gen_mw[0]) < 1e-6);
}

TEST_CASE("opf: DL-FCOPF with inactive coupling matches T-OPF")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    Contingency c{gc.outage_candidate_ids().front(), 1.0};
    VectorXd lo, hi;
    predictor_input_box(gc, c, lo, hi);
    MlpNet zero = MlpNet::zeros({static_cast<int>(lo.size()), 4, static_cast<int>(label_names(gc).size())});
    OpfModel dl = build_dlfcopf(gc, c, zero, FreqLimits::disabled(), {EncodingKind::BPWL, 0});
    OpfModel t = build_topf(gc);
    auto rd = solve_opf(dl);
    auto rt = solve_opf(t);
    REQUIRE(rd.dispatch);
    REQUIRE(rt.dispatch);
    CHECK(rd.dispatch->total_cost == doctest::Approx(rt.dispatch->total_cost).epsilon(1e-9));
    for (std::size_t i = 0; i < gc.ibrs.size(); ++i)
        CHECK(rd.dispatch->p_ibr_mw[i] + rd.dispatch->headroom_mw[i] ==
              doctest::Approx(gc.ibrs[i].p_available_max_mw).epsilon(1e-12));
}

TEST_CASE("opf: extracted dispatch is consistent")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    OpfModel t = build_topf(gc);
    auto rt = solve_opf(t);
    REQUIRE(rt.dispatch);
    const Dispatch& d = *rt.dispatch;
    double inj = 0;
    for (double p : d.p_gen_mw)
        inj += p;
    for (double p : d.p_ibr_mw)
        inj += p;
    CHECK(std::abs(inj - gc.total_load_mw()) <= 1e-6);
    for (std::size_t k = 0; k < gc.lines.size(); ++k) {
        const auto& ln = gc.lines[k];
        double th_f = d.angle_rad[static_cast<std::size_t>(gc.bus_index(ln.from_bus))];
        double th_t = d.angle_rad[static_cast<std::size_t>(gc.bus_index(ln.to_bus))];
        CHECK(std::abs(d.flow_mw[k] - gc.base_mva * (th_f - th_t) / ln.reactance_pu) <= 1e-9 * gc.base_mva);
    }
}

TEST_CASE("opf: BPWL embedding reproduces the forward pass")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    for (int cand : gc.outage_candidate_ids())
        for (std::uint64_t seed : {1u, 2u}) {
            Contingency c{cand, 1.0};
            MlpNet net = random_case_net(gc, c, 6, seed);
            OpfModel om = build_dlfcopf(gc, c, net, FreqLimits::disabled(), {EncodingKind::BPWL, 0});
            auto r = solve_opf(om);
            REQUIRE(r.dispatch);
            VectorXd y = forward(net, dispatch_features(gc, *r.dispatch, c));
            for (std::size_t k = 0; k < om.net.outputs.size(); ++k) {
                double emb = r.solution.values[static_cast<std::size_t>(om.net.outputs[k])];
                CHECK(std::abs(emb - y(static_cast<Eigen::Index>(k))) / net.output_norm.stddev(static_cast<Eigen::Index>(k)) <= 1e-6);
            }
            CHECK(r.linearization_error <= 1e-6);
        }
}

TEST_CASE("opf: names and replacement constraints")
{
    for (EncodingKind k : {EncodingKind::BPWL, EncodingKind::CTAR, EncodingKind::PCTAR, EncodingKind::PCAR})
        CHECK(parse_encoding(encoding_name(k)) == k);
    CHECK_THROWS_AS(parse_encoding("relu"), Error);
}

TEST_CASE("opf: objective-capped tightening keeps the BPWL optimum")
{
    GridCase gc = load_bundled_case("wscc9_modified");
    SolveConfig plain;
    plain.cutoff_tightening = false;
    int compared = 0;
    for (int cand : gc.outage_candidate_ids())
        for (std::uint64_t seed : {3u, 4u}) {
            Contingency c{cand, 1.0};
            MlpNet net = random_case_net(gc, c, 8, seed);
            OpfModel a = build_dlfcopf(gc, c, net, FreqLimits::disabled(), {EncodingKind::BPWL, 0});
            OpfModel b = a;
            auto ra = solve_opf(a, plain);
            auto rb = solve_opf(b);
            REQUIRE(ra.solution.status == rb.solution.status);
            if (!ra.dispatch)
                continue;
            ++compared;
            REQUIRE(rb.dispatch);
            CHECK(rb.solution.objective == doctest::Approx(ra.solution.objective).epsilon(1e-6));
            CHECK(rb.linearization_error <= 1e-6);
        }
    CHECK(compared > 0);
}
