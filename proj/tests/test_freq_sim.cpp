#include "fixtures.hpp"

#include "freqopf/error.hpp"
#include "freqopf/freq_sim.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace freqopf;

TEST_CASE("sim: coi_frequency")
{
    std::vector<double> f1{59.7}, h1{3.0};
    CHECK(coi_frequency(f1, h1) == doctest::Approx(59.7));
    std::vector<double> f2{59.8, 60.0}, h2{5.0, 5.0};
    CHECK(coi_frequency(f2, h2) == doctest::Approx(59.9));
    std::vector<double> f3{60.0, 59.6}, h3{2.0, 6.0};
    CHECK(coi_frequency(f3, h3) == doctest::Approx(59.7));
    std::vector<double> none;
    CHECK_THROWS_AS(coi_frequency(none, none), Error);
}

TEST_CASE("sim: worst_rocof and nadir on synthetic traces")
{
    std::vector<double> t, flat, ramp, step;
    for (int k = 0; k <= 2000; ++k) {
        double tk = k * 1e-3;
        t.push_back(tk);
        flat.push_back(60.0);
        ramp.push_back(60.0 - tk);
        step.push_back(tk < 0.1 ? 60.0 - tk : 59.9);
    }
    CHECK(worst_rocof(t, flat, 0.167) == 0.0);
    CHECK(worst_rocof(t, ramp, 0.167) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(worst_rocof(t, step, 0.167) == doctest::Approx(-0.1 / 0.167).epsilon(1e-3));

    CHECK(frequency_nadir(flat) == 60.0);
    auto dip = flat;
    dip[700] = 59.73;
    CHECK(frequency_nadir(dip) == 59.73);
    std::vector<double> short_t{0.0, 0.01}, short_f{60.0, 60.0};
    CHECK_THROWS_AS(worst_rocof(short_t, short_f, 0.167), Error);
}

TEST_CASE("sim: gfm_headroom_used")
{
    std::vector<double> t{0, 1, 2, 3, 4}, gfl{50, 50, 50, 50, 50}, gfm{100, 100, 108, 112, 104};
    CHECK(gfm_headroom_used(t, gfl, 50.0) == 0.0);
    CHECK(gfm_headroom_used(t, gfm, 100.0) == doctest::Approx(12.0));
    std::vector<double> empty;
    CHECK_THROWS_AS(gfm_headroom_used(empty, empty, 0.0), Error);
}

TEST_CASE("sim: steady state is an equilibrium")
{
    GridCase gc = fixtures::two_bus_ibr(120.0, 60.0);
    Dispatch d = make_dispatch(gc, {40.0, 50.0}, {30.0}, {0.5});
    SimState s = steady_state_init(gc, d);
    for (double f : s.rotor_freq_hz)
        CHECK(f == 60.0);
    CHECK(max_state_derivative(gc, d, s) < 1e-9);

    SimConfig quiet;
    quiet.t_end_s = 20.0;
    SimResult r = simulate(gc, d, quiet);
    double drift = 0.0;
    for (double f : r.trajectory.f_coi_hz)
        drift = std::max(drift, std::abs(f - 60.0));
    CHECK(drift < 1e-6);

    Dispatch shortd = make_dispatch(gc, {40.0, 45.0}, {30.0}, {0.5});
    try {
        steady_state_init(gc, shortd);
        FAIL("unbalanced dispatch accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::Unbalanced);
    }
}

TEST_CASE("sim: event on an idle unit leaves frequency flat")
{
    GridCase gc = fixtures::two_bus(80.0, 500.0);
    Dispatch d = make_dispatch(gc, {0.0, 80.0}, {}, {});
    SimConfig cfg;
    cfg.event = Contingency{1, 1.0};
    SimResult r = simulate(gc, d, cfg);
    CHECK(std::abs(r.metrics.worst_rocof_hz_per_s) < 1e-9);
    CHECK(r.metrics.nadir_hz == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("sim: initial RoCoF matches the swing equation")
{
    GridCase gc = fixtures::two_bus(100.0, 500.0);
    const double dp = 30.0;
    Dispatch d = make_dispatch(gc, {dp, 100.0 - dp}, {}, {});
    SimConfig cfg;
    cfg.event = Contingency{1, 1.0};
    cfg.governors_enabled = false;
    cfg.gfm_enabled = false;
    cfg.t_end_s = 3.0;
    SimResult r = simulate(gc, d, cfg);
    const auto& t = r.trajectory.t_s;
    const auto& f = r.trajectory.f_coi_hz;
    auto k0 = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), 1.0 + 1e-9) - t.begin());
    std::size_t k1 = k0 + 50;
    double measured = (f[k1] - f[k0]) / (t[k1] - t[k0]);
    double analytic = -gc.base_freq_hz * dp / (2.0 * system_kinetic_energy_mws(gc, 1));
    CHECK(std::abs(measured - analytic) <= 0.02 * std::abs(analytic));
    CHECK(r.metrics.worst_rocof_hz_per_s < 0.0);
    CHECK(r.metrics.nadir_hz <= f[k0]);
}

TEST_CASE("sim: GFM output stays within the reserved headroom")
{
    GridCase gc = fixtures::two_bus_ibr(140.0, 60.0);
    gc.gens[0].p_max_mw = 60;
    for (double p_ibr : {30.0, 55.0}) {
        Dispatch d = make_dispatch(gc, {50.0, 140.0 - 50.0 - p_ibr}, {p_ibr}, {0.8});
        SimConfig cfg;
        cfg.event = Contingency{1, 1.0};
        SimResult r = simulate(gc, d, cfg);
        double h = d.headroom_mw[0];
        CHECK(r.metrics.headroom_used_mw[0] <= h + 1e-6);
        CHECK(r.metrics.headroom_used_mw[0] > 0.0);
        double pre = d.p_gfm_mw[0];
        for (double p : r.trajectory.p_gfm_mw[0])
            CHECK(p - pre <= h + 1e-6);
    }
}

TEST_CASE("sim: more GFM share helps the nadir")
{
    GridCase gc = fixtures::two_bus_ibr(140.0, 60.0);
    double prev_nadir = -1e9, prev_rocof = 1e9;
    for (double a : {0.5, 0.7, 0.9}) {
        Dispatch d = make_dispatch(gc, {40.0, 60.0}, {40.0}, {a});
        SimConfig cfg;
        cfg.event = Contingency{1, 1.0};
        SimResult r = simulate(gc, d, cfg);
        CHECK(r.metrics.nadir_hz >= prev_nadir);
        CHECK(std::abs(r.metrics.worst_rocof_hz_per_s) <= prev_rocof);
        prev_nadir = r.metrics.nadir_hz;
        prev_rocof = std::abs(r.metrics.worst_rocof_hz_per_s);
    }
}
