#include "freqopf/error.hpp"
#include "freqopf/opt_kernel.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace freqopf;

namespace {

OptModel random_milp(std::mt19937_64& rng, int nb, int nc, int rows)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    OptModel m;
    for (int j = 0; j < nb; ++j)
        m.add_var("b" + std::to_string(j), 0, 1, true);
    for (int j = 0; j < nc; ++j)
        m.add_var("x" + std::to_string(j), -2.0, 3.0);
    for (int j = 0; j < nb + nc; ++j)
        m.add_objective(j, 3.0 * u(rng));
    for (int i = 0; i < rows; ++i) {
        std::vector<LinTerm> t;
        for (int j = 0; j < nb + nc; ++j)
            if (u(rng) > -0.3)
                t.push_back({j, 2.0 * u(rng)});
        m.add_constraint("r" + std::to_string(i), t, u(rng) > 0 ? Sense::Le : Sense::Ge, u(rng) > 0 ? 1.5 : -1.5);
    }
    return m;
}

// Exhaustive oracle: enumerate binaries, solve the remaining LP.
double brute_force(const OptModel& m, int nb, bool& feasible)
{
    double best = kInf;
    for (int mask = 0; mask < (1 << nb); ++mask) {
        OptModel f = m;
        for (int j = 0; j < nb; ++j)
            f.set_bounds(j, (mask >> j) & 1, (mask >> j) & 1);
        auto s = solve_lp(f);
        if (s.status == SolveStatus::Optimal)
            best = std::min(best, s.objective);
    }
    feasible = best < kInf;
    return best;
}

}  // namespace

TEST_CASE("lp: single lower bound")
{
    OptModel m;
    int x = m.add_var("x", -kInf, kInf);
    m.add_constraint("c", {{x, 1.0}}, Sense::Ge, 3.0);
    m.add_objective(x, 1.0);
    auto s = solve_lp(m);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.values[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(s.objective == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("lp: box with budget")
{
    OptModel m;
    int x = m.add_var("x", 0, 1), y = m.add_var("y", 0, 1);
    m.add_constraint("c", {{x, 1.0}, {y, 1.0}}, Sense::Le, 1.0);
    m.add_objective(x, -1.0);
    m.add_objective(y, -1.0);
    auto s = solve_lp(m);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(-1.0));
}

TEST_CASE("lp: infeasible and unbounded")
{
    OptModel m;
    int x = m.add_var("x", -kInf, kInf);
    m.add_constraint("a", {{x, 1.0}}, Sense::Ge, 3.0);
    m.add_constraint("b", {{x, 1.0}}, Sense::Le, 2.0);
    m.add_objective(x, 1.0);
    CHECK(solve_lp(m).status == SolveStatus::Infeasible);

    OptModel u;
    int z = u.add_var("z", 0, kInf);
    u.add_objective(z, -1.0);
    CHECK(solve_lp(u).status == SolveStatus::Unbounded);
}

TEST_CASE("lp: random instances are feasible and dual-certified")
{
    std::mt19937_64 rng(11);
    int optimal = 0;
    for (int k = 0; k < 60; ++k) {
        OptModel m = random_milp(rng, 0, 8, 6);
        auto s = solve_lp(m);
        if (s.status != SolveStatus::Optimal)
            continue;
        ++optimal;
        CHECK(m.max_violation(s.values) <= 1e-7);
        for (int j = 0; j < m.num_vars(); ++j) {
            CHECK(s.values[static_cast<std::size_t>(j)] >= m.var(j).lo - 1e-9);
            CHECK(s.values[static_cast<std::size_t>(j)] <= m.var(j).hi + 1e-9);
        }
        CHECK(s.dual_bound <= s.objective + 1e-9);
        CHECK(s.objective - s.dual_bound <= 1e-6 * (1.0 + std::abs(s.objective)));
    }
    CHECK(optimal > 20);
}

TEST_CASE("milp: matches enumeration")
{
    std::mt19937_64 rng(5);
    for (int k = 0; k < 30; ++k) {
        int nb = 5;
        OptModel m = random_milp(rng, nb, 3, 5);
        bool feas = false;
        double ref = brute_force(m, nb, feas);
        auto s = solve_milp(m, 60.0);
        if (!feas) {
            CHECK(s.status == SolveStatus::Infeasible);
            continue;
        }
        REQUIRE(s.status == SolveStatus::Optimal);
        CHECK(std::abs(s.objective - ref) <= 1e-9 * (1.0 + std::abs(ref)));
        auto relax = solve_lp(m);
        CHECK(s.objective >= relax.objective - 1e-9);
    }
}

TEST_CASE("milp: fixed binaries reduce to LP, tiny time limit reports a gap")
{
    std::mt19937_64 rng(3);
    OptModel m;
    do {
        m = random_milp(rng, 4, 3, 4);
    } while (solve_lp(m).status != SolveStatus::Optimal);
    OptModel f = m;
    for (int j = 0; j < 4; ++j)
        f.set_bounds(j, 1, 1);
    auto lp = solve_lp(f);
    auto mi = solve_milp(f, 60.0);
    CHECK(lp.status == mi.status);
    if (lp.status == SolveStatus::Optimal)
        CHECK(mi.objective == doctest::Approx(lp.objective).epsilon(1e-12));

    auto tl = solve_milp(m, 1e-9);
    CHECK(tl.status == SolveStatus::TimeLimit);
    CHECK(std::isinf(tl.gap));
}

TEST_CASE("milp: deterministic node counts")
{
    std::mt19937_64 rng(9);
    OptModel m = random_milp(rng, 7, 4, 6);
    auto a = solve_milp(m, 60.0), b = solve_milp(m, 60.0);
    CHECK(a.node_count == b.node_count);
    CHECK(a.values == b.values);
}

TEST_CASE("pwl: chord gap")
{
    auto lin = pwl_quadratic(0.0, 2.0, 1.0, 0.0, 10.0, 3);
    for (double p = 0; p <= 10.0; p += 0.25)
        CHECK(lin.eval(p) == doctest::Approx(2.0 * p + 1.0).epsilon(1e-14));

    auto q = pwl_quadratic(1.0, 0.0, 0.0, 0.0, 2.0, 2);
    CHECK(q.eval(0.5) - 0.25 == doctest::Approx(0.25));
    CHECK(q.eval(1.5) - 2.25 == doctest::Approx(0.25));
    CHECK(pwl_error_bound(1.0, 0.0, 2.0, 2) == doctest::Approx(0.25));

    auto g = pwl_quadratic(0.33, 5.0, 50.0, 5.0, 80.0, 10);
    double bound = pwl_error_bound(0.33, 5.0, 80.0, 10);
    for (int k = 0; k <= 3000; ++k) {
        double p = 5.0 + 75.0 * k / 3000.0;
        double gap = g.eval(p) - (0.33 * p * p + 5.0 * p + 50.0);
        CHECK(gap >= -1e-9);
        CHECK(gap <= bound + 1e-9);
    }
    CHECK_THROWS_AS(pwl_quadratic(-1.0, 0, 0, 0, 1, 2), Error);
}

TEST_CASE("pwl: objective in LP reproduces quadratic minimum within the chord bound")
{
    OptModel m;
    int x = m.add_var("p", 0, 10);
    m.add_pwl_objective(x, pwl_quadratic(1.0, -6.0, 0.0, 0.0, 10.0, 10));
    auto s = solve_lp(m);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.values[0] == doctest::Approx(3.0));
    CHECK(s.objective == doctest::Approx(-9.0));
    CHECK(m.to_lp_text().find("Subject To") != std::string::npos);
}
