#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "vvo/nlp.hpp"

using namespace vvo;

namespace {

NlpProblem box_quadratic() {
    // min (x-2)^2, 1 <= x <= 3
    NlpProblem p;
    p.n_vars = 1;
    p.lower = {1.0};
    p.upper = {3.0};
    p.objective = [](std::span<const double> x) { return (x[0] - 2.0) * (x[0] - 2.0); };
    p.gradient = [](std::span<const double> x, std::span<double> g) { g[0] = 2.0 * (x[0] - 2.0); };
    return p;
}

NlpProblem circle_problem() {
    // min x+y s.t. x^2+y^2 = 1
    NlpProblem p;
    p.n_vars = 2;
    p.lower = {-kInf, -kInf};
    p.upper = {kInf, kInf};
    p.objective = [](std::span<const double> x) { return x[0] + x[1]; };
    p.gradient = [](std::span<const double>, std::span<double> g) { g[0] = g[1] = 1.0; };
    p.n_eq = 1;
    p.eq_pattern = {{0, 0}, {0, 1}};
    p.eval_eq = [](std::span<const double> x, std::span<double> c) {
        c[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
    };
    p.eval_eq_jac = [](std::span<const double> x, std::span<double> v) {
        v[0] = 2.0 * x[0];
        v[1] = 2.0 * x[1];
    };
    return p;
}

}  // namespace

TEST_CASE("interior minimum of a box-constrained quadratic") {
    auto p = box_quadratic();
    std::vector<double> x0{1.2};
    auto sol = solve_nlp(p, x0);
    REQUIRE(sol.status == NlpStatus::LocallyOptimal);
    CHECK(sol.x[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(sol.objective == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("classic KKT point on the unit circle") {
    auto p = circle_problem();
    std::vector<double> x0{-0.5, -0.5};
    auto sol = solve_nlp(p, x0);
    REQUIRE(sol.status == NlpStatus::LocallyOptimal);
    const double r = -std::sqrt(2.0) / 2.0;
    CHECK(sol.x[0] == doctest::Approx(r).epsilon(1e-5));
    CHECK(sol.x[1] == doctest::Approx(r).epsilon(1e-5));
    CHECK(sol.objective == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-6));

    // status honesty: independent re-check of the constraint
    double c = sol.x[0] * sol.x[0] + sol.x[1] * sol.x[1] - 1.0;
    CHECK(std::abs(c) <= 1e-6);
}

TEST_CASE("convex QP with a known optimum") {
    // min sum_i q_i (x_i - t_i)^2 with inactive bounds -> x = t
    NlpProblem p;
    p.n_vars = 3;
    p.lower = {-10, -10, -10};
    p.upper = {10, 10, 10};
    const double q[3] = {1.0, 2.0, 3.0}, t[3] = {0.3, -1.2, 2.5};
    p.objective = [=](std::span<const double> x) {
        double f = 0;
        for (int i = 0; i < 3; ++i) f += q[i] * (x[i] - t[i]) * (x[i] - t[i]);
        return f;
    };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
        for (int i = 0; i < 3; ++i) g[i] = 2.0 * q[i] * (x[i] - t[i]);
    };
    std::vector<double> x0{0, 0, 0};
    auto sol = solve_nlp(p, x0);
    REQUIRE(sol.status == NlpStatus::LocallyOptimal);
    for (int i = 0; i < 3; ++i) CHECK(sol.x[i] == doctest::Approx(t[i]).epsilon(1e-6));
    CHECK(std::abs(sol.objective) <= 1e-6);
}

TEST_CASE("active inequality constraint") {
    // min x^2 + y^2 s.t. x + y >= 1 -> (0.5, 0.5)
    NlpProblem p;
    p.n_vars = 2;
    p.lower = {-kInf, -kInf};
    p.upper = {kInf, kInf};
    p.objective = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
    p.gradient = [](std::span<const double> x, std::span<double> g) {
        g[0] = 2 * x[0];
        g[1] = 2 * x[1];
    };
    p.n_ineq = 1;
    p.ineq_lower = {1.0};
    p.ineq_upper = {kInf};
    p.ineq_pattern = {{0, 0}, {0, 1}};
    p.eval_ineq = [](std::span<const double> x, std::span<double> c) { c[0] = x[0] + x[1]; };
    p.eval_ineq_jac = [](std::span<const double>, std::span<double> v) { v[0] = v[1] = 1.0; };
    std::vector<double> x0{0.0, 0.0};
    auto sol = solve_nlp(p, x0);
    REQUIRE(sol.status == NlpStatus::LocallyOptimal);
    CHECK(sol.x[0] == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(sol.x[1] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("barrier parameter decreases monotonically") {
    auto p = circle_problem();
    std::vector<double> mus;
    NlpOptions opts;
    opts.log = [&](const IterationInfo& info) { mus.push_back(info.mu); };
    std::vector<double> x0{0.8, -0.3};
    auto sol = solve_nlp(p, x0, opts);
    REQUIRE(sol.status == NlpStatus::LocallyOptimal);
    REQUIRE(mus.size() > 1);
    for (size_t i = 1; i < mus.size(); ++i) CHECK(mus[i] <= mus[i - 1] + 1e-15);
}

TEST_CASE("incompatible equalities are flagged, not 'solved'") {
    NlpProblem p;
    p.n_vars = 2;
    p.lower = {-5, -5};
    p.upper = {5, 5};
    p.objective = [](std::span<const double>) { return 0.0; };
    p.gradient = [](std::span<const double>, std::span<double> g) { g[0] = g[1] = 0.0; };
    p.n_eq = 2;
    p.eq_pattern = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    p.eval_eq = [](std::span<const double> x, std::span<double> c) {
        c[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
        c[1] = x[0] + x[1] - 10.0;
    };
    p.eval_eq_jac = [](std::span<const double> x, std::span<double> v) {
        v[0] = 2 * x[0];
        v[1] = 2 * x[1];
        v[2] = 1.0;
        v[3] = 1.0;
    };
    std::vector<double> x0{0.1, 0.1};
    NlpOptions opts;
    opts.max_iter = 500;
    auto sol = solve_nlp(p, x0, opts);
    CHECK(sol.status != NlpStatus::LocallyOptimal);
}

TEST_CASE("iteration cap maps to max-iterations") {
    auto p = circle_problem();
    NlpOptions opts;
    opts.max_iter = 2;
    std::vector<double> x0{5.0, 5.0};
    auto sol = solve_nlp(p, x0, opts);
    CHECK(sol.status == NlpStatus::MaxIterations);
    CHECK(sol.iterations == 2);
}

TEST_CASE("derivative check on exact and corrupted callbacks") {
    auto p = circle_problem();
    std::vector<double> pt{0.4, -0.7};
    auto good = check_derivatives(p, pt);
    CHECK(good.max_rel_error <= 1e-9);

    auto bad = p;
    bad.eval_eq_jac = [](std::span<const double> x, std::span<double> v) {
        v[0] = 2.0 * x[0] * 2.0;  // off by a factor of two
        v[1] = 2.0 * x[1];
    };
    auto res = check_derivatives(bad, pt);
    CHECK(res.max_rel_error == doctest::Approx(1.0).epsilon(0.35));
    CHECK(res.where.find("eq[0]") != std::string::npos);
}

TEST_CASE("random separable QPs against the per-coordinate closed form") {
    // min sum d_i/2 (x_i)^2 - b_i x_i over a box: x_i* = clamp(b_i/d_i, l, u)
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> ud(0.2, 5.0), ub(-4.0, 4.0), ul(-2.0, 0.0),
        uu(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + (int)(rng() % 8);
        std::vector<double> d(n), b(n), lo(n), up(n);
        for (int i = 0; i < n; ++i) {
            d[i] = ud(rng);
            b[i] = ub(rng);
            lo[i] = ul(rng);
            up[i] = uu(rng);
        }
        NlpProblem p;
        p.n_vars = n;
        p.lower = lo;
        p.upper = up;
        p.objective = [&](std::span<const double> x) {
            double f = 0;
            for (int i = 0; i < n; ++i) f += 0.5 * d[i] * x[i] * x[i] - b[i] * x[i];
            return f;
        };
        p.gradient = [&](std::span<const double> x, std::span<double> g) {
            for (int i = 0; i < n; ++i) g[i] = d[i] * x[i] - b[i];
        };
        std::vector<double> x0(n, 0.0);
        auto sol = solve_nlp(p, x0);
        REQUIRE(sol.status == NlpStatus::LocallyOptimal);
        double expect_obj = 0.0;
        for (int i = 0; i < n; ++i) {
            const double xi = std::clamp(b[i] / d[i], lo[i], up[i]);
            expect_obj += 0.5 * d[i] * xi * xi - b[i] * xi;
            CHECK(sol.x[i] == doctest::Approx(xi).epsilon(2e-5));
        }
        CHECK(std::abs(sol.objective - expect_obj) <=
              1e-6 * std::max(1.0, std::abs(expect_obj)));
    }
}
