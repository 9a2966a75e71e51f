#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support.hpp"
#include "vvo/acpf.hpp"

using namespace vvo;

namespace {

Branch lossless_line(double x) {
    Branch br;
    br.from_bus = 0;
    br.to_bus = 1;
    const Complex ys = 1.0 / Complex(0.0, x);
    br.yff = ys;
    br.ytt = ys;
    br.yft = -ys;
    br.ytf = -ys;
    return br;
}

}  // namespace

TEST_CASE("tap-adjusted branch admittance") {
    auto br = lossless_line(0.1);

    auto y1 = branch_admittance(br, 1.0);
    CHECK(y1.Yff == Complex(0.0, -10.0));
    CHECK(y1.Ytt == Complex(0.0, -10.0));
    CHECK(y1.Yft == Complex(0.0, 10.0));
    CHECK(y1.Ytf == Complex(0.0, 10.0));

    auto y2 = branch_admittance(br, 2.0);
    CHECK(y2.Yff == Complex(0.0, -2.5));
    CHECK(y2.Yft == Complex(0.0, 5.0));
    CHECK(y2.Ytf == Complex(0.0, 5.0));
    CHECK(y2.Ytt == Complex(0.0, -10.0));

    // halving the tap quadruples |Yff|
    auto yh = branch_admittance(br, 0.5);
    CHECK(std::abs(yh.Yff) == doctest::Approx(4.0 * std::abs(y1.Yff)));
}

TEST_CASE("shunt admittance") {
    ShuntDevice sh;
    sh.gs = 0.0;
    sh.bs0 = 0.19;
    CHECK(shunt_admittance(sh, 0.1).imag() == doctest::Approx(0.29).epsilon(1e-14));
    CHECK(shunt_admittance(sh, 0.0) == Complex(0.0, 0.19));
    sh.gs = 0.02;
    sh.bs0 = -0.05;
    CHECK(shunt_admittance(sh, 0.3).real() == doctest::Approx(0.02));
    CHECK(shunt_admittance(sh, 0.3).imag() == doctest::Approx(0.25));
}

TEST_CASE("branch flows against the closed form") {
    auto br = lossless_line(0.1);

    SUBCASE("no angle difference, no flow") {
        auto f = branch_flows(br, 1.0, Complex(1.0, 0.0), Complex(1.0, 0.0));
        CHECK(f.pf == doctest::Approx(0.0));
        CHECK(f.qf == doctest::Approx(0.0));
        CHECK(f.pt == doctest::Approx(0.0));
        CHECK(f.qt == doctest::Approx(0.0));
    }

    SUBCASE("0.1 rad across a 0.1 p.u. reactance") {
        const double x = 0.1, th = 0.1, vi = 1.0, vj = 1.0;
        auto f = branch_flows(br, 1.0, std::polar(vi, th), std::polar(vj, 0.0));
        // lossless-line oracle: p = vi vj sin(th)/x, q = (v^2 - vi vj cos th)/x
        const double p_oracle = vi * vj * std::sin(th) / x;
        const double qf_oracle = (vi * vi - vi * vj * std::cos(th)) / x;
        const double qt_oracle = (vj * vj - vi * vj * std::cos(th)) / x;
        CHECK(f.pf == doctest::Approx(p_oracle).epsilon(1e-12));
        CHECK(f.pt == doctest::Approx(-p_oracle).epsilon(1e-12));
        CHECK(f.qf == doctest::Approx(qf_oracle).epsilon(1e-12));
        CHECK(f.qt == doctest::Approx(qt_oracle).epsilon(1e-12));
        CHECK(f.pf == doctest::Approx(0.9983).epsilon(1e-4));
        CHECK(f.qf == doctest::Approx(0.0500).epsilon(1e-2));
    }

    SUBCASE("tap symmetry: scaling Vi by the tap reproduces the tap-1 flows") {
        Branch tr;
        tr.from_bus = 0;
        tr.to_bus = 1;
        const Complex ys = 1.0 / Complex(0.02, 0.12);
        tr.yff = ys + Complex(0.0, 0.01);
        tr.ytt = tr.yff;
        tr.yft = -ys;
        tr.ytf = -ys;
        const double t = 1.05;
        const Complex vi = std::polar(0.98, 0.07), vj = std::polar(1.03, -0.02);
        auto base = branch_flows(tr, 1.0, vi, vj);
        auto scaled = branch_flows(tr, t, t * vi, vj);
        CHECK(scaled.pf == doctest::Approx(base.pf).epsilon(1e-12));
        CHECK(scaled.qf == doctest::Approx(base.qf).epsilon(1e-12));
        CHECK(scaled.pt == doctest::Approx(base.pt).epsilon(1e-12));
        CHECK(scaled.qt == doctest::Approx(base.qt).epsilon(1e-12));
    }
}

TEST_CASE("flow partials match central differences at random interior points") {
    Branch br;
    br.from_bus = 0;
    br.to_bus = 1;
    const Complex ys = 1.0 / Complex(0.015, 0.09);
    br.yff = ys + Complex(0.0, 0.02);
    br.ytt = br.yff;
    const Complex shift = std::polar(1.0, 0.03);  // fixed phase shift folded in
    br.yft = -ys * shift;
    br.ytf = -ys / shift;

    std::mt19937 rng(7);
    std::uniform_real_distribution<double> dv(0.9, 1.1), da(-0.5, 0.5), dt(0.92, 1.08);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const double vi = dv(rng), vj = dv(rng), ti = da(rng), tj = da(rng), tap = dt(rng);
        auto d = branch_flow_derivs(br, tap, vi, ti, vj, tj);
        double args[5] = {ti, tj, vi, vj, tap};
        for (int k = 0; k < 5; ++k) {
            const double h = 1e-6 * std::max(1.0, std::abs(args[k]));
            double hi[5], lo[5];
            std::copy(args, args + 5, hi);
            std::copy(args, args + 5, lo);
            hi[k] += h;
            lo[k] -= h;
            auto fp = branch_flows(br, hi[4], std::polar(hi[2], hi[0]), std::polar(hi[3], hi[1]));
            auto fm = branch_flows(br, lo[4], std::polar(lo[2], lo[0]), std::polar(lo[3], lo[1]));
            const double fd[4] = {(fp.pf - fm.pf) / (2 * h), (fp.qf - fm.qf) / (2 * h),
                                  (fp.pt - fm.pt) / (2 * h), (fp.qt - fm.qt) / (2 * h)};
            const double an[4] = {d.dpf[k], d.dqf[k], d.dpt[k], d.dqt[k]};
            for (int q = 0; q < 4; ++q) {
                const double rel =
                    std::abs(an[q] - fd[q]) / std::max({1.0, std::abs(an[q]), std::abs(fd[q])});
                worst = std::max(worst, rel);
            }
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("KCL residual") {
    SUBCASE("single bus with generation equal to load") {
        Network net;
        net.base_mva = 100.0;
        Bus b;
        b.id = 0;
        b.base_kv = 138;
        b.vmin = 0.9;
        b.vmax = 1.1;
        b.pd = 0.5;
        b.qd = 0.2;
        b.is_slack = true;
        net.buses = {b};
        Generator g;
        g.bus = 0;
        g.pmax = 1;
        g.qmin = -1;
        g.qmax = 1;
        net.generators = {g};
        net.rebuild_adjacency();
        auto st = OperatingState::sized_for(net);
        st.pg[0] = 0.5;
        st.qg[0] = 0.2;
        auto res = kcl_residual(net, st);
        CHECK(std::abs(res[0]) <= 1e-15);
    }

    SUBCASE("perturbing one voltage only disturbs that bus and its neighbors") {
        // chain of 4 buses: perturbing vm at bus 1 leaves bus 3 untouched
        Network net;
        net.base_mva = 100.0;
        for (int i = 0; i < 4; ++i) {
            Bus b;
            b.id = i;
            b.base_kv = 138;
            b.vmin = 0.9;
            b.vmax = 1.1;
            b.is_slack = i == 0;
            net.buses.push_back(b);
        }
        Generator g;
        g.bus = 0;
        g.pmax = 10;
        g.qmin = -10;
        g.qmax = 10;
        net.generators = {g};
        for (int i = 0; i < 3; ++i) {
            Branch br = lossless_line(0.1);
            br.from_bus = i;
            br.to_bus = i + 1;
            net.branches.push_back(br);
        }
        net.rebuild_adjacency();

        std::vector<double> tap{1, 1, 1}, cb, pg{0.0}, vm{1, 1, 1, 1};
        auto pf = solve_power_flow(net, tap, cb, pg, vm);
        REQUIRE(pf.ok());
        auto st = *pf.state;
        auto base = kcl_residual(net, st);
        st.vm[1] += 0.01;
        auto pert = kcl_residual(net, st);
        CHECK(std::abs(pert[0] - base[0]) > 1e-6);
        CHECK(std::abs(pert[1] - base[1]) > 1e-6);
        CHECK(std::abs(pert[2] - base[2]) > 1e-6);
        CHECK(std::abs(pert[3] - base[3]) <= 1e-15);
    }
}

TEST_CASE("two-bus power flow against the quadratic closed form") {
    const double x = 0.1, pd = 1.0;
    auto net = test::make_two_bus(x, pd, 0.0);
    std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.0, 1.0};

    auto r = solve_power_flow(net, tap, cb, pg, vm);
    REQUIRE(r.ok());

    // v2 sin th = -pd x and v2 cos th = v2^2 give a quadratic in v2^2
    const double v2 = std::sqrt((1.0 + std::sqrt(1.0 - 4.0 * pd * pd * x * x)) / 2.0);
    const double th = std::asin(-pd * x / v2);
    CHECK(std::abs(r.state->vm[1] - v2) <= 1e-8);
    CHECK(std::abs(r.state->va[1] - th) <= 1e-6);

    // converged state satisfies KCL to the solver tolerance
    auto res = kcl_residual(net, *r.state);
    for (const auto& c : res) CHECK(std::abs(c) <= 1e-10);
}

TEST_CASE("loading beyond the transfer limit fails instead of lying") {
    // maximum deliverable load of the lossless two-bus system is v1^2/(2x) = 5
    auto net = test::make_two_bus(0.1, 10.0, 0.0);
    std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.0, 1.0};
    auto r = solve_power_flow(net, tap, cb, pg, vm);
    CHECK(!r.ok());
    CHECK(!r.failure.reason.empty());
}

TEST_CASE("zero-load network converges immediately from a flat start") {
    auto net = test::make_two_bus(0.1, 0.0, 0.0);
    std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.0, 1.0};
    PfOptions opts;
    opts.flat_start = true;
    auto r = solve_power_flow(net, tap, cb, pg, vm, opts);
    REQUIRE(r.ok());
    CHECK(r.iterations <= 1);
    CHECK(r.state->vm[1] == doctest::Approx(1.0));
    CHECK(r.state->va[1] == doctest::Approx(0.0));
}

TEST_CASE("loss consistency on a resistive network") {
    auto net = test::make_two_bus(0.1, 1.0, 0.3, 0.01);
    ShuntDevice sh;
    sh.bus = 1;
    sh.gs = 0.01;
    sh.bs0 = 0.05;
    sh.cb_set = {0.0};
    net.shunts = {sh};
    net.rebuild_adjacency();

    std::vector<double> tap{1.0}, cb{0.0}, pg{0.0}, vm{1.02, 1.0};
    auto r = solve_power_flow(net, tap, cb, pg, vm);
    REQUIRE(r.ok());
    const auto& st = *r.state;

    double branch_losses = 0.0;
    for (size_t e = 0; e < net.branches.size(); ++e) branch_losses += st.pf[e] + st.pt[e];
    double gen = 0.0, load = 0.0, shunt = 0.0;
    for (double p : st.pg) gen += p;
    for (const auto& b : net.buses) load += b.pd;
    for (size_t s = 0; s < net.shunts.size(); ++s)
        shunt += net.shunts[s].gs * st.vm[net.shunts[s].bus] * st.vm[net.shunts[s].bus];
    CHECK(std::abs(branch_losses - (gen - load - shunt)) <= 1e-8);
}

TEST_CASE("warm-started power flow converges immediately") {
    auto net = test::make_two_bus(0.1, 2.0, 0.5, 0.01);
    std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.02, 1.0};
    auto cold = solve_power_flow(net, tap, cb, pg, vm);
    REQUIRE(cold.ok());
    REQUIRE(cold.iterations >= 2);

    auto warm = solve_power_flow(net, tap, cb, pg, vm, {}, &*cold.state);
    REQUIRE(warm.ok());
    CHECK(warm.iterations <= 1);
    CHECK(warm.state->vm[1] == doctest::Approx(cold.state->vm[1]).epsilon(1e-10));

    PfOptions flat;
    flat.flat_start = true;  // the initial state must be ignored
    auto forced = solve_power_flow(net, tap, cb, pg, vm, flat, &*cold.state);
    REQUIRE(forced.ok());
    CHECK(forced.iterations == cold.iterations);
}
