#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "support.hpp"
#include "vvo/acpf.hpp"
#include "vvo/metrics.hpp"

using namespace vvo;

namespace {

Network two_gen_net() {
    auto net = test::make_two_bus(0.1, 0.5, 0.1);
    Generator g2 = net.generators[0];
    g2.bus = 1;
    net.generators.push_back(g2);
    net.rebuild_adjacency();
    return net;
}

}  // namespace

TEST_CASE("mae_v") {
    auto net = test::make_two_bus(0.1, 0.5, 0.1);
    auto st = OperatingState::sized_for(net);
    CHECK(mae_v(st) == 0.0);  // all vm = 1
    st.vm = {0.98, 1.02};
    CHECK(mae_v(st) == doctest::Approx(0.02));
}

TEST_CASE("mae_q reports MVAr on the system base") {
    auto net = two_gen_net();
    auto st = OperatingState::sized_for(net);
    CHECK(mae_q(st, net) == 0.0);
    st.qg = {0.1, -0.3};
    CHECK(mae_q(st, net) == doctest::Approx(20.0));
}

TEST_CASE("delta_pg") {
    auto net = two_gen_net();
    net.generators[0].p_ref = 0.2;
    net.generators[1].p_ref = 0.3;
    auto st = OperatingState::sized_for(net);
    st.pg = {0.2, 0.3};
    CHECK(delta_pg(st, net) == 0.0);
    st.pg = {0.74, 0.3};  // one of two gens off by 0.54 p.u.
    CHECK(delta_pg(st, net) == doctest::Approx(27.0));
}

TEST_CASE("pct_delta_cost") {
    auto net = two_gen_net();
    net.generators[0].cost[0] = 0.0;
    net.generators[0].cost[1] = 100.0;
    net.generators[1].cost[0] = 0.0;
    net.generators[1].cost[1] = 100.0;
    net.generators[0].p_ref = 1.0;
    net.generators[1].p_ref = 1.0;
    auto st = OperatingState::sized_for(net);
    st.pg = {1.0, 1.0};
    CHECK(pct_delta_cost(st, net) == 0.0);
    st.pg = {0.5, 0.5};  // cost halved
    CHECK(pct_delta_cost(st, net) == doctest::Approx(-50.0));

    net.generators[0].p_ref = 0.0;
    net.generators[1].p_ref = 0.0;
    net.generators[0].cost[2] = 0.0;
    CHECK_THROWS(pct_delta_cost(st, net));
}

TEST_CASE("metric invariance under generator reordering") {
    auto net = two_gen_net();
    net.generators[0].p_ref = 0.1;
    net.generators[1].p_ref = 0.6;
    auto st = OperatingState::sized_for(net);
    st.qg = {0.25, -0.11};
    st.pg = {0.3, 0.4};

    auto net2 = net;
    std::swap(net2.generators[0], net2.generators[1]);
    net2.rebuild_adjacency();
    auto st2 = st;
    std::swap(st2.qg[0], st2.qg[1]);
    std::swap(st2.pg[0], st2.pg[1]);

    CHECK(mae_q(st, net) == doctest::Approx(mae_q(st2, net2)));
    CHECK(delta_pg(st, net) == doctest::Approx(delta_pg(st2, net2)));
}

TEST_CASE("losses") {
    SUBCASE("lossless network") {
        auto net = test::make_two_bus(0.1, 1.0, 0.0);
        std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.0, 1.0};
        auto r = solve_power_flow(net, tap, cb, pg, vm);
        REQUIRE(r.ok());
        CHECK(std::abs(losses(*r.state, net)) <= 1e-8);
    }
    SUBCASE("resistive branch, two computations agree") {
        auto net = test::make_two_bus(0.1, 1.0, 0.2, 0.01);
        std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.0, 1.0};
        auto r = solve_power_flow(net, tap, cb, pg, vm);
        REQUIRE(r.ok());
        const auto& st = *r.state;
        const double by_branches = losses(st, net);
        double gen = 0.0, load = 0.0;
        for (double p : st.pg) gen += p;
        for (const auto& b : net.buses) load += b.pd;
        const double by_balance = (gen - load) * net.base_mva;
        CHECK(by_branches == doctest::Approx(by_balance).epsilon(1e-10));
        CHECK(by_branches >= 0.0);
    }
}

TEST_CASE("metrics round-trip bit-identically through state JSON") {
    auto net = test::make_two_bus(0.1, 1.0, 0.2, 0.01);
    std::vector<double> tap{1.0}, cb, pg{0.0}, vm{1.013, 1.0};
    auto r = solve_power_flow(net, tap, cb, pg, vm);
    REQUIRE(r.ok());
    auto back = state_from_json(to_json(*r.state));
    CHECK(mae_v(back) == mae_v(*r.state));
    CHECK(mae_q(back, net) == mae_q(*r.state, net));
    CHECK(losses(back, net) == losses(*r.state, net));
}

TEST_CASE("render_table") {
    SUBCASE("empty input gives a header-only table") {
        auto text = render_table({}, TableFormat::Csv);
        CHECK(text.find("case,lambda_p") == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    }

    SUBCASE("failed cell renders NA with the relaxed time kept") {
        TableRow baseline;
        baseline.case_name = "c";
        baseline.lambda_p = "--";
        baseline.tap_range = "+-0";
        baseline.cb_range = "1-1";
        baseline.is_baseline = true;
        baseline.metrics = MetricsReport{0.034, 38.0, 0.0, 0.0, 77.0, 0, 0};

        TableRow fail;
        fail.case_name = "c";
        fail.lambda_p = "1";
        fail.tap_range = "+-16";
        fail.cb_range = "0-3";
        fail.failed_stage = "fixed";
        fail.t_relax = 10.7;

        auto csv = render_table({baseline, fail}, TableFormat::Csv);
        CHECK(csv.find("baseline") != std::string::npos);
        CHECK(csv.find("NA,NA,10.700,NA,NA,NA,NA,no-solution-found:fixed") != std::string::npos);

        auto text = render_table({baseline, fail}, TableFormat::Text);
        CHECK(text.find("NA") != std::string::npos);
        CHECK(text.find("10.7") != std::string::npos);

        auto json = render_table({baseline, fail}, TableFormat::Json);
        CHECK(json.find("no-solution-found") != std::string::npos);
    }
}
