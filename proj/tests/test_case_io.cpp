#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vvo/case_io.hpp"

using namespace vvo;

TEST_CASE("minimal two-bus case parses verbatim") {
    auto rc = parse_matpower_text(test::kTwoBusCaseText);
    CHECK(rc.name == "case2");
    CHECK(rc.base_mva == 100.0);
    REQUIRE(rc.bus.size() == 2);
    REQUIRE(rc.gen.size() == 1);
    REQUIRE(rc.branch.size() == 1);
    REQUIRE(rc.gencost.size() == 1);
    CHECK(rc.bus[1][2] == 60.0);
    CHECK(rc.branch[0][3] == 0.05);
    CHECK(rc.gencost[0][5] == 20.0);
}

TEST_CASE("parser error paths") {
    SUBCASE("missing gencost table") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("mpc.gencost");
        text = text.substr(0, pos) + ");\n";  // truncate, keep syntax simple
        text = test::kTwoBusCaseText;
        pos = text.find("mpc.gencost");
        auto end = text.find("];", pos);
        text.erase(pos, end + 2 - pos);
        CHECK_THROWS_WITH_AS(parse_matpower_text(text),
                             doctest::Contains("mpc.gencost"), CaseError);
    }
    SUBCASE("non-numeric cell") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("60.0");
        text.replace(pos, 4, "banana");
        CHECK_THROWS_AS(parse_matpower_text(text), CaseError);
    }
    SUBCASE("piecewise-linear cost model is rejected") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("2\t 0.0\t 0.0\t 3");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 1, "1");
        CHECK_THROWS_WITH_AS(parse_matpower_text(text),
                             doctest::Contains("piecewise"), CaseError);
    }
    SUBCASE("unknown fields are ignored with a warning") {
        std::string text = test::kTwoBusCaseText;
        text += "\nmpc.dcline = [\n1 2 3;\n];\n";
        auto rc = parse_matpower_text(text);
        REQUIRE(rc.warnings.size() == 1);
        CHECK(rc.warnings[0].find("dcline") != std::string::npos);
    }
    SUBCASE("branch referencing an unknown bus") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("1\t 2\t 0.01");
        text.replace(pos, 4, "1\t 7\t");
        CHECK_THROWS_AS(parse_matpower_text(text), CaseError);
    }
}

TEST_CASE("snap_tap") {
    DeviceConfig cfg;

    SUBCASE("examples") {
        CHECK(snap_tap(1.003, cfg).position == 0);
        CHECK(snap_tap(1.003, cfg).ratio == 1.0);
        CHECK(snap_tap(1.1, cfg).position == 16);
        CHECK(snap_tap(1.1, cfg).ratio == doctest::Approx(1.1).epsilon(1e-12));
        CHECK(snap_tap(1.25, cfg).position == 16);  // clamps to the grid end
        CHECK(snap_tap(0.9, cfg).position == -16);
        CHECK(snap_tap(0.98437, cfg).position == -3);
        CHECK(snap_tap(0.98437, cfg).ratio == doctest::Approx(0.98125).epsilon(1e-12));
    }

    SUBCASE("nearest grid point, verified by enumeration") {
        for (double ratio : {0.91, 0.955, 0.98437, 1.0, 1.0031, 1.033, 1.0969}) {
            auto snap = snap_tap(ratio, cfg);
            for (int k = -16; k <= 16; ++k) {
                const double grid = 1.0 + 0.00625 * k;
                CHECK(std::abs(snap.ratio - ratio) <= std::abs(grid - ratio) + 1e-15);
            }
        }
    }

    SUBCASE("ties break toward the neutral position") {
        // 1.003125 sits exactly between positions 0 and 1
        CHECK(snap_tap(1.003125, cfg).position == 0);
        CHECK(snap_tap(0.996875, cfg).position == 0);
    }

    SUBCASE("idempotence") {
        for (double ratio : {0.9, 0.93, 0.97, 1.0, 1.02, 1.0625, 1.1, 1.2}) {
            auto once = snap_tap(ratio, cfg);
            auto twice = snap_tap(once.ratio, cfg);
            CHECK(twice.position == once.position);
            CHECK(twice.ratio == once.ratio);
        }
    }
}

TEST_CASE("build_network on the two-bus case") {
    auto rc = parse_matpower_text(test::kTwoBusCaseText);
    auto net = build_network(rc);

    CHECK(net.buses.size() == 2);
    CHECK(net.generators.size() == 1);
    CHECK(net.branches.size() == 1);
    CHECK(net.shunts.empty());
    CHECK(net.slack_bus() == 0);
    CHECK(net.buses[1].pd == doctest::Approx(0.6));  // per unit on 100 MVA
    CHECK(net.buses[1].qd == doctest::Approx(0.2));
    CHECK(!net.branches[0].is_transformer);
    CHECK(net.branches[0].tap_set == std::vector<double>{1.0});
    CHECK(net.branches[0].s_max == doctest::Approx(1.5));
    CHECK(net.branches[0].angle_max == doctest::Approx(30.0 * M_PI / 180.0));

    // gencost rescaled to per-unit argument: c2 MW^-2 -> x base^2, c1 -> x base
    CHECK(net.generators[0].cost[0] == doctest::Approx(0.01 * 100.0 * 100.0));
    CHECK(net.generators[0].cost[1] == doctest::Approx(20.0 * 100.0));
    CHECK(net.generators[0].p_ref == doctest::Approx(0.5));

    CHECK(validate(net).empty());
}

TEST_CASE("build_network device augmentation") {
    std::string text = test::kTwoBusCaseText;
    // give bus 2 a 12 MVAr shunt and make the branch an off-nominal transformer
    auto pos = text.find("2\t 1\t 60.0\t 20.0\t 0.0\t 0.0");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("2\t 1\t 60.0\t 20.0\t 0.0\t 0.0").size(),
                 "2\t 1\t 60.0\t 20.0\t 1.0\t 12.0");
    pos = text.find("0.0\t 0.0\t 1\t -30.0");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("0.0\t 0.0\t 1\t -30.0").size(),
                 "0.98437\t 0.0\t 1\t -30.0");

    auto net = build_network(parse_matpower_text(text));
    REQUIRE(net.shunts.size() == 1);
    const auto& sh = net.shunts[0];
    CHECK(sh.bus == 1);
    CHECK(sh.gs == doctest::Approx(0.01));
    CHECK(sh.b_ref == doctest::Approx(0.1));          // one module active at reference
    CHECK(sh.bs0 == doctest::Approx(0.12 - 0.1));     // case bs minus the reference module
    REQUIRE(sh.cb_set.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(sh.cb_set[k] == k * 0.1);  // canonical module grid

    REQUIRE(net.branches.size() == 1);
    CHECK(net.branches[0].is_transformer);
    CHECK(net.branches[0].tap_ref == doctest::Approx(0.98125));  // snapped to the grid
    CHECK(net.branches[0].tap_set.size() == 33);
    CHECK(validate(net).empty());
}

TEST_CASE("build_network error paths") {
    SUBCASE("all branches out of service leaves the network disconnected") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("0.0\t 0.0\t 1\t -30.0");
        text.replace(pos, std::string("0.0\t 0.0\t 1\t -30.0").size(), "0.0\t 0.0\t 0\t -30.0");
        CHECK_THROWS_WITH_AS(build_network(parse_matpower_text(text)),
                             doctest::Contains("disconnected"), CaseError);
    }
    SUBCASE("no slack bus") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("1\t 3\t 0.0");
        text.replace(pos, 4, "1\t 1");
        CHECK_THROWS_WITH_AS(build_network(parse_matpower_text(text)),
                             doctest::Contains("slack"), CaseError);
    }
    SUBCASE("two slack buses") {
        std::string text = test::kTwoBusCaseText;
        auto pos = text.find("2\t 1\t 60.0");
        text.replace(pos, 4, "2\t 3");
        CHECK_THROWS_WITH_AS(build_network(parse_matpower_text(text)),
                             doctest::Contains("slack"), CaseError);
    }
}

TEST_CASE("build_network determinism") {
    auto net1 = build_network(parse_matpower_text(test::kTwoBusCaseText));
    auto net2 = build_network(parse_matpower_text(test::kTwoBusCaseText));
    CHECK(to_json(net1) == to_json(net2));
    CHECK(networks_equal(net1, net2));
}

TEST_CASE("bundled cases parse and build") {
    SUBCASE("four-bus device case") {
        auto rc = parse_matpower_file(test::data_path("case4_vvo.m"));
        auto net = build_network(rc);
        CHECK(net.buses.size() == 4);
        CHECK(net.generators.size() == 2);
        CHECK(net.branches.size() == 4);
        int n_tr = 0;
        for (const auto& br : net.branches) n_tr += br.is_transformer;
        CHECK(n_tr == 1);
        CHECK(net.shunts.size() == 1);
        CHECK(validate(net).empty());
    }

    SUBCASE("bundled IEEE 118 reconstruction") {
        auto rc = parse_matpower_file(test::data_path("ieee118.m"));
        auto net = build_network(rc);
        CHECK(net.buses.size() == 118);
        CHECK(net.generators.size() == 54);
        CHECK(net.branches.size() == 186);
        int n_tr = 0;
        for (const auto& br : net.branches) n_tr += br.is_transformer;
        CHECK(n_tr == 11);
        CHECK(net.shunts.size() == 14);
        int n_cb = 0;
        for (const auto& sh : net.shunts) n_cb += sh.cb_set.size() > 1;
        CHECK(n_cb == 14);
        CHECK(validate(net).empty());

        double load = 0.0;
        for (const auto& b : net.buses) load += b.pd;
        CHECK(load * net.base_mva == doctest::Approx(4242.0));
    }
}
