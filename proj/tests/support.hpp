#pragma once

#include <string>

#include "vvo/case_io.hpp"
#include "vvo/network.hpp"

namespace vvo::test {

// slack + PQ load joined by one line, the textbook two-bus system
inline Network make_two_bus(double x, double pd, double qd, double r = 0.0, double bc = 0.0) {
    Network net;
    net.base_mva = 100.0;
    Bus b0;
    b0.id = 0;
    b0.base_kv = 138.0;
    b0.vmin = 0.5;
    b0.vmax = 1.5;
    b0.is_slack = true;
    Bus b1 = b0;
    b1.id = 1;
    b1.is_slack = false;
    b1.pd = pd;
    b1.qd = qd;
    net.buses = {b0, b1};

    Generator g;
    g.bus = 0;
    g.pmin = -50.0;
    g.pmax = 50.0;
    g.qmin = -50.0;
    g.qmax = 50.0;
    g.cost[1] = 1000.0;
    net.generators = {g};

    Branch br;
    br.from_bus = 0;
    br.to_bus = 1;
    const Complex ys = 1.0 / Complex(r, x);
    br.yff = ys + Complex(0.0, bc / 2.0);
    br.ytt = br.yff;
    br.yft = -ys;
    br.ytf = -ys;
    br.angle_min = -6.28318530717958647692;
    br.angle_max = 6.28318530717958647692;
    net.branches = {br};

    net.rebuild_adjacency();
    return net;
}

inline std::string data_path(const std::string& name) {
    return std::string(VVO_DATA_DIR) + "/" + name;
}

inline const char* kTwoBusCaseText = R"(
% minimal two-bus case
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100.0;
mpc.bus = [
	1	 3	 0.0	 0.0	 0.0	 0.0	 1	    1.00000	    0.00000	 138.0	 1	    1.10000	    0.90000;
	2	 1	 60.0	 20.0	 0.0	 0.0	 1	    1.00000	    0.00000	 138.0	 1	    1.10000	    0.90000;
];
mpc.gen = [
	1	 50.0	 0.0	 100.0	 -100.0	 1.0	 100.0	 1	 200.0	 0.0;
];
mpc.gencost = [
	2	 0.0	 0.0	 3	   0.01	  20.0	   0.0;
];
mpc.branch = [
	1	 2	 0.01	 0.05	 0.02	 150.0	 0.0	 0.0	 0.0	 0.0	 1	 -30.0	 30.0;
];
)";

}  // namespace vvo::test
