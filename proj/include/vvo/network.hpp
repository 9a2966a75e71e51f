#pragma once

#include <complex>
#include <string>
#include <vector>

namespace vvo {

using Complex = std::complex<double>;

// All electrical quantities are per-unit on the system MVA base unless a
// field name says otherwise. Physical units (MW/MVAr) appear only in the
// reporting layer.

struct Bus {
    int id = 0;            // dense index, 0-based
    double base_kv = 0.0;
    double vmin = 0.0;     // voltage magnitude bounds, p.u.
    double vmax = 0.0;
    double pd = 0.0;       // active demand, p.u.
    double qd = 0.0;       // reactive demand, p.u.
    bool is_slack = false;
};

struct Generator {
    int bus = 0;
    double pmin = 0.0, pmax = 0.0;
    double qmin = 0.0, qmax = 0.0;
    // cost polynomial c2*p^2 + c1*p + c0, $/h with p in p.u.
    double cost[3] = {0.0, 0.0, 0.0};  // {c2, c1, c0}
    double p_ref = 0.0, q_ref = 0.0;
    bool in_service = true;

    double cost_at(double pg) const { return (cost[0] * pg + cost[1]) * pg + cost[2]; }
};

struct Branch {
    int from_bus = 0, to_bus = 0;
    // Series/charging admittance terms at tap = 1; any fixed phase shift is
    // folded into yft/ytf at build time.
    Complex yff, yft, ytf, ytt;
    double tap_ref = 1.0;
    std::vector<double> tap_set{1.0};  // ordered admissible ratios
    double s_max = 0.0;                // apparent-power limit, 0 = unlimited
    double angle_min = 0.0, angle_max = 0.0;  // radians
    bool is_transformer = false;
};

struct ShuntDevice {
    int bus = 0;
    double gs = 0.0;           // fixed conductance
    double bs0 = 0.0;          // base susceptance excluding CB modules
    double module_step = 0.0;  // susceptance per CB module
    int module_count = 0;
    double b_ref = 0.0;        // reference CB susceptance
    std::vector<double> cb_set{0.0};  // ordered admissible CB susceptances
};

struct BusAdjacency {
    std::vector<int> out_branches;  // branches whose from_bus is this bus
    std::vector<int> in_branches;   // branches whose to_bus is this bus
    std::vector<int> gens;
    std::vector<int> shunts;
};

struct Network {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Generator> generators;
    std::vector<Branch> branches;
    std::vector<ShuntDevice> shunts;
    std::vector<BusAdjacency> adjacency;

    int slack_bus() const;
    void rebuild_adjacency();
};

// Full AC variable assignment. Flows are derived quantities; any consumer
// that needs trusted flows recomputes them from (vm, va, tap).
struct OperatingState {
    std::vector<double> vm, va;      // per bus
    std::vector<double> pg, qg;      // per generator
    std::vector<double> pf, qf, pt, qt;  // per branch
    std::vector<double> tap;         // per branch (1.0 for lines)
    std::vector<double> cb;          // per shunt device

    static OperatingState sized_for(const Network& net);
    bool dimensions_match(const Network& net) const;
};

struct Violation {
    std::string entity;  // e.g. "bus", "branch", "network"
    int index = -1;      // -1 for network-level violations
    std::string message;
};

std::vector<Violation> validate(const Network& net);

// JSON snapshot used for golden tests and debugging. Round-trips exactly.
std::string to_json(const Network& net);
Network network_from_json(const std::string& text);
std::string to_json(const OperatingState& st);
OperatingState state_from_json(const std::string& text);

bool networks_equal(const Network& a, const Network& b);

}  // namespace vvo
