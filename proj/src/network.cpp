#include "vvo/network.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

#include "json.hpp"

namespace vvo {

using nlohmann::json;

int Network::slack_bus() const {
    for (const auto& b : buses)
        if (b.is_slack) return b.id;
    return -1;
}

void Network::rebuild_adjacency() {
    adjacency.assign(buses.size(), {});
    for (int e = 0; e < (int)branches.size(); ++e) {
        adjacency[branches[e].from_bus].out_branches.push_back(e);
        adjacency[branches[e].to_bus].in_branches.push_back(e);
    }
    for (int g = 0; g < (int)generators.size(); ++g)
        adjacency[generators[g].bus].gens.push_back(g);
    for (int s = 0; s < (int)shunts.size(); ++s)
        adjacency[shunts[s].bus].shunts.push_back(s);
}

OperatingState OperatingState::sized_for(const Network& net) {
    OperatingState st;
    st.vm.assign(net.buses.size(), 1.0);
    st.va.assign(net.buses.size(), 0.0);
    st.pg.assign(net.generators.size(), 0.0);
    st.qg.assign(net.generators.size(), 0.0);
    st.pf.assign(net.branches.size(), 0.0);
    st.qf.assign(net.branches.size(), 0.0);
    st.pt.assign(net.branches.size(), 0.0);
    st.qt.assign(net.branches.size(), 0.0);
    st.tap.resize(net.branches.size());
    for (size_t e = 0; e < net.branches.size(); ++e) st.tap[e] = net.branches[e].tap_ref;
    st.cb.resize(net.shunts.size());
    for (size_t s = 0; s < net.shunts.size(); ++s) st.cb[s] = net.shunts[s].b_ref;
    return st;
}

bool OperatingState::dimensions_match(const Network& net) const {
    const size_t nb = net.buses.size(), ng = net.generators.size();
    const size_t ne = net.branches.size(), ns = net.shunts.size();
    return vm.size() == nb && va.size() == nb && pg.size() == ng && qg.size() == ng &&
           pf.size() == ne && qf.size() == ne && pt.size() == ne && qt.size() == ne &&
           tap.size() == ne && cb.size() == ns;
}

namespace {

bool contains(const std::vector<double>& set, double v) {
    return std::find(set.begin(), set.end(), v) != set.end();
}

bool connected(const Network& net) {
    if (net.buses.empty()) return true;
    std::vector<char> seen(net.buses.size(), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    size_t count = 1;
    while (!q.empty()) {
        int i = q.front();
        q.pop();
        auto visit = [&](int j) {
            if (!seen[j]) {
                seen[j] = 1;
                ++count;
                q.push(j);
            }
        };
        for (int e : net.adjacency[i].out_branches) visit(net.branches[e].to_bus);
        for (int e : net.adjacency[i].in_branches) visit(net.branches[e].from_bus);
    }
    return count == net.buses.size();
}

}  // namespace

std::vector<Violation> validate(const Network& net) {
    std::vector<Violation> out;
    auto add = [&](const std::string& entity, int idx, std::string msg) {
        out.push_back({entity, idx, std::move(msg)});
    };

    int n_slack = 0;
    for (const auto& b : net.buses) {
        if (b.is_slack) ++n_slack;
        if (!(b.vmin > 0.0))
            add("bus", b.id, "vmin must be positive");
        if (!(b.vmin <= b.vmax))
            add("bus", b.id, "vmin must not exceed vmax");
    }
    if (n_slack == 0) add("network", -1, "no slack bus");
    if (n_slack > 1) add("network", -1, "multiple slack buses");

    for (int g = 0; g < (int)net.generators.size(); ++g) {
        const auto& gen = net.generators[g];
        if (gen.bus < 0 || gen.bus >= (int)net.buses.size())
            add("generator", g, "bus index out of range");
        if (gen.pmin > gen.pmax) add("generator", g, "pmin exceeds pmax");
        if (gen.qmin > gen.qmax) add("generator", g, "qmin exceeds qmax");
        if (gen.cost[0] < 0.0) add("generator", g, "negative quadratic cost coefficient");
    }

    for (int e = 0; e < (int)net.branches.size(); ++e) {
        const auto& br = net.branches[e];
        if (br.from_bus < 0 || br.from_bus >= (int)net.buses.size() || br.to_bus < 0 ||
            br.to_bus >= (int)net.buses.size()) {
            add("branch", e, "endpoint bus index out of range");
            continue;
        }
        if (br.tap_set.empty()) add("branch", e, "empty tap_set");
        for (double t : br.tap_set)
            if (!(t > 0.0)) add("branch", e, "non-positive tap_set entry");
        if (!contains(br.tap_set, br.tap_ref))
            add("branch", e, "tap_ref not in tap_set");
        if (!br.is_transformer && !(br.tap_set.size() == 1 && br.tap_set[0] == 1.0))
            add("branch", e, "line tap_set must equal {1}");
        if (!(br.angle_min <= 0.0 && 0.0 <= br.angle_max))
            add("branch", e, "angle bounds must bracket zero");
    }

    for (int s = 0; s < (int)net.shunts.size(); ++s) {
        const auto& sh = net.shunts[s];
        if (sh.bus < 0 || sh.bus >= (int)net.buses.size())
            add("shunt", s, "bus index out of range");
        if (sh.cb_set.empty()) add("shunt", s, "empty cb_set");
        for (double b : sh.cb_set) {
            bool on_grid = false;
            for (int k = 0; k <= sh.module_count; ++k)
                if (std::abs(b - k * sh.module_step) <= 1e-12) on_grid = true;
            if (!on_grid) add("shunt", s, "cb_set entry not a whole number of modules");
        }
        if (!contains(sh.cb_set, sh.b_ref)) add("shunt", s, "b_ref not in cb_set");
    }

    // Adjacency consistency: every branch exactly once per direction.
    if (net.adjacency.size() != net.buses.size()) {
        add("network", -1, "adjacency size does not match bus count");
    } else {
        std::vector<int> out_seen(net.branches.size(), 0), in_seen(net.branches.size(), 0);
        for (int i = 0; i < (int)net.adjacency.size(); ++i) {
            for (int e : net.adjacency[i].out_branches) {
                if (e < 0 || e >= (int)net.branches.size() || net.branches[e].from_bus != i)
                    add("network", -1, "adjacency out-list inconsistent at bus " + std::to_string(i));
                else
                    ++out_seen[e];
            }
            for (int e : net.adjacency[i].in_branches) {
                if (e < 0 || e >= (int)net.branches.size() || net.branches[e].to_bus != i)
                    add("network", -1, "adjacency in-list inconsistent at bus " + std::to_string(i));
                else
                    ++in_seen[e];
            }
        }
        for (int e = 0; e < (int)net.branches.size(); ++e)
            if (out_seen[e] != 1 || in_seen[e] != 1)
                add("network", -1, "branch " + std::to_string(e) + " not listed exactly once per direction");
        if (!connected(net)) add("network", -1, "network is not connected");
    }

    return out;
}

namespace {

json complex_to_json(const Complex& z) { return json::array({z.real(), z.imag()}); }
Complex complex_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string to_json(const Network& net) {
    json j;
    j["base_mva"] = net.base_mva;
    j["buses"] = json::array();
    for (const auto& b : net.buses)
        j["buses"].push_back({{"id", b.id},
                              {"base_kv", b.base_kv},
                              {"vmin", b.vmin},
                              {"vmax", b.vmax},
                              {"pd", b.pd},
                              {"qd", b.qd},
                              {"is_slack", b.is_slack}});
    j["generators"] = json::array();
    for (const auto& g : net.generators)
        j["generators"].push_back({{"bus", g.bus},
                                   {"pmin", g.pmin},
                                   {"pmax", g.pmax},
                                   {"qmin", g.qmin},
                                   {"qmax", g.qmax},
                                   {"cost", {g.cost[0], g.cost[1], g.cost[2]}},
                                   {"p_ref", g.p_ref},
                                   {"q_ref", g.q_ref},
                                   {"in_service", g.in_service}});
    j["branches"] = json::array();
    for (const auto& br : net.branches)
        j["branches"].push_back({{"from_bus", br.from_bus},
                                 {"to_bus", br.to_bus},
                                 {"yff", complex_to_json(br.yff)},
                                 {"yft", complex_to_json(br.yft)},
                                 {"ytf", complex_to_json(br.ytf)},
                                 {"ytt", complex_to_json(br.ytt)},
                                 {"tap_ref", br.tap_ref},
                                 {"tap_set", br.tap_set},
                                 {"s_max", br.s_max},
                                 {"angle_min", br.angle_min},
                                 {"angle_max", br.angle_max},
                                 {"is_transformer", br.is_transformer}});
    j["shunts"] = json::array();
    for (const auto& s : net.shunts)
        j["shunts"].push_back({{"bus", s.bus},
                               {"gs", s.gs},
                               {"bs0", s.bs0},
                               {"module_step", s.module_step},
                               {"module_count", s.module_count},
                               {"b_ref", s.b_ref},
                               {"cb_set", s.cb_set}});
    return j.dump(1);
}

Network network_from_json(const std::string& text) {
    json j = json::parse(text);
    Network net;
    net.base_mva = j.at("base_mva").get<double>();
    for (const auto& jb : j.at("buses")) {
        Bus b;
        b.id = jb.at("id").get<int>();
        b.base_kv = jb.at("base_kv").get<double>();
        b.vmin = jb.at("vmin").get<double>();
        b.vmax = jb.at("vmax").get<double>();
        b.pd = jb.at("pd").get<double>();
        b.qd = jb.at("qd").get<double>();
        b.is_slack = jb.at("is_slack").get<bool>();
        net.buses.push_back(b);
    }
    for (const auto& jg : j.at("generators")) {
        Generator g;
        g.bus = jg.at("bus").get<int>();
        g.pmin = jg.at("pmin").get<double>();
        g.pmax = jg.at("pmax").get<double>();
        g.qmin = jg.at("qmin").get<double>();
        g.qmax = jg.at("qmax").get<double>();
        g.cost[0] = jg.at("cost").at(0).get<double>();
        g.cost[1] = jg.at("cost").at(1).get<double>();
        g.cost[2] = jg.at("cost").at(2).get<double>();
        g.p_ref = jg.at("p_ref").get<double>();
        g.q_ref = jg.at("q_ref").get<double>();
        g.in_service = jg.at("in_service").get<bool>();
        net.generators.push_back(g);
    }
    for (const auto& je : j.at("branches")) {
        Branch br;
        br.from_bus = je.at("from_bus").get<int>();
        br.to_bus = je.at("to_bus").get<int>();
        br.yff = complex_from_json(je.at("yff"));
        br.yft = complex_from_json(je.at("yft"));
        br.ytf = complex_from_json(je.at("ytf"));
        br.ytt = complex_from_json(je.at("ytt"));
        br.tap_ref = je.at("tap_ref").get<double>();
        br.tap_set = je.at("tap_set").get<std::vector<double>>();
        br.s_max = je.at("s_max").get<double>();
        br.angle_min = je.at("angle_min").get<double>();
        br.angle_max = je.at("angle_max").get<double>();
        br.is_transformer = je.at("is_transformer").get<bool>();
        net.branches.push_back(br);
    }
    for (const auto& js : j.at("shunts")) {
        ShuntDevice s;
        s.bus = js.at("bus").get<int>();
        s.gs = js.at("gs").get<double>();
        s.bs0 = js.at("bs0").get<double>();
        s.module_step = js.at("module_step").get<double>();
        s.module_count = js.at("module_count").get<int>();
        s.b_ref = js.at("b_ref").get<double>();
        s.cb_set = js.at("cb_set").get<std::vector<double>>();
        net.shunts.push_back(s);
    }
    net.rebuild_adjacency();
    return net;
}

std::string to_json(const OperatingState& st) {
    json j;
    j["vm"] = st.vm;
    j["va"] = st.va;
    j["pg"] = st.pg;
    j["qg"] = st.qg;
    j["pf"] = st.pf;
    j["qf"] = st.qf;
    j["pt"] = st.pt;
    j["qt"] = st.qt;
    j["tap"] = st.tap;
    j["cb"] = st.cb;
    return j.dump(1);
}

OperatingState state_from_json(const std::string& text) {
    json j = json::parse(text);
    OperatingState st;
    st.vm = j.at("vm").get<std::vector<double>>();
    st.va = j.at("va").get<std::vector<double>>();
    st.pg = j.at("pg").get<std::vector<double>>();
    st.qg = j.at("qg").get<std::vector<double>>();
    st.pf = j.at("pf").get<std::vector<double>>();
    st.qf = j.at("qf").get<std::vector<double>>();
    st.pt = j.at("pt").get<std::vector<double>>();
    st.qt = j.at("qt").get<std::vector<double>>();
    st.tap = j.at("tap").get<std::vector<double>>();
    st.cb = j.at("cb").get<std::vector<double>>();
    return st;
}

bool networks_equal(const Network& a, const Network& b) {
    if (a.base_mva != b.base_mva || a.buses.size() != b.buses.size() ||
        a.generators.size() != b.generators.size() || a.branches.size() != b.branches.size() ||
        a.shunts.size() != b.shunts.size())
        return false;
    for (size_t i = 0; i < a.buses.size(); ++i) {
        const auto &x = a.buses[i], &y = b.buses[i];
        if (x.id != y.id || x.base_kv != y.base_kv || x.vmin != y.vmin || x.vmax != y.vmax ||
            x.pd != y.pd || x.qd != y.qd || x.is_slack != y.is_slack)
            return false;
    }
    for (size_t i = 0; i < a.generators.size(); ++i) {
        const auto &x = a.generators[i], &y = b.generators[i];
        if (x.bus != y.bus || x.pmin != y.pmin || x.pmax != y.pmax || x.qmin != y.qmin ||
            x.qmax != y.qmax || x.cost[0] != y.cost[0] || x.cost[1] != y.cost[1] ||
            x.cost[2] != y.cost[2] || x.p_ref != y.p_ref || x.q_ref != y.q_ref ||
            x.in_service != y.in_service)
            return false;
    }
    for (size_t i = 0; i < a.branches.size(); ++i) {
        const auto &x = a.branches[i], &y = b.branches[i];
        if (x.from_bus != y.from_bus || x.to_bus != y.to_bus || x.yff != y.yff || x.yft != y.yft ||
            x.ytf != y.ytf || x.ytt != y.ytt || x.tap_ref != y.tap_ref || x.tap_set != y.tap_set ||
            x.s_max != y.s_max || x.angle_min != y.angle_min || x.angle_max != y.angle_max ||
            x.is_transformer != y.is_transformer)
            return false;
    }
    for (size_t i = 0; i < a.shunts.size(); ++i) {
        const auto &x = a.shunts[i], &y = b.shunts[i];
        if (x.bus != y.bus || x.gs != y.gs || x.bs0 != y.bs0 || x.module_step != y.module_step ||
            x.module_count != y.module_count || x.b_ref != y.b_ref || x.cb_set != y.cb_set)
            return false;
    }
    return true;
}

}  // namespace vvo
