#include "vvo/vvo_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "vvo/acpf.hpp"

namespace vvo {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

int find_exact(const std::vector<double>& set, double v) {
    for (int i = 0; i < (int)set.size(); ++i)
        if (set[i] == v) return i;
    return -1;
}

int find_nearest(const std::vector<double>& set, double v) {
    int best = 0;
    for (int i = 1; i < (int)set.size(); ++i)
        if (std::abs(set[i] - v) < std::abs(set[best] - v)) best = i;
    return best;
}

}  // namespace

RestrictedSets scenario_sets(const Network& net, const ScenarioConfig& scenario) {
    RestrictedSets sets;
    sets.tap.resize(net.branches.size());
    sets.cb.resize(net.shunts.size());
    for (size_t e = 0; e < net.branches.size(); ++e) {
        const auto& br = net.branches[e];
        if (!br.is_transformer) {
            sets.tap[e] = {1.0};
            continue;
        }
        int ref = find_exact(br.tap_set, br.tap_ref);
        if (ref < 0) ref = find_nearest(br.tap_set, br.tap_ref);
        const int lo = std::max(0, ref - scenario.tap_dev_steps);
        const int hi = std::min((int)br.tap_set.size() - 1, ref + scenario.tap_dev_steps);
        for (int k = lo; k <= hi; ++k) {
            const double t = br.tap_set[k];
            if (t >= 0.9 - 1e-9 && t <= 1.1 + 1e-9) sets.tap[e].push_back(t);
        }
        if (sets.tap[e].empty()) sets.tap[e] = {br.tap_ref};
    }
    for (size_t s = 0; s < net.shunts.size(); ++s) {
        const auto& sh = net.shunts[s];
        if (sh.cb_set.size() <= 1) {
            sets.cb[s] = {0.0};
            continue;
        }
        const int kmax = std::min(scenario.cb_max_modules, sh.module_count);
        for (int k = 0; k <= kmax; ++k) sets.cb[s].push_back(k * sh.module_step);
    }
    return sets;
}

double round_to_set(double value, const std::vector<double>& set, double reference) {
    if (set.size() == 1) return set[0];
    // exact members stay put
    for (double a : set)
        if (a == value) return a;
    auto hi_it = std::lower_bound(set.begin(), set.end(), value);
    if (hi_it == set.begin()) return set.front();
    if (hi_it == set.end()) return set.back();
    const double hi = *hi_it, lo = *(hi_it - 1);
    const double dl = value - lo, dh = hi - value;
    const double tie_eps = 4e-15 * std::max({1.0, std::abs(lo), std::abs(hi)});
    if (std::abs(dl - dh) <= tie_eps) {
        if (lo == reference) return lo;
        if (hi == reference) return hi;
        return lo;  // reference equidistant or elsewhere: smaller value
    }
    return dl < dh ? lo : hi;
}

void round_devices(const std::vector<double>& frac_tap, const std::vector<double>& frac_cb,
                   const RestrictedSets& sets, const Network& net, std::vector<double>& tap_out,
                   std::vector<double>& cb_out) {
    tap_out.resize(net.branches.size());
    cb_out.resize(net.shunts.size());
    for (size_t e = 0; e < net.branches.size(); ++e)
        tap_out[e] = round_to_set(frac_tap[e], sets.tap[e], net.branches[e].tap_ref);
    for (size_t s = 0; s < net.shunts.size(); ++s)
        cb_out[s] = round_to_set(frac_cb[s], sets.cb[s], net.shunts[s].b_ref);
}

// ---------------------------------------------------------------------------
// problem assembly

namespace {

struct Ctx {
    const Network* net = nullptr;
    ObjectiveConfig obj;
    VvoLayout lay;
    double lambda_p_eff = 0.0;  // 0 when dispatch is pinned
    std::vector<double> vref, qref;

    mutable std::vector<double> tap_now, cb_now;

    void devices_from_x(std::span<const double> x) const {
        const auto& n = *net;
        tap_now.resize(n.branches.size());
        cb_now.resize(n.shunts.size());
        for (size_t e = 0; e < n.branches.size(); ++e)
            tap_now[e] = lay.tap_var[e] >= 0 ? x[lay.tap_var[e]] : lay.tap_const[e];
        for (size_t s = 0; s < n.shunts.size(); ++s)
            cb_now[s] = lay.cb_var[s] >= 0 ? x[lay.cb_var[s]] : lay.cb_const[s];
    }

    double pg_of(int g, std::span<const double> x) const {
        return lay.pg_var[g] >= 0 ? x[lay.pg_var[g]] : net->generators[g].p_ref;
    }

    // one fixed walk order shared by the pattern and the value fill
    template <class Sink>
    void walk_eq_jac(const double* x, Sink&& sink) const {
        const auto& n = *net;
        const int slack = n.slack_bus();
        sink(lay.row_slack, lay.va_off + slack, 1.0);
        for (size_t e = 0; e < n.branches.size(); ++e) {
            const auto& br = n.branches[e];
            const int i = br.from_bus, j = br.to_bus;
            const int cols[4] = {lay.va_off + i, lay.va_off + j, lay.vm_off + i, lay.vm_off + j};
            BranchFlowDerivs d{};
            if (x) d = branch_flow_derivs(br, tap_now[e], x[cols[2]], x[cols[0]], x[cols[3]], x[cols[1]]);
            const int tcol = lay.tap_var[e];
            for (int k = 0; k < 4; ++k) sink(lay.row_p_off + i, cols[k], -d.dpf[k]);
            if (tcol >= 0) sink(lay.row_p_off + i, tcol, -d.dpf[4]);
            for (int k = 0; k < 4; ++k) sink(lay.row_p_off + j, cols[k], -d.dpt[k]);
            if (tcol >= 0) sink(lay.row_p_off + j, tcol, -d.dpt[4]);
            for (int k = 0; k < 4; ++k) sink(lay.row_q_off + i, cols[k], -d.dqf[k]);
            if (tcol >= 0) sink(lay.row_q_off + i, tcol, -d.dqf[4]);
            for (int k = 0; k < 4; ++k) sink(lay.row_q_off + j, cols[k], -d.dqt[k]);
            if (tcol >= 0) sink(lay.row_q_off + j, tcol, -d.dqt[4]);
        }
        for (size_t g = 0; g < n.generators.size(); ++g) {
            const auto& gen = n.generators[g];
            if (!gen.in_service) continue;
            if (lay.pg_var[g] >= 0) sink(lay.row_p_off + gen.bus, lay.pg_var[g], 1.0);
            sink(lay.row_q_off + gen.bus, lay.qg_var[g], 1.0);
        }
        for (size_t s = 0; s < n.shunts.size(); ++s) {
            const auto& sh = n.shunts[s];
            const double vm = x ? x[lay.vm_off + sh.bus] : 0.0;
            if (sh.gs != 0.0) sink(lay.row_p_off + sh.bus, lay.vm_off + sh.bus, -2.0 * sh.gs * vm);
            const double b = sh.bs0 + (x ? cb_now[s] : 0.0);
            sink(lay.row_q_off + sh.bus, lay.vm_off + sh.bus, 2.0 * b * vm);
            if (lay.cb_var[s] >= 0) sink(lay.row_q_off + sh.bus, lay.cb_var[s], vm * vm);
        }
    }

    template <class Sink>
    void walk_ineq_jac(const double* x, Sink&& sink) const {
        const auto& n = *net;
        for (size_t e = 0; e < n.branches.size(); ++e) {
            if (lay.angle_row[e] < 0) continue;
            const auto& br = n.branches[e];
            sink(lay.angle_row[e], lay.va_off + br.from_bus, 1.0);
            sink(lay.angle_row[e], lay.va_off + br.to_bus, -1.0);
        }
        for (size_t e = 0; e < n.branches.size(); ++e) {
            if (lay.thermal_row[e] < 0) continue;
            const auto& br = n.branches[e];
            const int i = br.from_bus, j = br.to_bus;
            const int cols[4] = {lay.va_off + i, lay.va_off + j, lay.vm_off + i, lay.vm_off + j};
            BranchFlowDerivs d{};
            if (x) d = branch_flow_derivs(br, tap_now[e], x[cols[2]], x[cols[0]], x[cols[3]], x[cols[1]]);
            const int tcol = lay.tap_var[e];
            const int rf = lay.thermal_row[e], rt = rf + 1;
            for (int k = 0; k < 4; ++k)
                sink(rf, cols[k], 2.0 * d.flow.pf * d.dpf[k] + 2.0 * d.flow.qf * d.dqf[k]);
            if (tcol >= 0) sink(rf, tcol, 2.0 * d.flow.pf * d.dpf[4] + 2.0 * d.flow.qf * d.dqf[4]);
            for (int k = 0; k < 4; ++k)
                sink(rt, cols[k], 2.0 * d.flow.pt * d.dpt[k] + 2.0 * d.flow.qt * d.dqt[k]);
            if (tcol >= 0) sink(rt, tcol, 2.0 * d.flow.pt * d.dpt[4] + 2.0 * d.flow.qt * d.dqt[4]);
        }
    }

    // Lagrangian Hessian walk over obj_factor*f + w_eq.c_eq + w_ineq.c_ineq.
    // Same fixed order for the pattern pass (x null) and the value pass.
    template <class Sink>
    void walk_lag_hess(const double* x, double obj_factor, const double* w_eq,
                       const double* w_ineq, Sink&& sink) const {
        const auto& n = *net;
        for (size_t e = 0; e < n.branches.size(); ++e) {
            const auto& br = n.branches[e];
            const int i = br.from_bus, j = br.to_bus;
            const int tcol = lay.tap_var[e];
            const int nloc = tcol >= 0 ? 5 : 4;
            const int cols[5] = {lay.va_off + i, lay.va_off + j, lay.vm_off + i, lay.vm_off + j,
                                 tcol};
            double H[5][5] = {};
            if (x) {
                const double wpi = -w_eq[lay.row_p_off + i], wpj = -w_eq[lay.row_p_off + j];
                const double wqi = -w_eq[lay.row_q_off + i], wqj = -w_eq[lay.row_q_off + j];
                const double wtf = lay.thermal_row[e] >= 0 ? w_ineq[lay.thermal_row[e]] : 0.0;
                const double wtt = lay.thermal_row[e] >= 0 ? w_ineq[lay.thermal_row[e] + 1] : 0.0;
                const double vm_i = x[cols[2]], va_i = x[cols[0]];
                const double vm_j = x[cols[3]], va_j = x[cols[1]];
                const double tap = tap_now[e];
                const auto h2 = branch_flow_hessians(br, tap, vm_i, va_i, vm_j, va_j);
                const auto d = branch_flow_derivs(br, tap, vm_i, va_i, vm_j, va_j);

                auto add = [&](int a, int b, double v) {
                    H[a][b] += v;
                    if (a != b) H[b][a] += v;
                };
                auto add_quantity = [&](const FlowSecondDerivs& f, double wq) {
                    if (wq == 0.0) return;
                    add(0, 0, wq * f.th_th);
                    add(1, 1, wq * f.th_th);
                    add(0, 1, -wq * f.th_th);
                    add(0, 2, wq * f.th_vi);
                    add(1, 2, -wq * f.th_vi);
                    add(0, 3, wq * f.th_vj);
                    add(1, 3, -wq * f.th_vj);
                    add(2, 2, wq * f.vi_vi);
                    add(2, 3, wq * f.vi_vj);
                    add(3, 3, wq * f.vj_vj);
                    if (nloc == 5) {
                        add(4, 0, wq * f.ta_th);
                        add(4, 1, -wq * f.ta_th);
                        add(4, 2, wq * f.ta_vi);
                        add(4, 3, wq * f.ta_vj);
                        add(4, 4, wq * f.ta_ta);
                    }
                };
                add_quantity(h2.pf, wpi + 2.0 * wtf * d.flow.pf);
                add_quantity(h2.qf, wqi + 2.0 * wtf * d.flow.qf);
                add_quantity(h2.pt, wpj + 2.0 * wtt * d.flow.pt);
                add_quantity(h2.qt, wqj + 2.0 * wtt * d.flow.qt);
                if (wtf != 0.0)
                    for (int a = 0; a < nloc; ++a)
                        for (int b = 0; b <= a; ++b)
                            add(a, b, 2.0 * wtf * (d.dpf[a] * d.dpf[b] + d.dqf[a] * d.dqf[b]));
                if (wtt != 0.0)
                    for (int a = 0; a < nloc; ++a)
                        for (int b = 0; b <= a; ++b)
                            add(a, b, 2.0 * wtt * (d.dpt[a] * d.dpt[b] + d.dqt[a] * d.dqt[b]));
            }
            for (int a = 0; a < nloc; ++a)
                for (int b = 0; b <= a; ++b) {
                    const int ga = std::max(cols[a], cols[b]), gb = std::min(cols[a], cols[b]);
                    sink(ga, gb, H[a][b]);
                }
        }
        for (size_t s = 0; s < n.shunts.size(); ++s) {
            const auto& sh = n.shunts[s];
            const int vcol = lay.vm_off + sh.bus;
            const int ccol = lay.cb_var[s];
            double dvv = 0.0, dvc = 0.0;
            if (x) {
                const double wp = w_eq[lay.row_p_off + sh.bus];
                const double wq = w_eq[lay.row_q_off + sh.bus];
                dvv = 2.0 * (sh.bs0 + cb_now[s]) * wq - 2.0 * sh.gs * wp;
                dvc = 2.0 * x[vcol] * wq;
            }
            sink(vcol, vcol, dvv);
            if (ccol >= 0) sink(std::max(vcol, ccol), std::min(vcol, ccol), dvc);
        }
        // separable objective curvature
        for (int i = 0; i < lay.n_bus; ++i)
            sink(lay.vm_off + i, lay.vm_off + i, x ? obj_factor * 2.0 * obj.lambda_v : 0.0);
        for (size_t g = 0; g < n.generators.size(); ++g) {
            const auto& gen = n.generators[g];
            if (!gen.in_service) continue;
            sink(lay.qg_var[g], lay.qg_var[g], x ? obj_factor * 2.0 * obj.lambda_q : 0.0);
            if (lay.pg_var[g] >= 0)
                sink(lay.pg_var[g], lay.pg_var[g],
                     x ? obj_factor * (2.0 * lambda_p_eff + 2.0 * obj.lambda_c * gen.cost[0]) : 0.0);
        }
    }

    void eval_eq(std::span<const double> x, std::span<double> c) const {
        const auto& n = *net;
        devices_from_x(x);
        const int slack = n.slack_bus();
        c[lay.row_slack] = x[lay.va_off + slack];
        for (int i = 0; i < lay.n_bus; ++i) {
            c[lay.row_p_off + i] = -n.buses[i].pd;
            c[lay.row_q_off + i] = -n.buses[i].qd;
        }
        for (size_t g = 0; g < n.generators.size(); ++g) {
            const auto& gen = n.generators[g];
            if (!gen.in_service) continue;
            c[lay.row_p_off + gen.bus] += pg_of((int)g, x);
            c[lay.row_q_off + gen.bus] += x[lay.qg_var[g]];
        }
        for (size_t s = 0; s < n.shunts.size(); ++s) {
            const auto& sh = n.shunts[s];
            const double vm = x[lay.vm_off + sh.bus];
            c[lay.row_p_off + sh.bus] -= sh.gs * vm * vm;
            c[lay.row_q_off + sh.bus] += (sh.bs0 + cb_now[s]) * vm * vm;
        }
        for (size_t e = 0; e < n.branches.size(); ++e) {
            const auto& br = n.branches[e];
            const int i = br.from_bus, j = br.to_bus;
            const auto f = branch_flows(br, tap_now[e], std::polar(x[lay.vm_off + i], x[lay.va_off + i]),
                                        std::polar(x[lay.vm_off + j], x[lay.va_off + j]));
            c[lay.row_p_off + i] -= f.pf;
            c[lay.row_q_off + i] -= f.qf;
            c[lay.row_p_off + j] -= f.pt;
            c[lay.row_q_off + j] -= f.qt;
        }
    }

    void eval_ineq(std::span<const double> x, std::span<double> c) const {
        const auto& n = *net;
        devices_from_x(x);
        for (size_t e = 0; e < n.branches.size(); ++e) {
            const auto& br = n.branches[e];
            if (lay.angle_row[e] >= 0)
                c[lay.angle_row[e]] = x[lay.va_off + br.from_bus] - x[lay.va_off + br.to_bus];
            if (lay.thermal_row[e] >= 0) {
                const auto f = branch_flows(br, tap_now[e],
                                            std::polar(x[lay.vm_off + br.from_bus], x[lay.va_off + br.from_bus]),
                                            std::polar(x[lay.vm_off + br.to_bus], x[lay.va_off + br.to_bus]));
                c[lay.thermal_row[e]] = f.pf * f.pf + f.qf * f.qf;
                c[lay.thermal_row[e] + 1] = f.pt * f.pt + f.qt * f.qt;
            }
        }
    }

    double objective_value(std::span<const double> x) const {
        const auto& n = *net;
        double val = 0.0;
        if (obj.lambda_v != 0.0)
            for (int i = 0; i < lay.n_bus; ++i) {
                const double dv = x[lay.vm_off + i] - vref[i];
                val += obj.lambda_v * dv * dv;
            }
        for (size_t g = 0; g < n.generators.size(); ++g) {
            const auto& gen = n.generators[g];
            if (!gen.in_service) continue;
            if (obj.lambda_q != 0.0) {
                const double dq = x[lay.qg_var[g]] - qref[g];
                val += obj.lambda_q * dq * dq;
            }
            const double pg = pg_of((int)g, x);
            if (lambda_p_eff != 0.0 && lay.pg_var[g] >= 0) {
                const double dp = pg - gen.p_ref;
                val += lambda_p_eff * dp * dp;
            }
            if (obj.lambda_c != 0.0) val += obj.lambda_c * gen.cost_at(pg);
        }
        return val;
    }

    void objective_gradient(std::span<const double> x, std::span<double> grad) const {
        const auto& n = *net;
        std::fill(grad.begin(), grad.end(), 0.0);
        if (obj.lambda_v != 0.0)
            for (int i = 0; i < lay.n_bus; ++i)
                grad[lay.vm_off + i] += 2.0 * obj.lambda_v * (x[lay.vm_off + i] - vref[i]);
        for (size_t g = 0; g < n.generators.size(); ++g) {
            const auto& gen = n.generators[g];
            if (!gen.in_service) continue;
            if (obj.lambda_q != 0.0)
                grad[lay.qg_var[g]] += 2.0 * obj.lambda_q * (x[lay.qg_var[g]] - qref[g]);
            if (lay.pg_var[g] >= 0) {
                const double pg = x[lay.pg_var[g]];
                if (lambda_p_eff != 0.0)
                    grad[lay.pg_var[g]] += 2.0 * lambda_p_eff * (pg - gen.p_ref);
                if (obj.lambda_c != 0.0)
                    grad[lay.pg_var[g]] += obj.lambda_c * (2.0 * gen.cost[0] * pg + gen.cost[1]);
            }
        }
    }
};

}  // namespace

std::vector<double> VvoLayout::state_to_x(const OperatingState& st) const {
    std::vector<double> x(n_vars, 0.0);
    for (int i = 0; i < n_bus; ++i) {
        x[va_off + i] = st.va[i];
        x[vm_off + i] = st.vm[i];
    }
    for (int g = 0; g < n_gen; ++g) {
        if (pg_var[g] >= 0) x[pg_var[g]] = st.pg[g];
        if (qg_var[g] >= 0) x[qg_var[g]] = st.qg[g];
    }
    for (size_t e = 0; e < tap_var.size(); ++e)
        if (tap_var[e] >= 0) x[tap_var[e]] = st.tap[e];
    for (size_t s = 0; s < cb_var.size(); ++s)
        if (cb_var[s] >= 0) x[cb_var[s]] = st.cb[s];
    return x;
}

OperatingState VvoLayout::x_to_state(const Network& net, std::span<const double> x) const {
    OperatingState st = OperatingState::sized_for(net);
    for (int i = 0; i < n_bus; ++i) {
        st.va[i] = x[va_off + i];
        st.vm[i] = x[vm_off + i];
    }
    for (int g = 0; g < n_gen; ++g) {
        st.pg[g] = pg_var[g] >= 0 ? x[pg_var[g]]
                                  : (net.generators[g].in_service ? net.generators[g].p_ref : 0.0);
        st.qg[g] = qg_var[g] >= 0 ? x[qg_var[g]] : 0.0;
    }
    for (size_t e = 0; e < tap_var.size(); ++e)
        st.tap[e] = tap_var[e] >= 0 ? x[tap_var[e]] : tap_const[e];
    for (size_t s = 0; s < cb_var.size(); ++s)
        st.cb[s] = cb_var[s] >= 0 ? x[cb_var[s]] : cb_const[s];
    refresh_flows(net, st);
    return st;
}

VvoProblem build_vvo(const Network& net, const ObjectiveConfig& objective,
                     const RestrictedSets& sets, const DeviceTreatment& treatment) {
    const int nb = (int)net.buses.size();
    const int ng = (int)net.generators.size();
    const int ne = (int)net.branches.size();
    const int ns = (int)net.shunts.size();
    const int slack = net.slack_bus();
    if (slack < 0) throw PipelineError("network has no slack bus");
    const bool relaxed = treatment.mode == DeviceTreatment::Mode::Relaxed;
    if (relaxed && ((int)sets.tap.size() != ne || (int)sets.cb.size() != ns))
        throw PipelineError("restricted sets do not match the network");
    if (objective.p_fixed())
        for (const auto& g : net.generators)
            if (g.in_service && g.bus != slack &&
                (g.p_ref < g.pmin - 1e-9 || g.p_ref > g.pmax + 1e-9))
                throw PipelineError("pinned reference dispatch outside generator bounds");

    auto ctx = std::make_shared<Ctx>();
    ctx->net = &net;
    ctx->obj = objective;
    ctx->lambda_p_eff = objective.p_fixed() ? 0.0 : objective.lambda_p;
    ctx->vref.assign(nb, 1.0);
    if (!objective.v_ref.empty()) ctx->vref = objective.v_ref;
    ctx->qref.assign(ng, 0.0);
    if (!objective.q_ref.empty()) ctx->qref = objective.q_ref;

    VvoLayout& lay = ctx->lay;
    lay.n_bus = nb;
    lay.n_gen = ng;
    lay.va_off = 0;
    lay.vm_off = nb;
    int next = 2 * nb;
    lay.pg_var.assign(ng, -1);
    lay.qg_var.assign(ng, -1);
    for (int g = 0; g < ng; ++g) {
        const auto& gen = net.generators[g];
        if (!gen.in_service) continue;
        const bool pinned = objective.p_fixed() && gen.bus != slack;
        if (!pinned) lay.pg_var[g] = next++;
    }
    lay.qg_off = next;
    for (int g = 0; g < ng; ++g)
        if (net.generators[g].in_service) lay.qg_var[g] = next++;

    lay.tap_var.assign(ne, -1);
    lay.tap_const.assign(ne, 1.0);
    for (int e = 0; e < ne; ++e) {
        if (relaxed) {
            const auto& ts = sets.tap[e];
            if (ts.size() >= 2)
                lay.tap_var[e] = next++;
            else
                lay.tap_const[e] = ts.empty() ? net.branches[e].tap_ref : ts[0];
        } else {
            lay.tap_const[e] = treatment.tap[e];
        }
    }
    lay.cb_var.assign(ns, -1);
    lay.cb_const.assign(ns, 0.0);
    for (int s = 0; s < ns; ++s) {
        if (relaxed) {
            const auto& bs = sets.cb[s];
            if (bs.size() >= 2)
                lay.cb_var[s] = next++;
            else
                lay.cb_const[s] = bs.empty() ? 0.0 : bs[0];
        } else {
            lay.cb_const[s] = treatment.cb[s];
        }
    }
    lay.n_vars = next;

    lay.row_slack = 0;
    lay.row_p_off = 1;
    lay.row_q_off = 1 + nb;
    const int n_eq = 1 + 2 * nb;

    lay.angle_row.assign(ne, -1);
    lay.thermal_row.assign(ne, -1);
    int irow = 0;
    for (int e = 0; e < ne; ++e) {
        const auto& br = net.branches[e];
        if (br.angle_max - br.angle_min < 2.0 * kTwoPi - 1e-9) lay.angle_row[e] = irow++;
    }
    for (int e = 0; e < ne; ++e) {
        if (net.branches[e].s_max > 0.0) {
            lay.thermal_row[e] = irow;
            irow += 2;
        }
    }
    const int n_ineq = irow;

    VvoProblem out;
    out.layout = lay;
    NlpProblem& nlp = out.nlp;
    nlp.n_vars = lay.n_vars;
    nlp.lower.assign(lay.n_vars, -kInf);
    nlp.upper.assign(lay.n_vars, kInf);
    for (int i = 0; i < nb; ++i) {
        nlp.lower[lay.vm_off + i] = net.buses[i].vmin;
        nlp.upper[lay.vm_off + i] = net.buses[i].vmax;
    }
    for (int g = 0; g < ng; ++g) {
        const auto& gen = net.generators[g];
        if (lay.pg_var[g] >= 0) {
            nlp.lower[lay.pg_var[g]] = gen.pmin;
            nlp.upper[lay.pg_var[g]] = gen.pmax;
        }
        if (lay.qg_var[g] >= 0) {
            nlp.lower[lay.qg_var[g]] = gen.qmin;
            nlp.upper[lay.qg_var[g]] = gen.qmax;
        }
    }
    for (int e = 0; e < ne; ++e)
        if (lay.tap_var[e] >= 0) {
            nlp.lower[lay.tap_var[e]] = sets.tap[e].front();
            nlp.upper[lay.tap_var[e]] = sets.tap[e].back();
        }
    for (int s = 0; s < ns; ++s)
        if (lay.cb_var[s] >= 0) {
            nlp.lower[lay.cb_var[s]] = sets.cb[s].front();
            nlp.upper[lay.cb_var[s]] = sets.cb[s].back();
        }

    nlp.n_eq = n_eq;
    nlp.n_ineq = n_ineq;

    // patterns from the same walk used for the value fill
    ctx->walk_eq_jac(nullptr, [&](int r, int c, double) { nlp.eq_pattern.push_back({r, c}); });
    ctx->walk_ineq_jac(nullptr, [&](int r, int c, double) { nlp.ineq_pattern.push_back({r, c}); });
    ctx->walk_lag_hess(nullptr, 0.0, nullptr, nullptr,
                       [&](int r, int c, double) { nlp.lag_hess_pattern.push_back({r, c}); });

    nlp.ineq_lower.assign(n_ineq, -kInf);
    nlp.ineq_upper.assign(n_ineq, kInf);
    for (int e = 0; e < ne; ++e) {
        const auto& br = net.branches[e];
        if (lay.angle_row[e] >= 0) {
            nlp.ineq_lower[lay.angle_row[e]] = br.angle_min;
            nlp.ineq_upper[lay.angle_row[e]] = br.angle_max;
        }
        if (lay.thermal_row[e] >= 0) {
            nlp.ineq_upper[lay.thermal_row[e]] = br.s_max * br.s_max;
            nlp.ineq_upper[lay.thermal_row[e] + 1] = br.s_max * br.s_max;
        }
    }

    nlp.objective = [ctx](std::span<const double> x) { return ctx->objective_value(x); };
    nlp.gradient = [ctx](std::span<const double> x, std::span<double> g) {
        ctx->objective_gradient(x, g);
    };
    nlp.eval_eq = [ctx](std::span<const double> x, std::span<double> c) { ctx->eval_eq(x, c); };
    nlp.eval_eq_jac = [ctx](std::span<const double> x, std::span<double> v) {
        ctx->devices_from_x(x);
        size_t k = 0;
        ctx->walk_eq_jac(x.data(), [&](int, int, double val) { v[k++] = val; });
    };
    nlp.eval_ineq = [ctx](std::span<const double> x, std::span<double> c) { ctx->eval_ineq(x, c); };
    nlp.eval_ineq_jac = [ctx](std::span<const double> x, std::span<double> v) {
        ctx->devices_from_x(x);
        size_t k = 0;
        ctx->walk_ineq_jac(x.data(), [&](int, int, double val) { v[k++] = val; });
    };
    nlp.eval_lag_hess = [ctx](std::span<const double> x, double obj_factor,
                              std::span<const double> w_eq, std::span<const double> w_ineq,
                              std::span<double> v) {
        ctx->devices_from_x(x);
        size_t k = 0;
        ctx->walk_lag_hess(x.data(), obj_factor, w_eq.data(), w_ineq.data(),
                           [&](int, int, double val) { v[k++] = val; });
    };
    return out;
}

ReferenceResult solve_reference_acopf(const Network& net, const NlpOptions& opts) {
    ObjectiveConfig ref_obj;
    ref_obj.lambda_v = 0.0;
    ref_obj.lambda_q = 0.0;
    ref_obj.lambda_p = 0.0;
    ref_obj.lambda_c = 1.0;

    std::vector<double> tap0(net.branches.size()), cb0(net.shunts.size());
    for (size_t e = 0; e < net.branches.size(); ++e) tap0[e] = net.branches[e].tap_ref;
    for (size_t s = 0; s < net.shunts.size(); ++s) cb0[s] = net.shunts[s].b_ref;

    auto prob = build_vvo(net, ref_obj, {}, DeviceTreatment::fixed(tap0, cb0));
    OperatingState st0 = OperatingState::sized_for(net);
    for (size_t g = 0; g < net.generators.size(); ++g) st0.pg[g] = net.generators[g].p_ref;
    auto x0 = prob.layout.state_to_x(st0);

    auto sol = solve_nlp(prob.nlp, x0, opts);
    if (sol.status != NlpStatus::LocallyOptimal)
        throw PipelineError(std::string("reference ACOPF did not converge: ") + to_string(sol.status));

    ReferenceResult out{net, prob.layout.x_to_state(net, sol.x), std::move(sol)};
    for (size_t g = 0; g < net.generators.size(); ++g) {
        out.net.generators[g].p_ref = out.state.pg[g];
        out.net.generators[g].q_ref = out.state.qg[g];
    }
    return out;
}

StateCheck verify_state(const Network& net, const OperatingState& st, const RestrictedSets& sets) {
    StateCheck check;
    OperatingState phys = st;
    refresh_flows(net, phys);
    for (const auto& r : kcl_residual(net, phys)) check.max_kcl = std::max(check.max_kcl, std::abs(r));

    auto worse = [&](double viol, const std::string& what) {
        if (viol > check.max_bound_violation) {
            check.max_bound_violation = viol;
            check.worst_bound = what;
        }
    };
    for (size_t i = 0; i < net.buses.size(); ++i) {
        worse(net.buses[i].vmin - phys.vm[i], "vm lower at bus " + std::to_string(i));
        worse(phys.vm[i] - net.buses[i].vmax, "vm upper at bus " + std::to_string(i));
        if (net.buses[i].is_slack) worse(std::abs(phys.va[i]), "slack angle at bus " + std::to_string(i));
    }
    for (size_t g = 0; g < net.generators.size(); ++g) {
        if (!net.generators[g].in_service) continue;
        worse(net.generators[g].pmin - phys.pg[g], "pg lower at gen " + std::to_string(g));
        worse(phys.pg[g] - net.generators[g].pmax, "pg upper at gen " + std::to_string(g));
        worse(net.generators[g].qmin - phys.qg[g], "qg lower at gen " + std::to_string(g));
        worse(phys.qg[g] - net.generators[g].qmax, "qg upper at gen " + std::to_string(g));
    }
    for (size_t e = 0; e < net.branches.size(); ++e) {
        const auto& br = net.branches[e];
        const double dth = phys.va[br.from_bus] - phys.va[br.to_bus];
        if (br.angle_max - br.angle_min < 2.0 * kTwoPi - 1e-9) {
            worse(br.angle_min - dth, "angle lower at branch " + std::to_string(e));
            worse(dth - br.angle_max, "angle upper at branch " + std::to_string(e));
        }
        if (br.s_max > 0.0) {
            const double s2 = br.s_max * br.s_max;
            worse(phys.pf[e] * phys.pf[e] + phys.qf[e] * phys.qf[e] - s2,
                  "thermal (from) at branch " + std::to_string(e));
            worse(phys.pt[e] * phys.pt[e] + phys.qt[e] * phys.qt[e] - s2,
                  "thermal (to) at branch " + std::to_string(e));
        }
    }
    for (size_t e = 0; e < net.branches.size(); ++e) {
        if (find_exact(sets.tap[e], st.tap[e]) < 0) {
            check.sets_exact = false;
            check.set_mismatch = "tap at branch " + std::to_string(e);
            break;
        }
    }
    if (check.sets_exact)
        for (size_t s = 0; s < net.shunts.size(); ++s) {
            if (find_exact(sets.cb[s], st.cb[s]) < 0) {
                check.sets_exact = false;
                check.set_mismatch = "cb at shunt " + std::to_string(s);
                break;
            }
        }
    return check;
}

PipelineResult run_pipeline(const Network& net, const OperatingState& reference,
                            const ScenarioConfig& scenario, const NlpOptions& opts) {
    PipelineResult result;
    NlpOptions solver_opts = opts;
    solver_opts.tol = std::min(opts.tol, 5e-7);  // headroom under the 1e-6 verify gate

    const auto sets = scenario_sets(net, scenario);

    auto relaxed = build_vvo(net, scenario.objective, sets, DeviceTreatment::relaxed());
    auto x0 = relaxed.layout.state_to_x(reference);
    auto sol1 = solve_nlp(relaxed.nlp, x0, solver_opts);
    result.t_relax = sol1.wall_time_s;
    result.relax_status = sol1.status;
    result.relaxed_objective = sol1.objective;

    OperatingState frac_state = relaxed.layout.x_to_state(net, sol1.x);
    result.fractional_tap = frac_state.tap;
    result.fractional_cb = frac_state.cb;
    if (sol1.status != NlpStatus::LocallyOptimal) {
        result.status = PipelineResult::Status::NoSolutionFound;
        result.failed_stage = "relaxed";
        return result;
    }

    round_devices(result.fractional_tap, result.fractional_cb, sets, net, result.rounded_tap,
                  result.rounded_cb);

    auto fixed = build_vvo(net, scenario.objective, sets,
                           DeviceTreatment::fixed(result.rounded_tap, result.rounded_cb));
    OperatingState warm_state = frac_state;
    warm_state.tap = result.rounded_tap;
    warm_state.cb = result.rounded_cb;
    auto x1 = fixed.layout.state_to_x(warm_state);
    WarmStart warm{sol1.y_eq, sol1.y_ineq};
    auto sol2 = solve_nlp(fixed.nlp, x1, solver_opts, &warm);
    result.t_fixed = sol2.wall_time_s;
    result.fixed_status = sol2.status;
    result.fixed_objective = sol2.objective;
    if (sol2.status != NlpStatus::LocallyOptimal) {
        result.status = PipelineResult::Status::NoSolutionFound;
        result.failed_stage = "fixed";
        return result;
    }

    result.resolved = fixed.layout.x_to_state(net, sol2.x);
    const auto check = verify_state(net, result.resolved, sets);
    if (!check.ok(1e-6)) {
        result.status = PipelineResult::Status::NoSolutionFound;
        result.failed_stage = "verify";
        return result;
    }

    result.status = PipelineResult::Status::Success;
    result.metrics = compute_metrics(result.resolved, net);
    result.metrics.t_relax = result.t_relax;
    result.metrics.t_fixed = result.t_fixed;
    return result;
}

EnumerationResult enumerate_oracle(const Network& net, const OperatingState& reference,
                                   const ScenarioConfig& scenario, long long limit,
                                   const NlpOptions& opts) {
    const auto sets = scenario_sets(net, scenario);
    long long combos = 1;
    for (const auto& ts : sets.tap) {
        combos *= (long long)ts.size();
        if (combos > limit)
            throw PipelineError("enumeration would exceed the combination limit");
    }
    for (const auto& bs : sets.cb) {
        combos *= (long long)bs.size();
        if (combos > limit)
            throw PipelineError("enumeration would exceed the combination limit");
    }

    EnumerationResult out;
    out.combinations = combos;

    // odometer over devices with more than one admissible value
    struct Dial {
        bool is_tap;
        int index;
        const std::vector<double>* set;
        size_t pos = 0;
    };
    std::vector<Dial> dials;
    for (size_t e = 0; e < sets.tap.size(); ++e)
        if (sets.tap[e].size() > 1) dials.push_back({true, (int)e, &sets.tap[e]});
    for (size_t s = 0; s < sets.cb.size(); ++s)
        if (sets.cb[s].size() > 1) dials.push_back({false, (int)s, &sets.cb[s]});

    std::vector<double> tap(net.branches.size()), cb(net.shunts.size());
    for (size_t e = 0; e < net.branches.size(); ++e) tap[e] = sets.tap[e].front();
    for (size_t s = 0; s < net.shunts.size(); ++s) cb[s] = sets.cb[s].front();

    NlpOptions solver_opts = opts;
    solver_opts.tol = std::min(opts.tol, 5e-7);

    while (true) {
        for (auto& d : dials)
            (d.is_tap ? tap[d.index] : cb[d.index]) = (*d.set)[d.pos];

        auto prob = build_vvo(net, scenario.objective, sets, DeviceTreatment::fixed(tap, cb));
        auto x0 = prob.layout.state_to_x(reference);
        auto sol = solve_nlp(prob.nlp, x0, solver_opts);
        out.entries.push_back({tap, cb, sol.status, sol.objective});
        if (sol.status == NlpStatus::LocallyOptimal &&
            (!out.best_objective || sol.objective < *out.best_objective)) {
            out.best_objective = sol.objective;
            out.best_tap = tap;
            out.best_cb = cb;
        }

        // advance the odometer
        size_t d = 0;
        for (; d < dials.size(); ++d) {
            if (++dials[d].pos < dials[d].set->size()) break;
            dials[d].pos = 0;
        }
        if (d == dials.size()) break;
    }
    return out;
}

std::string to_json(const PipelineResult& r, const ScenarioConfig& scenario) {
    nlohmann::json j;
    j["scenario"]["lambda_v"] = scenario.objective.lambda_v;
    j["scenario"]["lambda_q"] = scenario.objective.lambda_q;
    if (scenario.objective.p_fixed())
        j["scenario"]["lambda_p"] = "inf";
    else
        j["scenario"]["lambda_p"] = scenario.objective.lambda_p;
    j["scenario"]["lambda_c"] = scenario.objective.lambda_c;
    j["scenario"]["tap_dev_steps"] = scenario.tap_dev_steps;
    j["scenario"]["cb_max_modules"] = scenario.cb_max_modules;
    j["status"] = r.success() ? "success" : "no-solution-found";
    if (!r.success()) j["failed_stage"] = r.failed_stage;
    j["fractional"]["tap"] = r.fractional_tap;
    j["fractional"]["cb"] = r.fractional_cb;
    j["rounded"]["tap"] = r.rounded_tap;
    j["rounded"]["cb"] = r.rounded_cb;
    if (r.success()) {
        j["metrics"]["mae_v"] = r.metrics.mae_v;
        j["metrics"]["mae_q"] = r.metrics.mae_q;
        j["metrics"]["delta_pg_mw"] = r.metrics.delta_pg;
        j["metrics"]["pct_delta_cost"] = r.metrics.pct_delta_cost;
        j["metrics"]["losses_mw"] = r.metrics.losses;
    }
    j["t_relax"] = r.t_relax;
    j["t_fixed"] = r.t_fixed;
    return j.dump(1);
}

}  // namespace vvo
