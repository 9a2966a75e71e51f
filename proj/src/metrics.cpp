#include "vvo/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vvo {

double mae_v(const OperatingState& st) {
    if (st.vm.empty()) return 0.0;
    double acc = 0.0;
    for (double v : st.vm) acc += std::abs(v - 1.0);  // target is the literal 1 p.u.
    return acc / (double)st.vm.size();
}

double mae_q(const OperatingState& st, const Network& net) {
    if (st.qg.empty()) return 0.0;
    double acc = 0.0;
    int n = 0;
    for (size_t g = 0; g < st.qg.size(); ++g) {
        if (!net.generators[g].in_service) continue;
        acc += std::abs(st.qg[g]);
        ++n;
    }
    return n ? acc / n * net.base_mva : 0.0;
}

double delta_pg(const OperatingState& st, const Network& net) {
    if (st.pg.empty()) return 0.0;
    double acc = 0.0;
    int n = 0;
    for (size_t g = 0; g < st.pg.size(); ++g) {
        if (!net.generators[g].in_service) continue;
        acc += std::abs(st.pg[g] - net.generators[g].p_ref);
        ++n;
    }
    return n ? acc / n * net.base_mva : 0.0;
}

double pct_delta_cost(const OperatingState& st, const Network& net) {
    double cost = 0.0, ref_cost = 0.0;
    for (size_t g = 0; g < st.pg.size(); ++g) {
        if (!net.generators[g].in_service) continue;
        cost += net.generators[g].cost_at(st.pg[g]);
        ref_cost += net.generators[g].cost_at(net.generators[g].p_ref);
    }
    if (ref_cost == 0.0) throw std::domain_error("reference generation cost is zero");
    return 100.0 * (cost - ref_cost) / ref_cost;
}

double losses(const OperatingState& st, const Network& net) {
    double acc = 0.0;
    for (size_t e = 0; e < st.pf.size(); ++e) acc += st.pf[e] + st.pt[e];
    return acc * net.base_mva;
}

MetricsReport compute_metrics(const OperatingState& st, const Network& net) {
    MetricsReport r;
    r.mae_v = mae_v(st);
    r.mae_q = mae_q(st, net);
    r.delta_pg = delta_pg(st, net);
    r.pct_delta_cost = pct_delta_cost(st, net);
    r.losses = losses(st, net);
    return r;
}

namespace {

std::string fmt(double v, int prec) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(prec);
    ss << v;
    return ss.str();
}

std::string time_cell(double t) { return t < 0.0 ? "--" : fmt(t, 1); }

}  // namespace

std::string render_table(const std::vector<TableRow>& rows, TableFormat fmt_kind) {
    if (fmt_kind == TableFormat::Csv) {
        std::ostringstream out;
        out << "case,lambda_p,tap_range,cb_range,mae_v,mae_q,t_relax_s,t_fixed_s,"
               "delta_pg_mw,pct_delta_cost,losses_mw,status\n";
        for (const auto& r : rows) {
            out << r.case_name << ',' << r.lambda_p << ',' << r.tap_range << ',' << r.cb_range
                << ',';
            if (r.metrics) {
                const auto& m = *r.metrics;
                out << fmt(m.mae_v, 6) << ',' << fmt(m.mae_q, 4) << ','
                    << (r.t_relax < 0 ? "NA" : fmt(r.t_relax, 3)) << ','
                    << (r.t_fixed < 0 ? "NA" : fmt(r.t_fixed, 3)) << ',' << fmt(m.delta_pg, 4)
                    << ',' << fmt(m.pct_delta_cost, 4) << ',' << fmt(m.losses, 4) << ','
                    << (r.is_baseline ? "baseline" : "success") << '\n';
            } else {
                out << "NA,NA," << (r.t_relax < 0 ? "NA" : fmt(r.t_relax, 3)) << ','
                    << (r.t_fixed < 0 ? "NA" : fmt(r.t_fixed, 3))
                    << ",NA,NA,NA,no-solution-found:" << r.failed_stage << '\n';
            }
        }
        return out.str();
    }

    if (fmt_kind == TableFormat::Json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row;
            row["case"] = r.case_name;
            row["lambda_p"] = r.lambda_p;
            row["tap_range"] = r.tap_range;
            row["cb_range"] = r.cb_range;
            if (r.metrics) {
                row["mae_v"] = r.metrics->mae_v;
                row["mae_q"] = r.metrics->mae_q;
                row["delta_pg_mw"] = r.metrics->delta_pg;
                row["pct_delta_cost"] = r.metrics->pct_delta_cost;
                row["losses_mw"] = r.metrics->losses;
                row["status"] = r.is_baseline ? "baseline" : "success";
            } else {
                row["status"] = "no-solution-found";
                row["failed_stage"] = r.failed_stage;
            }
            if (r.t_relax >= 0) row["t_relax_s"] = r.t_relax;
            if (r.t_fixed >= 0) row["t_fixed_s"] = r.t_fixed;
            j.push_back(row);
        }
        return j.dump(1);
    }

    // plain text, one row per cell in the usual column order
    std::ostringstream out;
    out << "lambda_p  taps   cbs   MAE_v    MAE_q     T_r     T_f    dPg      %dc\n";
    bool any_failure = false;
    for (const auto& r : rows) {
        char line[160];
        if (r.metrics) {
            const auto& m = *r.metrics;
            std::snprintf(line, sizeof line, "%-8s  %-5s  %-4s  %-7.3f  %-8.2f  %-6s  %-6s  %-7.2f  %-+.2f\n",
                          r.lambda_p.c_str(), r.tap_range.c_str(), r.cb_range.c_str(), m.mae_v,
                          m.mae_q, time_cell(r.t_relax).c_str(), time_cell(r.t_fixed).c_str(),
                          m.delta_pg, m.pct_delta_cost);
        } else {
            any_failure = true;
            std::snprintf(line, sizeof line, "%-8s  %-5s  %-4s  NA       NA        %-6s  %-6s  NA       NA *\n",
                          r.lambda_p.c_str(), r.tap_range.c_str(), r.cb_range.c_str(),
                          time_cell(r.t_relax).c_str(), time_cell(r.t_fixed).c_str());
        }
        out << line;
    }
    if (any_failure) {
        out << "* no solution found; failed stage:";
        for (const auto& r : rows)
            if (!r.metrics) out << " [" << r.lambda_p << " " << r.tap_range << " " << r.cb_range
                                << ": " << r.failed_stage << "]";
        out << '\n';
    }
    return out.str();
}

}  // namespace vvo
