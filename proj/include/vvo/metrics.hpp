#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vvo/network.hpp"

namespace vvo {

// Solution-quality metrics. Voltage deviation is per-unit; reactive and
// active deviations are reported in physical units (p.u. x base MVA).
struct MetricsReport {
    double mae_v = 0.0;           // p.u.
    double mae_q = 0.0;           // MVAr
    double delta_pg = 0.0;        // MW
    double pct_delta_cost = 0.0;  // percent
    double losses = 0.0;          // MW
    double t_relax = 0.0, t_fixed = 0.0;  // seconds
};

double mae_v(const OperatingState& st);
double mae_q(const OperatingState& st, const Network& net);
double delta_pg(const OperatingState& st, const Network& net);
double pct_delta_cost(const OperatingState& st, const Network& net);
double losses(const OperatingState& st, const Network& net);

MetricsReport compute_metrics(const OperatingState& st, const Network& net);

// One result-table row: a scenario cell and either its metrics or the
// stage that failed.
struct TableRow {
    std::string case_name;
    std::string lambda_p;   // "1", "5", "inf", or "--" for the baseline
    std::string tap_range;  // e.g. "+-3"
    std::string cb_range;   // e.g. "0-2"
    std::optional<MetricsReport> metrics;
    std::string failed_stage;  // non-empty when metrics is absent
    bool is_baseline = false;
    double t_relax = -1.0;  // >= 0 when the stage ran, also for failures
    double t_fixed = -1.0;
};

enum class TableFormat { Text, Csv, Json };

std::string render_table(const std::vector<TableRow>& rows, TableFormat fmt);

}  // namespace vvo
