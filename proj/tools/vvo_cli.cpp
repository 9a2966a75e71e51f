#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vvo/acpf.hpp"
#include "vvo/case_io.hpp"
#include "vvo/metrics.hpp"
#include "vvo/vvo_pipeline.hpp"

namespace fs = std::filesystem;
using namespace vvo;

namespace {

struct Cell {
    double lambda_p;  // infinity encodes the pinned-dispatch runs
    int tap_dev;
    int cb_max;
};

std::string lambda_str(double lp) {
    if (std::isinf(lp)) return "inf";
    std::ostringstream ss;
    ss << lp;
    return ss.str();
}

// Range cells pair up as in the standard experiment layout: every CB range
// at the tightest tap range, then the wider tap ranges at the full CB range.
std::vector<std::pair<int, int>> range_cells(std::vector<int> taps, std::vector<int> cbs) {
    std::sort(taps.begin(), taps.end());
    taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
    std::sort(cbs.begin(), cbs.end());
    cbs.erase(std::unique(cbs.begin(), cbs.end()), cbs.end());
    std::vector<std::pair<int, int>> out;
    for (int c : cbs) out.push_back({taps.front(), c});
    for (size_t i = 1; i < taps.size(); ++i) out.push_back({taps[i], cbs.back()});
    return out;
}

void write_atomically(const std::string& path, const std::string& content) {
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f << content;
    }
    fs::rename(tmp, target);
}

int cmd_run(const std::string& case_path, const std::vector<std::string>& lambda_list,
            std::vector<int> tap_list, std::vector<int> cb_list, double tol, int max_iter,
            int jobs, const std::string& output, const std::string& format, bool do_enumerate,
            long long enumerate_limit, const std::string& dump_state_dir) {
    auto raw = parse_matpower_file(case_path);
    for (const auto& wmsg : raw.warnings) std::cerr << "warning: " << wmsg << "\n";
    auto net0 = build_network(raw);
    {
        auto violations = validate(net0);
        if (!violations.empty()) {
            for (const auto& v : violations)
                std::cerr << "invalid network: " << v.entity << " " << v.index << ": " << v.message
                          << "\n";
            return 1;
        }
    }

    std::vector<double> lambdas;
    for (const auto& token : lambda_list) {
        if (token == "inf")
            lambdas.push_back(std::numeric_limits<double>::infinity());
        else
            lambdas.push_back(std::stod(token));
    }

    NlpOptions opts;
    opts.tol = tol;
    opts.max_iter = max_iter;

    std::cerr << "solving reference ACOPF..." << std::endl;
    auto ref = solve_reference_acopf(net0, opts);
    const auto baseline = compute_metrics(ref.state, ref.net);
    std::cerr << "reference objective " << ref.solution.objective << ", MAE_v " << baseline.mae_v
              << ", MAE_q " << baseline.mae_q << " MVAr\n";

    std::vector<Cell> cells;
    for (double lp : lambdas)
        for (auto [t, c] : range_cells(tap_list, cb_list)) cells.push_back({lp, t, c});

    const std::string case_name = fs::path(case_path).stem().string();
    std::vector<TableRow> rows(cells.size() + 1);
    {
        TableRow& b = rows[0];
        b.case_name = case_name;
        b.lambda_p = "--";
        b.tap_range = "+-0";
        b.cb_range = "1-1";
        b.metrics = baseline;
        b.is_baseline = true;
    }

    std::vector<PipelineResult> results(cells.size());
    std::vector<std::string> enum_notes(cells.size());
    std::atomic<size_t> next{0};
    std::mutex io_mutex;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            ScenarioConfig sc;
            sc.objective.lambda_p = cell.lambda_p;
            sc.tap_dev_steps = cell.tap_dev;
            sc.cb_max_modules = cell.cb_max;
            auto res = run_pipeline(ref.net, ref.state, sc, opts);
            if (do_enumerate) {
                try {
                    auto oracle = enumerate_oracle(ref.net, ref.state, sc, enumerate_limit, opts);
                    std::ostringstream note;
                    if (oracle.best_objective && res.success()) {
                        note << "enumerated " << oracle.combinations << " combinations, best "
                             << *oracle.best_objective << ", pipeline " << res.fixed_objective
                             << " (ratio " << res.fixed_objective / *oracle.best_objective << ")";
                    } else {
                        note << "enumerated " << oracle.combinations
                             << " combinations, no comparable result";
                    }
                    enum_notes[i] = note.str();
                } catch (const PipelineError& ex) {
                    enum_notes[i] = std::string("enumeration skipped: ") + ex.what();
                }
            }
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "cell lambda_p=" << lambda_str(cell.lambda_p) << " +-" << cell.tap_dev
                          << " 0-" << cell.cb_max << ": "
                          << (res.success() ? "success" : "no-solution-found (" + res.failed_stage + ")")
                          << "\n";
            }
            results[i] = std::move(res);
        }
    };
    {
        std::vector<std::thread> pool;
        const int n_threads = std::max(1, std::min<int>(jobs, (int)cells.size()));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    bool any_failed = false;
    for (size_t i = 0; i < cells.size(); ++i) {
        const Cell& cell = cells[i];
        const PipelineResult& res = results[i];
        TableRow& row = rows[i + 1];
        row.case_name = case_name;
        row.lambda_p = lambda_str(cell.lambda_p);
        row.tap_range = "+-" + std::to_string(cell.tap_dev);
        row.cb_range = "0-" + std::to_string(cell.cb_max);
        row.t_relax = res.t_relax;
        row.t_fixed = res.fixed_status == NlpStatus::LocallyOptimal ? res.t_fixed : -1.0;
        if (res.success()) {
            row.metrics = res.metrics;
        } else {
            row.failed_stage = res.failed_stage;
            any_failed = true;
        }
        if (dump_state_dir.size() && res.success()) {
            fs::create_directories(dump_state_dir);
            std::string name = "state_" + lambda_str(cell.lambda_p) + "_t" +
                               std::to_string(cell.tap_dev) + "_c" + std::to_string(cell.cb_max) +
                               ".json";
            write_atomically((fs::path(dump_state_dir) / name).string(), to_json(res.resolved));
        }
    }
    if (dump_state_dir.size()) {
        fs::create_directories(dump_state_dir);
        write_atomically((fs::path(dump_state_dir) / "state_reference.json").string(),
                         to_json(ref.state));
    }

    TableFormat fmt = format == "csv" ? TableFormat::Csv
                      : format == "json" ? TableFormat::Json
                                         : TableFormat::Text;
    std::string report = render_table(rows, fmt);
    if (do_enumerate) {
        std::ostringstream extra;
        extra << report;
        for (size_t i = 0; i < cells.size(); ++i)
            if (!enum_notes[i].empty())
                extra << "# " << rows[i + 1].lambda_p << " " << rows[i + 1].tap_range << " "
                      << rows[i + 1].cb_range << ": " << enum_notes[i] << "\n";
        report = extra.str();
    }
    if (output.empty())
        std::cout << report;
    else
        write_atomically(output, report);

    return any_failed ? 2 : 0;
}

int cmd_check(const std::string& case_path, const std::string& state_path, int tap_dev,
              int cb_max, const std::string& residuals_path) {
    auto net = build_network(parse_matpower_file(case_path));
    std::ifstream f(state_path);
    if (!f) {
        std::cerr << "cannot open state file: " << state_path << "\n";
        return 1;
    }
    std::stringstream buf;
    buf << f.rdbuf();
    OperatingState st;
    try {
        st = state_from_json(buf.str());
    } catch (const std::exception& ex) {
        std::cerr << "malformed state file: " << ex.what() << "\n";
        return 1;
    }
    if (!st.dimensions_match(net)) {
        std::cerr << "state dimensions do not match the case\n";
        return 1;
    }
    ScenarioConfig sc;
    sc.tap_dev_steps = tap_dev;
    sc.cb_max_modules = cb_max;
    auto sets = scenario_sets(net, sc);
    auto check = verify_state(net, st, sets);
    if (!residuals_path.empty()) {
        OperatingState phys = st;
        refresh_flows(net, phys);
        write_atomically(residuals_path, residuals_csv(net, phys));
    }
    std::printf("max |kcl residual|    : %.3e p.u.\n", check.max_kcl);
    std::printf("max bound violation   : %.3e%s\n", check.max_bound_violation,
                check.worst_bound.empty() ? "" : (" (" + check.worst_bound + ")").c_str());
    std::printf("discrete setpoints    : %s\n",
                check.sets_exact ? "all exact members" : ("off-grid: " + check.set_mismatch).c_str());
    const bool ok = check.ok(1e-6);
    std::printf("verdict               : %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 2;
}

int cmd_snapshot(const std::string& case_path, const std::string& output) {
    auto raw = parse_matpower_file(case_path);
    for (const auto& wmsg : raw.warnings) std::cerr << "warning: " << wmsg << "\n";
    auto net = build_network(raw);
    auto text = to_json(net);
    if (output.empty())
        std::cout << text << "\n";
    else
        write_atomically(output, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transmission volt/var optimization with discrete tap and capacitor control"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run the relax-round-resolve pipeline over a scenario grid");
    std::string case_path, output, format = "text", dump_state_dir;
    std::vector<std::string> lambda_list{"1", "5", "inf"};
    std::vector<int> tap_list{3, 16};
    std::vector<int> cb_list{2, 3};
    double tol = 1e-6;
    int max_iter = 3000, jobs = 1;
    bool do_enumerate = false;
    long long enumerate_limit = 20000;
    run->add_option("--case", case_path, "MATPOWER case file")->required();
    run->add_option("--lambda-p", lambda_list,
                    "active-deviation weights; 'inf' pins dispatch at the reference")
        ->delimiter(',');
    run->add_option("--tap-dev", tap_list, "tap deviation ranges, in steps")->delimiter(',');
    run->add_option("--cb-max", cb_list, "max active CB modules per range")->delimiter(',');
    run->add_option("--tol", tol, "solver tolerance");
    run->add_option("--max-iter", max_iter, "solver iteration limit");
    run->add_option("--jobs", jobs, "concurrent scenario cells");
    run->add_option("--output", output, "report file (written atomically)");
    run->add_option("--format", format, "text, csv or json")
        ->check(CLI::IsMember({"text", "csv", "json"}));
    run->add_flag("--enumerate", do_enumerate, "compare each cell against brute-force enumeration");
    run->add_option("--enumerate-limit", enumerate_limit, "max combinations to enumerate");
    run->add_option("--dump-state", dump_state_dir, "directory for resolved state JSON files");

    auto* check = app.add_subcommand("check", "verify a state file against the case physics");
    std::string state_path;
    int chk_tap_dev = 16, chk_cb_max = 3;
    check->add_option("--case", case_path, "MATPOWER case file")->required();
    check->add_option("--state", state_path, "operating-state JSON")->required();
    check->add_option("--tap-dev", chk_tap_dev, "scenario tap range for set membership");
    check->add_option("--cb-max", chk_cb_max, "scenario CB range for set membership");
    std::string residuals_path;
    check->add_option("--residuals", residuals_path, "write per-bus mismatches as CSV");

    auto* snapshot = app.add_subcommand("snapshot", "dump the built network as JSON");
    snapshot->add_option("--case", case_path, "MATPOWER case file")->required();
    snapshot->add_option("--output", output, "snapshot file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(case_path, lambda_list, tap_list, cb_list, tol, max_iter, jobs, output,
                           format, do_enumerate, enumerate_limit, dump_state_dir);
        if (check->parsed())
            return cmd_check(case_path, state_path, chk_tap_dev, chk_cb_max, residuals_path);
        if (snapshot->parsed()) return cmd_snapshot(case_path, output);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
