#include "vvo/case_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

namespace vvo {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Scanner {
    const std::string& text;
    size_t pos = 0;
    int line = 1;

    explicit Scanner(const std::string& t) : text(t) {}

    bool eof() const { return pos >= text.size(); }

    char peek() const { return eof() ? '\0' : text[pos]; }

    char get() {
        char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }

    void skip_ws_and_comments(bool stop_at_newline = false) {
        while (!eof()) {
            char c = peek();
            if (c == '%') {
                while (!eof() && peek() != '\n') get();
            } else if (c == '.' && pos + 2 < text.size() && text.compare(pos, 3, "...") == 0) {
                // MATLAB line continuation
                pos += 3;
                while (!eof() && peek() != '\n') get();
            } else if (std::isspace((unsigned char)c)) {
                if (stop_at_newline && c == '\n') return;
                get();
            } else {
                return;
            }
        }
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw CaseError("line " + std::to_string(line) + ": " + msg);
    }
};

bool ident_char(char c) { return std::isalnum((unsigned char)c) || c == '_' || c == '.'; }

std::string read_ident(Scanner& sc) {
    std::string s;
    while (!sc.eof() && ident_char(sc.peek())) s += sc.get();
    return s;
}

double read_number(Scanner& sc) {
    sc.skip_ws_and_comments();
    size_t start = sc.pos;
    std::string tok;
    char c = sc.peek();
    if (c == '+' || c == '-') tok += sc.get();
    bool any = false;
    while (!sc.eof()) {
        c = sc.peek();
        if (std::isdigit((unsigned char)c) || c == '.' || c == 'e' || c == 'E') {
            if ((c == 'e' || c == 'E') && sc.pos + 1 < sc.text.size() &&
                (sc.text[sc.pos + 1] == '+' || sc.text[sc.pos + 1] == '-')) {
                tok += sc.get();
                tok += sc.get();
            } else {
                tok += sc.get();
            }
            any = true;
        } else {
            break;
        }
    }
    if (!any) sc.fail("expected a number");
    try {
        size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        sc.pos = start;
        sc.fail("non-numeric cell '" + tok + "'");
    }
}

std::vector<std::vector<double>> read_matrix(Scanner& sc) {
    sc.skip_ws_and_comments();
    if (sc.peek() != '[') sc.fail("expected '['");
    sc.get();
    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    while (true) {
        sc.skip_ws_and_comments(/*stop_at_newline=*/true);
        char c = sc.peek();
        if (c == '\0') sc.fail("unterminated matrix");
        if (c == ']') {
            sc.get();
            if (!row.empty()) rows.push_back(std::move(row));
            break;
        }
        if (c == ';' || c == '\n') {
            sc.get();
            if (!row.empty()) {
                rows.push_back(std::move(row));
                row.clear();
            }
            continue;
        }
        if (c == ',') {
            sc.get();
            continue;
        }
        row.push_back(read_number(sc));
    }
    sc.skip_ws_and_comments();
    if (sc.peek() == ';') sc.get();
    return rows;
}

void skip_cell_array(Scanner& sc) {
    // consume a { ... }; block, ignoring content
    int depth = 0;
    while (!sc.eof()) {
        char c = sc.get();
        if (c == '{') ++depth;
        if (c == '}') {
            --depth;
            if (depth == 0) break;
        }
    }
    sc.skip_ws_and_comments();
    if (sc.peek() == ';') sc.get();
}

void skip_scalar_or_string(Scanner& sc) {
    while (!sc.eof() && sc.peek() != ';' && sc.peek() != '\n') sc.get();
    if (!sc.eof() && sc.peek() == ';') sc.get();
}

}  // namespace

RawCase parse_matpower_text(const std::string& text) {
    Scanner sc(text);
    RawCase rc;
    bool have_base = false, have_bus = false, have_gen = false, have_branch = false,
         have_gencost = false;

    while (true) {
        sc.skip_ws_and_comments();
        if (sc.eof()) break;
        std::string word = read_ident(sc);
        if (word.empty()) {
            sc.get();  // stray punctuation
            continue;
        }
        if (word == "function") {
            // function mpc = <name>
            sc.skip_ws_and_comments();
            read_ident(sc);
            sc.skip_ws_and_comments();
            if (sc.peek() == '=') {
                sc.get();
                sc.skip_ws_and_comments();
                rc.name = read_ident(sc);
            }
            continue;
        }
        if (word.rfind("mpc.", 0) != 0) {
            skip_scalar_or_string(sc);
            continue;
        }
        std::string field = word.substr(4);
        sc.skip_ws_and_comments();
        if (sc.peek() != '=') sc.fail("expected '=' after " + word);
        sc.get();
        sc.skip_ws_and_comments();

        if (field == "version") {
            skip_scalar_or_string(sc);
        } else if (field == "baseMVA") {
            rc.base_mva = read_number(sc);
            have_base = true;
            sc.skip_ws_and_comments();
            if (sc.peek() == ';') sc.get();
        } else if (field == "bus") {
            rc.bus = read_matrix(sc);
            have_bus = true;
        } else if (field == "gen") {
            rc.gen = read_matrix(sc);
            have_gen = true;
        } else if (field == "branch") {
            rc.branch = read_matrix(sc);
            have_branch = true;
        } else if (field == "gencost") {
            rc.gencost = read_matrix(sc);
            have_gencost = true;
        } else {
            rc.warnings.push_back("ignored field mpc." + field);
            if (sc.peek() == '[')
                read_matrix(sc);
            else if (sc.peek() == '{')
                skip_cell_array(sc);
            else
                skip_scalar_or_string(sc);
        }
    }

    if (!have_base) throw CaseError("missing mandatory field mpc.baseMVA");
    if (!have_bus) throw CaseError("missing mandatory table mpc.bus");
    if (!have_gen) throw CaseError("missing mandatory table mpc.gen");
    if (!have_branch) throw CaseError("missing mandatory table mpc.branch");
    if (!have_gencost) throw CaseError("missing mandatory table mpc.gencost");

    if (rc.gencost.size() != rc.gen.size())
        throw CaseError("gencost row count (" + std::to_string(rc.gencost.size()) +
                        ") does not match gen row count (" + std::to_string(rc.gen.size()) + ")");
    for (const auto& row : rc.gencost) {
        if (row.size() < 4) throw CaseError("gencost row too short");
        if ((int)row[0] == 1) throw CaseError("piecewise-linear cost model (gencost model 1) is unsupported");
    }
    for (const auto& row : rc.bus)
        if (row.size() < 13) throw CaseError("bus row has fewer than 13 columns");
    for (const auto& row : rc.gen)
        if (row.size() < 10) throw CaseError("gen row has fewer than 10 columns");
    for (const auto& row : rc.branch)
        if (row.size() < 11) throw CaseError("branch row has fewer than 11 columns");

    // referenced bus numbers must exist
    std::vector<double> bus_ids;
    for (const auto& row : rc.bus) bus_ids.push_back(row[0]);
    auto bus_exists = [&](double id) {
        return std::find(bus_ids.begin(), bus_ids.end(), id) != bus_ids.end();
    };
    for (const auto& row : rc.gen)
        if (!bus_exists(row[0]))
            throw CaseError("gen references unknown bus " + std::to_string((long long)row[0]));
    for (const auto& row : rc.branch) {
        if (!bus_exists(row[0]))
            throw CaseError("branch references unknown bus " + std::to_string((long long)row[0]));
        if (!bus_exists(row[1]))
            throw CaseError("branch references unknown bus " + std::to_string((long long)row[1]));
    }

    return rc;
}

RawCase parse_matpower(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_matpower_text(ss.str());
}

RawCase parse_matpower_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CaseError("cannot open case file: " + path);
    return parse_matpower(f);
}

TapSnap snap_tap(double ratio, const DeviceConfig& cfg) {
    const double rel = (ratio / cfg.tap_neutral - 1.0) / cfg.tap_step;
    int k = (int)std::lround(rel);
    // std::lround rounds halves away from zero; retie toward zero.
    if (std::abs(std::abs(rel - std::trunc(rel)) - 0.5) < 1e-12 && std::abs(k) > std::abs(rel))
        k = (int)std::trunc(rel);
    k = std::clamp(k, -cfg.tap_positions, cfg.tap_positions);
    return {k, cfg.tap_neutral * (1.0 + k * cfg.tap_step)};
}

namespace {

std::vector<double> full_tap_grid(const DeviceConfig& cfg) {
    std::vector<double> grid;
    for (int k = -cfg.tap_positions; k <= cfg.tap_positions; ++k)
        grid.push_back(cfg.tap_neutral * (1.0 + k * cfg.tap_step));
    return grid;
}

}  // namespace

Network build_network(const RawCase& raw, const DeviceConfig& cfg) {
    Network net;
    net.base_mva = raw.base_mva;
    const double base = raw.base_mva;

    // Bus types: 1 PQ, 2 PV, 3 slack, 4 isolated (dropped).
    std::vector<int> ext_ids;
    std::vector<const std::vector<double>*> kept_rows;
    for (const auto& row : raw.bus) {
        if ((int)row[1] == 4) continue;
        ext_ids.push_back((int)row[0]);
        kept_rows.push_back(&row);
    }

    std::vector<int> slack_ext;
    for (size_t i = 0; i < kept_rows.size(); ++i) {
        const auto& row = *kept_rows[i];
        Bus b;
        b.id = (int)i;
        b.pd = row[2] / base;
        b.qd = row[3] / base;
        b.base_kv = row[9];
        b.vmax = row[11];
        b.vmin = row[12];
        b.is_slack = (int)row[1] == 3;
        if (b.is_slack) slack_ext.push_back((int)row[0]);
        net.buses.push_back(b);
    }
    if (slack_ext.empty()) throw CaseError("no slack bus (type 3) in case");
    if (slack_ext.size() > 1) throw CaseError("multiple slack buses in case");

    // components attached to dropped (isolated) buses are dropped with them
    auto dense = [&](double ext) -> int {
        auto it = std::find(ext_ids.begin(), ext_ids.end(), (int)ext);
        if (it == ext_ids.end()) return -1;
        return (int)(it - ext_ids.begin());
    };

    // Shunt devices from bus Gs/Bs columns.
    for (size_t i = 0; i < kept_rows.size(); ++i) {
        const auto& row = *kept_rows[i];
        const double gs = row[4] / base;
        const double bs = row[5] / base;
        if (gs == 0.0 && bs == 0.0) continue;
        ShuntDevice s;
        s.bus = (int)i;
        s.gs = gs;
        s.module_step = cfg.cb_module_step;
        s.module_count = cfg.cb_module_count;
        if (bs != 0.0) {
            s.b_ref = cfg.cb_ref_modules * cfg.cb_module_step;
            s.bs0 = bs - s.b_ref;
            s.cb_set.clear();
            for (int k = 0; k <= cfg.cb_module_count; ++k) s.cb_set.push_back(k * cfg.cb_module_step);
        } else {
            s.b_ref = 0.0;
            s.bs0 = 0.0;
            s.cb_set = {0.0};
        }
        net.shunts.push_back(s);
    }

    for (size_t e = 0; e < raw.branch.size(); ++e) {
        const auto& row = raw.branch[e];
        if ((int)row[10] == 0) continue;  // out of service
        Branch br;
        br.from_bus = dense(row[0]);
        br.to_bus = dense(row[1]);
        if (br.from_bus < 0 || br.to_bus < 0) continue;
        const double r = row[2], x = row[3], bc = row[4];
        const double rate_a = row[5];
        const double ratio = row.size() > 8 ? row[8] : 0.0;
        const double shift_deg = row.size() > 9 ? row[9] : 0.0;
        if (r == 0.0 && x == 0.0)
            throw CaseError("branch " + std::to_string(e + 1) + " has zero impedance");
        const Complex ys = 1.0 / Complex(r, x);
        const Complex shift = std::polar(1.0, shift_deg * kPi / 180.0);
        br.yff = ys + Complex(0.0, bc / 2.0);
        br.ytt = br.yff;
        br.yft = -ys * shift;
        br.ytf = -ys / shift;
        br.s_max = rate_a / base;  // 0 means unlimited
        double amin = row.size() > 11 ? row[11] : 0.0;
        double amax = row.size() > 12 ? row[12] : 0.0;
        if (amin == 0.0 && amax == 0.0) {  // MATPOWER: both zero = unconstrained
            amin = -360.0;
            amax = 360.0;
        }
        br.angle_min = std::max(amin, -360.0) * kPi / 180.0;
        br.angle_max = std::min(amax, 360.0) * kPi / 180.0;
        br.is_transformer = ratio != 0.0;
        if (br.is_transformer) {
            br.tap_ref = snap_tap(ratio, cfg).ratio;
            br.tap_set = full_tap_grid(cfg);
        } else {
            br.tap_ref = 1.0;
            br.tap_set = {1.0};
        }
        net.branches.push_back(br);
    }

    for (size_t g = 0; g < raw.gen.size(); ++g) {
        const auto& row = raw.gen[g];
        if ((int)row[7] == 0) continue;  // out of service
        Generator gen;
        gen.bus = dense(row[0]);
        if (gen.bus < 0) continue;
        gen.p_ref = row[1] / base;
        gen.q_ref = row[2] / base;
        gen.qmax = row[3] / base;
        gen.qmin = row[4] / base;
        gen.pmax = row[8] / base;
        gen.pmin = row[9] / base;

        const auto& cost = raw.gencost[g];
        const int model = (int)cost[0];
        const int ncoef = (int)cost[3];
        if (model != 2) throw CaseError("unsupported gencost model " + std::to_string(model));
        if ((int)cost.size() < 4 + ncoef) throw CaseError("gencost row shorter than declared n");
        if (ncoef > 3) throw CaseError("gencost polynomial degree above 2 is unsupported");
        // raw coefficients are in $/h per MW; rescale to p.u. argument
        double c[3] = {0.0, 0.0, 0.0};  // c2 c1 c0
        for (int k = 0; k < ncoef; ++k) {
            const double coef = cost[4 + k];
            const int degree = ncoef - 1 - k;
            c[2 - degree] = coef * std::pow(base, degree);
        }
        gen.cost[0] = c[0];
        gen.cost[1] = c[1];
        gen.cost[2] = c[2];
        net.generators.push_back(gen);
    }

    net.rebuild_adjacency();

    // connectivity over in-service branches
    {
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
        if (count != net.buses.size())
            throw CaseError("network is disconnected (" + std::to_string(count) + " of " +
                            std::to_string(net.buses.size()) + " buses reachable)");
    }

    return net;
}

}  // namespace vvo
