#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "vvo/network.hpp"

namespace vvo {

struct CaseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raw MATPOWER tables, one row per record, numeric fields verbatim.
struct RawCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<std::vector<double>> bus;      // bus_i type pd qd gs bs area vm va base_kv zone vmax vmin
    std::vector<std::vector<double>> gen;      // bus pg qg qmax qmin vg mbase status pmax pmin ...
    std::vector<std::vector<double>> branch;   // fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
    std::vector<std::vector<double>> gencost;  // model startup shutdown n c(n-1) ... c0
    std::vector<std::string> warnings;         // one line per ignored field
};

// Discrete device discretization applied on top of a raw case.
struct DeviceConfig {
    double cb_module_step = 0.1;   // p.u. susceptance per CB module
    int cb_module_count = 3;
    int cb_ref_modules = 1;        // modules assumed active at reference
    double tap_step = 0.00625;     // relative increment per tap position
    int tap_positions = 16;        // half-range, positions -16..+16
    double tap_neutral = 1.0;
};

struct TapSnap {
    int position = 0;
    double ratio = 1.0;
};

RawCase parse_matpower(std::istream& in);
RawCase parse_matpower_text(const std::string& text);
RawCase parse_matpower_file(const std::string& path);

// Nearest grid ratio; ties break toward position 0, out-of-range clamps.
TapSnap snap_tap(double ratio, const DeviceConfig& cfg);

Network build_network(const RawCase& raw, const DeviceConfig& cfg = {});

}  // namespace vvo
