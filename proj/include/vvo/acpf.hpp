#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vvo/network.hpp"

namespace vvo {

struct BranchAdmittance {
    Complex Yff, Yft, Ytf, Ytt;
};

// Tap-adjusted branch admittance: Yff = yff/tap^2, Yft = yft/tap,
// Ytf = ytf/tap, Ytt = ytt.
BranchAdmittance branch_admittance(const Branch& br, double tap);

Complex shunt_admittance(const ShuntDevice& sh, double cb);

struct BranchFlows {
    double pf = 0, qf = 0, pt = 0, qt = 0;
};

// Flows plus first partials with respect to (va_i, va_j, vm_i, vm_j, tap).
struct BranchFlowDerivs {
    BranchFlows flow;
    // d{pf,qf,pt,qt} / d{va_i, va_j, vm_i, vm_j, tap}
    double dpf[5], dqf[5], dpt[5], dqt[5];
};

BranchFlows branch_flows(const Branch& br, double tap, Complex Vi, Complex Vj);
BranchFlowDerivs branch_flow_derivs(const Branch& br, double tap, double vm_i, double va_i,
                                    double vm_j, double va_j);

// Independent second partials of one flow quantity with respect to the
// angle difference th = va_i - va_j, the endpoint magnitudes and the tap.
struct FlowSecondDerivs {
    double th_th, th_vi, th_vj;
    double vi_vi, vi_vj, vj_vj;
    double ta_th, ta_vi, ta_vj, ta_ta;
};

struct BranchFlowHessians {
    FlowSecondDerivs pf, qf, pt, qt;
};

BranchFlowHessians branch_flow_hessians(const Branch& br, double tap, double vm_i, double va_i,
                                        double vm_j, double va_j);

// Per-bus complex power mismatch of Kirchhoff's current law; flows are
// recomputed from (vm, va, tap), never read from the state.
std::vector<Complex> kcl_residual(const Network& net, const OperatingState& st);

struct PfOptions {
    double tol = 1e-10;  // max |complex mismatch|, p.u.
    int max_iter = 50;
    bool flat_start = false;
};

struct PfFailure {
    std::string reason;
    int iterations = 0;
};

struct PfResult {
    std::optional<OperatingState> state;
    PfFailure failure;
    int iterations = 0;
    bool ok() const { return state.has_value(); }
};

// Newton-Raphson power flow with fixed device settings. Buses holding an
// in-service generator are treated as PV (vm held at the setpoint), the
// slack bus provides the power balance, everything else is PQ. No
// reactive-limit switching: this validates a fully specified state.
//
//   controls:  per-branch tap and per-shunt cb to hold fixed
//   pg_set:    per-generator active injections (slack generators ignored)
//   vm_set:    per-bus voltage targets (used at PV and slack buses)
//   initial:   starting voltages; ignored (flat start) when null or when
//              opts.flat_start is set
PfResult solve_power_flow(const Network& net, const std::vector<double>& tap,
                          const std::vector<double>& cb, const std::vector<double>& pg_set,
                          const std::vector<double>& vm_set, const PfOptions& opts = {},
                          const OperatingState* initial = nullptr);

// Populates pf/qf/pt/qt of st from (vm, va, tap).
void refresh_flows(const Network& net, OperatingState& st);

// Diagnostic dump of per-bus complex mismatches: "bus,re,im" lines.
std::string residuals_csv(const Network& net, const OperatingState& st);

}  // namespace vvo
