#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vvo/metrics.hpp"
#include "vvo/network.hpp"
#include "vvo/nlp.hpp"

namespace vvo {

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ObjectiveConfig {
    double lambda_v = 1.0;
    double lambda_q = 1.0;
    // infinity pins every non-slack-bus generator at its reference dispatch
    double lambda_p = std::numeric_limits<double>::infinity();
    double lambda_c = 1.0;
    std::vector<double> v_ref;  // per bus; empty = 1.0 everywhere
    std::vector<double> q_ref;  // per generator; empty = 0.0 everywhere

    bool p_fixed() const { return std::isinf(lambda_p); }
};

struct ScenarioConfig {
    ObjectiveConfig objective;
    int tap_dev_steps = 16;  // max deviation from the reference tap position
    int cb_max_modules = 3;  // max active CB modules
};

// Per-device admissible sets after applying a scenario's range limits.
struct RestrictedSets {
    std::vector<std::vector<double>> tap;  // per branch
    std::vector<std::vector<double>> cb;   // per shunt
};

RestrictedSets scenario_sets(const Network& net, const ScenarioConfig& scenario);

struct DeviceTreatment {
    enum class Mode { Relaxed, Fixed } mode = Mode::Relaxed;
    std::vector<double> tap;  // per branch, used when fixed
    std::vector<double> cb;   // per shunt, used when fixed

    static DeviceTreatment relaxed() { return {Mode::Relaxed, {}, {}}; }
    static DeviceTreatment fixed(std::vector<double> tap, std::vector<double> cb) {
        return {Mode::Fixed, std::move(tap), std::move(cb)};
    }
};

// Variable/constraint layout of an assembled problem.
struct VvoLayout {
    int n_bus = 0, n_gen = 0;
    int va_off = 0, vm_off = 0, qg_off = 0;
    std::vector<int> pg_var;  // per generator, -1 = held at p_ref
    std::vector<int> qg_var;  // per generator, -1 = out of service
    std::vector<int> tap_var, cb_var;  // per branch / shunt, -1 = constant
    std::vector<double> tap_const, cb_const;
    int n_vars = 0;
    int row_slack = 0, row_p_off = 0, row_q_off = 0;
    std::vector<int> angle_row;    // per branch, -1 = unconstrained
    std::vector<int> thermal_row;  // per branch, first of two rows, -1 = unlimited

    std::vector<double> state_to_x(const OperatingState& st) const;
    OperatingState x_to_state(const Network& net, std::span<const double> x) const;
};

struct VvoProblem {
    NlpProblem nlp;
    VvoLayout layout;
};

// Assembles the continuous optimization problem: voltage/generation
// variables, power-balance equalities, angle and thermal inequalities, and
// the weighted deviation + cost objective. Device variables appear with
// interval bounds in relaxed mode and as constants in fixed mode.
VvoProblem build_vvo(const Network& net, const ObjectiveConfig& objective,
                     const RestrictedSets& sets, const DeviceTreatment& treatment);

struct ReferenceResult {
    Network net;  // input network with p_ref/q_ref overwritten
    OperatingState state;
    NlpSolution solution;
};

// Cost-only ACOPF with devices held at their reference setpoints; writes
// the optimal dispatch into p_ref/q_ref.
ReferenceResult solve_reference_acopf(const Network& net, const NlpOptions& opts = {});

// Nearest member of each restricted set; midpoint ties resolve toward the
// reference value, then toward the smaller candidate.
double round_to_set(double value, const std::vector<double>& set, double reference);
void round_devices(const std::vector<double>& frac_tap, const std::vector<double>& frac_cb,
                   const RestrictedSets& sets, const Network& net, std::vector<double>& tap_out,
                   std::vector<double>& cb_out);

struct StateCheck {
    double max_kcl = 0.0;
    double max_bound_violation = 0.0;
    std::string worst_bound;  // description of the worst violated bound
    bool sets_exact = true;
    std::string set_mismatch;
    bool ok(double tol) const {
        return max_kcl <= tol && max_bound_violation <= tol && sets_exact;
    }
};

StateCheck verify_state(const Network& net, const OperatingState& st, const RestrictedSets& sets);

struct PipelineResult {
    enum class Status { Success, NoSolutionFound } status = Status::NoSolutionFound;
    std::string failed_stage;  // "relaxed", "fixed" or "verify" on failure
    OperatingState resolved;
    std::vector<double> fractional_tap, fractional_cb;
    std::vector<double> rounded_tap, rounded_cb;
    MetricsReport metrics;  // valid on success
    double t_relax = -1.0, t_fixed = -1.0;
    NlpStatus relax_status = NlpStatus::NumericalFailure;
    NlpStatus fixed_status = NlpStatus::NumericalFailure;
    double relaxed_objective = 0.0, fixed_objective = 0.0;

    bool success() const { return status == Status::Success; }
};

std::string to_json(const PipelineResult& r, const ScenarioConfig& scenario);

// Relax - round - resolve. The relaxed solve warm-starts at the reference
// state; the fixed solve warm-starts at the relaxed solution with rounded
// devices substituted and is followed by an independent physics check.
PipelineResult run_pipeline(const Network& net, const OperatingState& reference,
                            const ScenarioConfig& scenario, const NlpOptions& opts = {});

struct EnumerationEntry {
    std::vector<double> tap, cb;
    NlpStatus status;
    double objective;
};

struct EnumerationResult {
    long long combinations = 0;
    std::optional<double> best_objective;
    std::vector<double> best_tap, best_cb;
    std::vector<EnumerationEntry> entries;
};

// Brute-force oracle: solves the fixed-device problem for every discrete
// combination in the restricted sets. Throws when the product of set sizes
// exceeds limit.
EnumerationResult enumerate_oracle(const Network& net, const OperatingState& reference,
                                   const ScenarioConfig& scenario, long long limit,
                                   const NlpOptions& opts = {});

}  // namespace vvo
