#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vvo {

// Smooth continuous nonlinear program
//
//   min f(x)   s.t.  c_eq(x) = 0,   lb <= c_ineq(x) <= ub,   xl <= x <= xu
//
// First derivatives are exact and supplied by callbacks; sparsity patterns
// are fixed at construction. Infinite bounds use +/- kInf.
inline constexpr double kInf = 1e20;

struct NlpProblem {
    int n_vars = 0;
    std::vector<double> lower, upper;  // size n_vars

    std::function<double(std::span<const double>)> objective;
    std::function<void(std::span<const double>, std::span<double>)> gradient;  // dense, n_vars

    int n_eq = 0;
    std::vector<std::pair<int, int>> eq_pattern;  // (row, col) nonzeros
    std::function<void(std::span<const double>, std::span<double>)> eval_eq;
    std::function<void(std::span<const double>, std::span<double>)> eval_eq_jac;  // pattern order

    int n_ineq = 0;
    std::vector<double> ineq_lower, ineq_upper;
    std::vector<std::pair<int, int>> ineq_pattern;
    std::function<void(std::span<const double>, std::span<double>)> eval_ineq;
    std::function<void(std::span<const double>, std::span<double>)> eval_ineq_jac;

    // Optional exact Hessian of obj_factor*f + w_eq.c_eq + w_ineq.c_ineq,
    // lower triangle, fixed pattern, duplicates summed. When provided the
    // solver takes full Newton steps; otherwise it falls back to a damped
    // limited-memory BFGS approximation of the Lagrangian Hessian.
    std::vector<std::pair<int, int>> lag_hess_pattern;
    std::function<void(std::span<const double> x, double obj_factor, std::span<const double> w_eq,
                       std::span<const double> w_ineq, std::span<double> values)>
        eval_lag_hess;
};

enum class NlpStatus { LocallyOptimal, MaxIterations, InfeasibleDetected, NumericalFailure };

const char* to_string(NlpStatus s);

struct KktResiduals {
    double stationarity = 0.0;    // scaled by 1 + |multipliers|_inf
    double primal = 0.0;          // unscaled constraint violation
    double complementarity = 0.0; // scaled
    double max() const;
};

struct IterationInfo {
    int iter;
    double objective;
    double primal_inf;
    double dual_inf;
    double mu;
    double step_primal;
    double step_dual;
};

struct NlpOptions {
    double tol = 1e-6;
    int max_iter = 3000;
    double mu_init = 0.1;
    int lbfgs_memory = 25;
    std::function<void(const IterationInfo&)> log;  // optional per-iteration line
};

struct NlpSolution {
    std::vector<double> x;
    NlpStatus status = NlpStatus::NumericalFailure;
    KktResiduals kkt;
    double objective = 0.0;
    int iterations = 0;
    double wall_time_s = 0.0;
    // multipliers, usable to warm-start a related solve
    std::vector<double> y_eq, y_ineq, z_lower, z_upper;
};

struct WarmStart {
    std::vector<double> y_eq, y_ineq;  // either may be empty
};

NlpSolution solve_nlp(const NlpProblem& problem, std::span<const double> start,
                      const NlpOptions& opts = {}, const WarmStart* warm = nullptr);

struct DerivCheckResult {
    double max_rel_error = 0.0;
    std::string where;  // human-readable location of the worst entry
};

// Central finite differences over every declared nonzero and the gradient.
DerivCheckResult check_derivatives(const NlpProblem& problem, std::span<const double> point);

}  // namespace vvo
