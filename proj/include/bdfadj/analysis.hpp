#pragma once

#include "bdfadj/adjoint.hpp"
#include "bdfadj/bdf.hpp"
#include "bdfadj/ode_model.hpp"

#include <string>
#include <vector>

namespace bdfadj {

/// Residuals of the assembled discretized optimality conditions.
struct KktResidualReport {
    double nominal_residual = 0.0; // max-norm of (A (x) I) Y + s - F
    double adjoint_residual = 0.0; // max-norm of the transposed system at (lambda, l)
    double initial_residual = 0.0; // |y_0 - y_s|
    double gradient_residual = 0.0; // row of the initial-value multiplier

    // Per-step nominal check: residual of step n within 10 * its Newton tolerance.
    bool nominal_within_tolerance = true;
    std::size_t worst_nominal_step = 0;
    double worst_nominal_ratio = 0.0; // residual_n / (10 * tol_n), worst over n
    double adjoint_threshold = 0.0;   // 1e-9 * (1 + max |lambda_n|)
    bool assembled = false;           // true when the sparse matrices were formed

    bool adjoint_within_tolerance() const {
        return adjoint_residual <= adjoint_threshold && gradient_residual <= adjoint_threshold;
    }
    bool passed() const {
        return nominal_within_tolerance && adjoint_within_tolerance() && initial_residual == 0.0;
    }
};

/// Largest d*N for which A (x) I is materialized as a sparse matrix.
inline constexpr std::size_t kAssembleLimit = 20000;

KktResidualReport verify_kkt(const OdeProblem& problem, const IntegrationTape& tape,
                             const DiscreteAdjoints& adjoints);

/// Largest coefficient_defect over the tape's steps.
double max_coefficient_defect(const IntegrationTape& tape);

/// Errors against a sweep parameter (stepsize or tolerance), one row per run.
struct ConvergenceTable {
    std::vector<double> h;
    std::vector<double> error;

    void add(double h_value, double error_value);
    std::size_t rows() const { return h.size(); }
    /// log(e_{i-1}/e_i) / log(h_{i-1}/h_i) for i >= 1. NaN for i = 0 or when
    /// either error is not a positive finite number.
    double observed_order(std::size_t i) const;
};

/// Least-squares slope of log(error) against log(h). Requires at least three
/// rows with strictly decreasing h. Rows with zero or non-finite error are
/// excluded and reported in `warnings`; returns NaN when fewer than two rows remain.
double fit_order(const ConvergenceTable& table, std::vector<std::string>* warnings = nullptr);

/// |Lambda(t) - Lambda^h(t)|_2.
double pointwise_error(const WeakAdjoint& weak, const AnalyticReference& reference, double t);

/// h * (|lambda(t_0)| + sum_n |lambda(t_n) - lambda_n| + |lambda(t_N)|), per
/// component, maximized over components. lambda_n is recovered from the jumps.
/// The grid must be equidistant; a self-start ramp that exactly fills the
/// first interval is allowed and weighted by its own stepsizes.
double dual_norm_bound(const WeakAdjoint& weak, const AnalyticReference& reference,
                       const TimeGrid& grid);

} // namespace bdfadj
