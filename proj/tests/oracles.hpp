#pragma once

#include "bdfadj/bdf.hpp"
#include "bdfadj/ode_model.hpp"

#include <functional>

namespace oracle {

using bdfadj::Matrix;
using bdfadj::Vector;

/// Central differences of J(y_N) with respect to y_s. Each perturbed run
/// replays the frozen grid (nodes and orders) of `tape` with Newton iterated
/// to roundoff, so the result differentiates the discrete map itself.
Vector fd_gradient(const bdfadj::OdeProblem& problem, const bdfadj::IntegrationTape& tape,
                   double relative_step = 1e-6);

/// Root of g on [lo, hi] by plain bisection; g(lo) and g(hi) must differ in sign.
double bisect(const std::function<double(double)>& g, double lo, double hi, int iterations = 200);

/// One BDF step of the Catenary system solved by bisection on the scalar
/// equation of the second component; the first component then follows
/// linearly. `history` is y_n, y_{n-1}, ... (most recent first).
Vector catenary_step_by_bisection(double p, const bdfadj::BdfCoefficients& c,
                                  const std::vector<Vector>& history, double h);

/// Adaptive Gauss-Kronrod quadrature of a scalar integrand.
double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12);

/// Relative error |a - b| / max(|b|, floor), in the max norm.
double relative_error(const Vector& a, const Vector& b, double floor = 1e-300);

} // namespace oracle
