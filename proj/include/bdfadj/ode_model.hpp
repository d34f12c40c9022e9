#pragma once

#include "bdfadj/types.hpp"

#include <functional>
#include <string>
#include <utility>

namespace bdfadj {

/// Initial value problem y' = f(t, y), y(t_s) = y_s on [t_s, t_f] together
/// with a criterion J evaluated at the final state.
///
/// Instances are immutable after construction and may be shared between
/// threads; all callbacks must be pure.
class OdeProblem {
public:
    using Rhs = std::function<Vector(double, const Vector&)>;
    using Jacobian = std::function<Matrix(double, const Vector&)>;
    using Criterion = std::function<double(const Vector&)>;
    using CriterionGradient = std::function<Vector(const Vector&)>;

    OdeProblem(std::string name, Rhs rhs, Jacobian jacobian, Criterion criterion,
               CriterionGradient criterion_gradient, double t_start, double t_final,
               Vector y_start);

    const std::string& name() const { return name_; }
    int dimension() const { return static_cast<int>(y_start_.size()); }
    double t_start() const { return t_start_; }
    double t_final() const { return t_final_; }
    const Vector& initial_state() const { return y_start_; }

    Vector rhs(double t, const Vector& y) const { return rhs_(t, y); }
    Matrix jacobian(double t, const Vector& y) const { return jacobian_(t, y); }
    double criterion(const Vector& y) const { return criterion_(y); }
    /// J'(y) as a column vector (i.e. J'(y)^T).
    Vector criterion_gradient(const Vector& y) const { return criterion_gradient_(y); }

    /// Same dynamics and criterion, different initial state.
    OdeProblem with_initial_state(Vector y_start) const;

private:
    std::string name_;
    Rhs rhs_;
    Jacobian jacobian_;
    Criterion criterion_;
    CriterionGradient criterion_gradient_;
    double t_start_;
    double t_final_;
    Vector y_start_;
};

/// Closed-form (or oracle-grade) solutions attached to a test problem.
struct AnalyticReference {
    std::function<Vector(double)> nominal;           // y(t)
    std::function<Vector(double)> classical_adjoint; // lambda(t)
    std::function<Vector(double)> weak_adjoint;      // Lambda(t) = int_{t_s}^t lambda
};

struct ProblemWithReference {
    OdeProblem problem;
    AnalyticReference reference;
};

/// y1' = y2, y2' = p sqrt(1 + y2^2) with J(y) = y1 and
/// y(t) = [B + cosh(p t + A)/p, sinh(p t + A)] on [0, t_f].
ProblemWithReference catenary_problem(double p, double shift_a, double t_final,
                                      double shift_b = 0.0);

/// y' = a y, J(y) = c^T y. The weak adjoint is integrated numerically.
ProblemWithReference linear_test_problem(const Matrix& a, const Vector& c, const Vector& y_start,
                                         double t_start, double t_final);

/// Result of a consistency probe: the worst relative deviation seen.
struct ConsistencyCheck {
    double worst = 0.0;
    double at_time = 0.0;
    bool passed(double tol) const { return worst <= tol; }
};

/// Compares f_y and J' against central differences at `probes` points along
/// the nominal reference trajectory (or y_s when no reference is supplied).
ConsistencyCheck check_jacobian(const OdeProblem& problem, const AnalyticReference* reference,
                                int probes = 100);
ConsistencyCheck check_criterion_gradient(const OdeProblem& problem,
                                          const AnalyticReference* reference, int probes = 100);

/// |y' - f(t, y)| along the nominal reference, y' by central differences.
ConsistencyCheck check_nominal_residual(const OdeProblem& problem,
                                        const AnalyticReference& reference, int probes = 100);
/// |d/dt Lambda - lambda| along the reference, derivative by central differences.
ConsistencyCheck check_weak_adjoint_derivative(const OdeProblem& problem,
                                               const AnalyticReference& reference,
                                               int probes = 100);

} // namespace bdfadj
