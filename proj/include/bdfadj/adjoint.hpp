#pragma once

#include "bdfadj/bdf.hpp"
#include "bdfadj/ode_model.hpp"

#include <functional>
#include <vector>

namespace bdfadj {

/// Discrete adjoints lambda_1 .. lambda_N of a frozen BDF run and the
/// derivative l = dJ(y_N)/dy_s.
struct DiscreteAdjoints {
    std::vector<Vector> lambdas; // lambdas[n - 1] holds lambda_n
    Vector gradient;

    std::size_t steps() const { return lambdas.size(); }
    const Vector& lambda(std::size_t n) const { return lambdas.at(n - 1); }
};

/// Reverse sweep over the tape. Starts from
///   (alpha_0^{(N-1)} I - h_{N-1} f_y^T(t_N, y_N)) lambda_N = J'(y_N)^T
/// and walks back, each step solving a d x d system with the transposed
/// Newton-type matrix of the corresponding forward step. Only tape data is
/// used; the forward Newton iteration is never re-run.
DiscreteAdjoints adjoint_sweep(const OdeProblem& problem, const IntegrationTape& tape);

/// l = -sum over steps n whose stencil reaches y_0 of alpha_{n+1}^{(n)} lambda_{n+1}.
Vector gradient_wrt_initial(const IntegrationTape& tape, const DiscreteAdjoints& adjoints);

/// Right-continuous step function with Lambda(t_s) = 0 and a jump of
/// h_{n-1} lambda_n at every t_n.
class WeakAdjoint {
public:
    WeakAdjoint() = default;
    WeakAdjoint(double t_start, std::vector<double> jump_times, std::vector<Vector> jumps);

    double t_start() const { return t_start_; }
    double t_final() const { return times_.back(); }
    int dimension() const { return jumps_.empty() ? 0 : static_cast<int>(jumps_.front().size()); }
    const std::vector<double>& jump_times() const { return times_; }
    const std::vector<Vector>& jumps() const { return jumps_; }

    /// Value at t; at a jump location the post-jump value is returned.
    Vector eval(double t) const;
    /// Value right after the n-th jump, n = 1..N (Lambda^h(t_n)).
    const Vector& value_at_node(std::size_t n) const { return cumulative_.at(n - 1); }

private:
    double t_start_ = 0.0;
    std::vector<double> times_;
    std::vector<Vector> jumps_;
    std::vector<Vector> cumulative_;
};

WeakAdjoint assemble_weak_adjoint(const IntegrationTape& tape, const DiscreteAdjoints& adjoints);

/// Riemann-Stieltjes pairing int g dLambda^h, per component:
/// sum_n jump_n (*) g(t_n).
Vector rs_pair(const WeakAdjoint& weak, const std::function<Vector(double)>& g);

/// Residuals of the adjoint recurrences, max-norm relative to
/// (1 + max_n |lambda_n|). Returns the worst over all n.
double adjoint_recurrence_defect(const OdeProblem& problem, const IntegrationTape& tape,
                                 const DiscreteAdjoints& adjoints);

} // namespace bdfadj
