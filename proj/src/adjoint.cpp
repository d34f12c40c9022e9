#include "bdfadj/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bdfadj {

namespace {

// Right-hand side of the reverse step for lambda_m: the terminal seed when
// m = N and the contributions of the later steps whose stencil reaches y_m.
Vector reverse_rhs(const OdeProblem& problem, const IntegrationTape& tape,
                   const std::vector<Vector>& lambdas, std::size_t m) {
    const std::size_t big_n = tape.steps();
    Vector rhs = Vector::Zero(tape.dimension());
    if (m == big_n) {
        rhs = problem.criterion_gradient(tape.final_state());
    }
    // Step n = m - 1 + i touches y_m through alpha_i^{(n)}, i >= 1.
    for (std::size_t i = 1; i <= static_cast<std::size_t>(kMaxOrder) && m - 1 + i < big_n; ++i) {
        const std::size_t n = m - 1 + i;
        const auto& c = tape.coefficients[n];
        if (static_cast<int>(i) <= c.order) {
            rhs -= c.alpha[i] * lambdas[n]; // lambdas[n] = lambda_{n+1}
        }
    }
    return rhs;
}

Matrix step_matrix_transposed(const OdeProblem& problem, const IntegrationTape& tape, std::size_t m) {
    const auto d = tape.dimension();
    const std::size_t n = m - 1;
    const Matrix jac = problem.jacobian(tape.grid.node(m), tape.states[m]);
    return tape.coefficients[n].alpha0() * Matrix::Identity(d, d) -
           tape.grid.stepsize(n) * jac.transpose();
}

} // namespace

DiscreteAdjoints adjoint_sweep(const OdeProblem& problem, const IntegrationTape& tape) {
    const std::size_t big_n = tape.steps();
    if (big_n == 0 || tape.states.size() != big_n + 1 || tape.coefficients.size() != big_n) {
        throw std::invalid_argument("adjoint_sweep: incomplete tape");
    }
    if (tape.dimension() != problem.dimension()) {
        throw std::invalid_argument("adjoint_sweep: tape and problem dimensions differ");
    }

    DiscreteAdjoints out;
    out.lambdas.assign(big_n, Vector::Zero(tape.dimension()));
    for (std::size_t m = big_n; m >= 1; --m) {
        const Matrix a = step_matrix_transposed(problem, tape, m);
        Eigen::PartialPivLU<Matrix> lu(a);
        if (!(lu.rcond() > 1e3 * std::numeric_limits<double>::epsilon())) {
            throw SolverError("adjoint_sweep: singular step matrix at t = " +
                                  std::to_string(tape.grid.node(m)) +
                                  " (stepsize too large for the stability condition)",
                              static_cast<long>(m - 1));
        }
        out.lambdas[m - 1] = lu.solve(reverse_rhs(problem, tape, out.lambdas, m));
    }
    out.gradient = gradient_wrt_initial(tape, out);
    return out;
}

Vector gradient_wrt_initial(const IntegrationTape& tape, const DiscreteAdjoints& adjoints) {
    Vector l = Vector::Zero(tape.dimension());
    const std::size_t limit = std::min<std::size_t>(tape.steps(), kMaxOrder);
    for (std::size_t n = 0; n < limit; ++n) {
        const auto& c = tape.coefficients[n];
        if (static_cast<std::size_t>(c.order) >= n + 1) {
            l -= c.alpha[n + 1] * adjoints.lambdas[n];
        }
    }
    return l;
}

WeakAdjoint::WeakAdjoint(double t_start, std::vector<double> jump_times, std::vector<Vector> jumps)
    : t_start_(t_start), times_(std::move(jump_times)), jumps_(std::move(jumps)) {
    if (times_.empty() || times_.size() != jumps_.size()) {
        throw std::invalid_argument("WeakAdjoint: one jump per location required");
    }
    double prev = t_start_;
    for (double t : times_) {
        if (!(t > prev)) {
            throw std::invalid_argument("WeakAdjoint: jump locations must increase past t_s");
        }
        prev = t;
    }
    cumulative_.reserve(jumps_.size());
    Vector acc = Vector::Zero(jumps_.front().size());
    for (const auto& j : jumps_) {
        acc += j;
        cumulative_.push_back(acc);
    }
}

Vector WeakAdjoint::eval(double t) const {
    if (!(t >= t_start_ && t <= t_final())) {
        throw std::out_of_range("WeakAdjoint::eval: t outside [t_s, t_f]");
    }
    // Number of jumps located at or before t.
    const auto count = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) -
                                                times_.begin());
    if (count == 0) {
        return Vector::Zero(dimension());
    }
    return cumulative_[count - 1];
}

WeakAdjoint assemble_weak_adjoint(const IntegrationTape& tape, const DiscreteAdjoints& adjoints) {
    if (adjoints.steps() != tape.steps()) {
        throw std::invalid_argument("assemble_weak_adjoint: tape and adjoints differ in length");
    }
    std::vector<double> times(tape.grid.nodes().begin() + 1, tape.grid.nodes().end());
    std::vector<Vector> jumps;
    jumps.reserve(tape.steps());
    for (std::size_t n = 1; n <= tape.steps(); ++n) {
        jumps.push_back(tape.grid.stepsize(n - 1) * adjoints.lambda(n));
    }
    return WeakAdjoint(tape.t_start(), std::move(times), std::move(jumps));
}

Vector rs_pair(const WeakAdjoint& weak, const std::function<Vector(double)>& g) {
    Vector sum = Vector::Zero(weak.dimension());
    for (std::size_t n = 0; n < weak.jumps().size(); ++n) {
        sum += weak.jumps()[n].cwiseProduct(g(weak.jump_times()[n]));
    }
    return sum;
}

double adjoint_recurrence_defect(const OdeProblem& problem, const IntegrationTape& tape,
                                 const DiscreteAdjoints& adjoints) {
    double scale = 1.0;
    for (const auto& l : adjoints.lambdas) {
        scale = std::max(scale, 1.0 + max_norm(l));
    }
    double worst = 0.0;
    for (std::size_t m = 1; m <= tape.steps(); ++m) {
        const Vector r = step_matrix_transposed(problem, tape, m) * adjoints.lambda(m) -
                         reverse_rhs(problem, tape, adjoints.lambdas, m);
        worst = std::max(worst, max_norm(r) / scale);
    }
    return worst;
}

} // namespace bdfadj
