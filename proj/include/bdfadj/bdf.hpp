#pragma once

#include "bdfadj/ode_model.hpp"
#include "bdfadj/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bdfadj {

inline constexpr int kMaxOrder = 6;

/// Coefficients of one BDF step
///   sum_{i=0}^{k} alpha[i] * y_{n+1-i} = h_n f(t_{n+1}, y_{n+1}).
struct BdfCoefficients {
    int order = 0;
    std::vector<double> alpha; // size order + 1, alpha[i] multiplies y_{n+1-i}

    double alpha0() const { return alpha.front(); }
    /// alpha_i, zero for i > order.
    double at(int i) const { return i <= order ? alpha[static_cast<std::size_t>(i)] : 0.0; }
};

/// Derivative of the i-th Lagrange basis polynomial over `nodes` at `t`.
/// Computed as the product-rule sum over the factors of the basis.
double lagrange_basis_derivative(std::span<const double> nodes, std::size_t i, double t);

/// Value of the i-th Lagrange basis polynomial over `nodes` at `t`.
double lagrange_basis(std::span<const double> nodes, std::size_t i, double t);

/// `nodes` are t_{n+1-k}, ..., t_n, t_{n+1} in increasing order (k + 1 values).
/// Returns alpha_i = h_n * dL_i/dt (t_{n+1}) where L_i is the basis polynomial
/// attached to t_{n+1-i}.
BdfCoefficients compute_coefficients(std::span<const double> nodes, int order);

/// Node/order sequence of an integration. Step n covers (t_n, t_{n+1}] and
/// uses order orders[n].
class TimeGrid {
public:
    TimeGrid() = default;
    TimeGrid(std::vector<double> nodes, std::vector<int> orders);

    std::size_t steps() const { return orders_.size(); }
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<int>& orders() const { return orders_; }
    double node(std::size_t n) const { return nodes_[n]; }
    int order(std::size_t n) const { return orders_[n]; }
    double stepsize(std::size_t n) const { return nodes_[n + 1] - nodes_[n]; }
    std::vector<double> stepsizes() const;

    /// Nodes t_{n+1-k_n}, ..., t_{n+1} used by step n.
    std::span<const double> stencil(std::size_t n) const;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;

private:
    std::vector<double> nodes_;
    std::vector<int> orders_;
};

struct NewtonStats {
    int iterations = 0;
    double residual = 0.0;  // max-norm of the BDF residual at the accepted iterate
    double tolerance = 0.0; // the tolerance the residual was required to meet
};

enum class IntegrationMode { nonadaptive, adaptive };

/// Frozen record of a forward integration: enough to replay the discrete
/// adjoint and to evaluate dense output without touching the problem again.
struct IntegrationTape {
    TimeGrid grid;
    std::vector<Vector> states;                // y_0 .. y_N
    std::vector<BdfCoefficients> coefficients; // one per step
    std::vector<NewtonStats> newton;           // one per step
    IntegrationMode mode = IntegrationMode::nonadaptive;
    int rejected_steps = 0;

    std::size_t steps() const { return grid.steps(); }
    int dimension() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
    double t_start() const { return grid.nodes().front(); }
    double t_final() const { return grid.nodes().back(); }
    const Vector& final_state() const { return states.back(); }
    int min_order() const;
    int max_order() const;
    int total_newton_iterations() const;
};

/// Residual sum_i alpha_i y_{n+1-i} - h_n f(t_{n+1}, y_{n+1}) of step n.
Vector step_residual(const OdeProblem& problem, const IntegrationTape& tape, std::size_t n);

struct NewtonOptions {
    double tolerance = 1e-12; // absolute, max-norm of the residual
    int max_iterations = 7;
    double refactor_rate = 0.25;
    /// Keep iterating with fresh Jacobians until the update stalls at
    /// roundoff level. Used for replays that must resolve the step exactly.
    bool polish = false;
};

enum class NewtonFailure { none, max_iterations, singular_matrix, non_finite };

struct NewtonResult {
    Vector y;
    int iterations = 0;
    double residual = 0.0;
    NewtonFailure failure = NewtonFailure::none;
    bool converged() const { return failure == NewtonFailure::none; }
};

/// LU factorization of alpha0 I - h f_y kept between Newton iterations and
/// steps. Invalidated whenever alpha0 or h changes.
class NewtonMatrixCache {
public:
    bool matches(double alpha0, double h) const {
        return valid_ && alpha0 == alpha0_ && h == h_;
    }
    bool factor(const Matrix& jac, double alpha0, double h);
    Vector solve(const Vector& rhs) const { return lu_.solve(rhs); }
    void invalidate() { valid_ = false; }
    int factorizations() const { return factorizations_; }

private:
    Eigen::PartialPivLU<Matrix> lu_;
    double alpha0_ = 0.0;
    double h_ = 0.0;
    bool valid_ = false;
    int factorizations_ = 0;
};

/// Solves one implicit BDF step for y_{n+1} by (modified) Newton iteration.
/// `history` holds y_n, y_{n-1}, ..., y_{n+1-k} (most recent first).
NewtonResult newton_bdf_step(const OdeProblem& problem, std::span<const Vector> history,
                             const BdfCoefficients& coefficients, double t_next, double h,
                             const Vector& predictor, const NewtonOptions& options,
                             NewtonMatrixCache* cache = nullptr);

/// Integrates on a prescribed grid (orders included) starting from
/// problem.initial_state(). Throws SolverError with the failing step index.
IntegrationTape integrate_on_grid(const OdeProblem& problem, const TimeGrid& grid,
                                  const NewtonOptions& options = {});

/// Constant order `order` and stepsize h after a self-start that fills the
/// first interval [t_s, t_s + h]. For order 2 the start is two implicit
/// Euler steps of length h/2.
TimeGrid nonadaptive_grid(double t_start, double t_final, int order, double h);

IntegrationTape integrate_nonadaptive(const OdeProblem& problem, int order, double h);

struct AdaptiveOptions {
    double rtol = 1e-6;
    double atol = 1e-8;
    int max_order = kMaxOrder;
    double safety = 0.9;
    double min_factor = 0.2;
    double max_factor = 2.5;
    double max_step = 0.0; // 0: the whole interval
    std::size_t max_steps = 1000000;
};

IntegrationTape integrate_adaptive(const OdeProblem& problem, const AdaptiveOptions& options);

/// Interpolation polynomial of the step covering t, evaluated at t.
Vector dense_eval(const IntegrationTape& tape, double t);

/// Extrapolates the interpolation polynomial of step n (through
/// y_{n+1-k_n}, ..., y_{n+1}) to time t.
Vector step_polynomial(const IntegrationTape& tape, std::size_t n, double t);

/// Checks sum alpha = 0 and sum alpha_i t_{n+1-i} = h_n for one step.
/// Returns the larger of the two scaled defects.
double coefficient_defect(const BdfCoefficients& c, std::span<const double> nodes);

} // namespace bdfadj
