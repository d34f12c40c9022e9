#include "bdfadj/bdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bdfadj {

namespace {
constexpr double kEps = std::numeric_limits<double>::epsilon();
}

double lagrange_basis(std::span<const double> nodes, std::size_t i, double t) {
    double value = 1.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (j != i) {
            value *= (t - nodes[j]) / (nodes[i] - nodes[j]);
        }
    }
    return value;
}

double lagrange_basis_derivative(std::span<const double> nodes, std::size_t i, double t) {
    double sum = 0.0;
    for (std::size_t m = 0; m < nodes.size(); ++m) {
        if (m == i) {
            continue;
        }
        double term = 1.0 / (nodes[i] - nodes[m]);
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            if (j != i && j != m) {
                term *= (t - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        sum += term;
    }
    return sum;
}

BdfCoefficients compute_coefficients(std::span<const double> nodes, int order) {
    if (order < 1 || order > kMaxOrder) {
        throw std::invalid_argument("compute_coefficients: order must lie in [1, 6]");
    }
    if (nodes.size() != static_cast<std::size_t>(order) + 1) {
        throw std::invalid_argument("compute_coefficients: expected order + 1 nodes");
    }
    for (std::size_t j = 1; j < nodes.size(); ++j) {
        if (!(nodes[j] > nodes[j - 1])) {
            throw std::invalid_argument(
                "compute_coefficients: nodes must be strictly increasing (repeated node?)");
        }
    }
    const std::size_t k = static_cast<std::size_t>(order);
    const double t_next = nodes[k];
    const double h = nodes[k] - nodes[k - 1];

    BdfCoefficients c;
    c.order = order;
    c.alpha.resize(k + 1);
    for (std::size_t i = 0; i <= k; ++i) {
        // alpha_i belongs to t_{n+1-i}, which sits at position k - i.
        c.alpha[i] = h * lagrange_basis_derivative(nodes, k - i, t_next);
    }
    return c;
}

double coefficient_defect(const BdfCoefficients& c, std::span<const double> nodes) {
    const std::size_t k = static_cast<std::size_t>(c.order);
    double max_alpha = 0.0;
    double sum = 0.0;
    double moment = 0.0;
    const double t_next = nodes[k];
    const double h = nodes[k] - nodes[k - 1];
    for (std::size_t i = 0; i <= k; ++i) {
        max_alpha = std::max(max_alpha, std::abs(c.alpha[i]));
        sum += c.alpha[i];
        // Shifted to t_{n+1}; valid because the alphas sum to zero.
        moment += c.alpha[i] * (nodes[k - i] - t_next);
    }
    const double defect_sum = std::abs(sum) / max_alpha;
    const double defect_identity = std::abs(moment - h) / (std::abs(h) * max_alpha);
    return std::max(defect_sum, defect_identity);
}

TimeGrid::TimeGrid(std::vector<double> nodes, std::vector<int> orders)
    : nodes_(std::move(nodes)), orders_(std::move(orders)) {
    validate();
}

std::vector<double> TimeGrid::stepsizes() const {
    std::vector<double> h(steps());
    for (std::size_t n = 0; n < steps(); ++n) {
        h[n] = stepsize(n);
    }
    return h;
}

std::span<const double> TimeGrid::stencil(std::size_t n) const {
    const std::size_t k = static_cast<std::size_t>(orders_[n]);
    return std::span<const double>(nodes_).subspan(n + 1 - k, k + 1);
}

void TimeGrid::validate() const {
    if (nodes_.size() < 2) {
        throw std::invalid_argument("TimeGrid: need at least one step");
    }
    if (orders_.size() + 1 != nodes_.size()) {
        throw std::invalid_argument("TimeGrid: one order per step required");
    }
    for (std::size_t n = 0; n < orders_.size(); ++n) {
        if (!(nodes_[n + 1] > nodes_[n])) {
            throw std::invalid_argument("TimeGrid: nodes must be strictly increasing");
        }
        const int cap = static_cast<int>(std::min<std::size_t>(n + 1, kMaxOrder));
        if (orders_[n] < 1 || orders_[n] > cap) {
            throw std::invalid_argument("TimeGrid: order of step " + std::to_string(n) +
                                        " exceeds the available history");
        }
    }
}

int IntegrationTape::min_order() const {
    const auto& o = grid.orders();
    return o.empty() ? 0 : *std::min_element(o.begin(), o.end());
}

int IntegrationTape::max_order() const {
    const auto& o = grid.orders();
    return o.empty() ? 0 : *std::max_element(o.begin(), o.end());
}

int IntegrationTape::total_newton_iterations() const {
    int total = 0;
    for (const auto& s : newton) {
        total += s.iterations;
    }
    return total;
}

Vector step_residual(const OdeProblem& problem, const IntegrationTape& tape, std::size_t n) {
    const auto& c = tape.coefficients[n];
    Vector r = Vector::Zero(tape.dimension());
    for (int i = 0; i <= c.order; ++i) {
        r += c.alpha[static_cast<std::size_t>(i)] * tape.states[n + 1 - static_cast<std::size_t>(i)];
    }
    r -= tape.grid.stepsize(n) * problem.rhs(tape.grid.node(n + 1), tape.states[n + 1]);
    return r;
}

bool NewtonMatrixCache::factor(const Matrix& jac, double alpha0, double h) {
    const auto d = jac.rows();
    Matrix m = alpha0 * Matrix::Identity(d, d) - h * jac;
    if (!m.allFinite()) {
        valid_ = false;
        return false;
    }
    lu_.compute(m);
    ++factorizations_;
    const double rcond = lu_.rcond();
    if (!(rcond > 1e3 * kEps)) {
        valid_ = false;
        return false;
    }
    alpha0_ = alpha0;
    h_ = h;
    valid_ = true;
    return true;
}

NewtonResult newton_bdf_step(const OdeProblem& problem, std::span<const Vector> history,
                             const BdfCoefficients& coefficients, double t_next, double h,
                             const Vector& predictor, const NewtonOptions& options,
                             NewtonMatrixCache* cache) {
    const std::size_t k = static_cast<std::size_t>(coefficients.order);
    if (history.size() < k) {
        throw std::invalid_argument("newton_bdf_step: history shorter than the order");
    }
    Vector base = Vector::Zero(predictor.size());
    for (std::size_t i = 1; i <= k; ++i) {
        base += coefficients.alpha[i] * history[i - 1];
    }
    const double alpha0 = coefficients.alpha0();
    auto residual = [&](const Vector& y) -> Vector {
        return base + alpha0 * y - h * problem.rhs(t_next, y);
    };

    NewtonResult out;
    out.y = predictor;
    Vector res = residual(out.y);
    double norm = max_norm(res);
    if (!std::isfinite(norm)) {
        out.failure = NewtonFailure::non_finite;
        out.residual = norm;
        return out;
    }
    out.residual = norm;
    if (norm <= options.tolerance && !options.polish) {
        return out;
    }

    NewtonMatrixCache local;
    NewtonMatrixCache& lu = cache ? *cache : local;
    const int max_iter = options.polish ? std::max(options.max_iterations, 30) : options.max_iterations;

    for (int it = 0; it < max_iter; ++it) {
        if (!lu.matches(alpha0, h)) {
            if (!lu.factor(problem.jacobian(t_next, out.y), alpha0, h)) {
                out.failure = NewtonFailure::singular_matrix;
                return out;
            }
        }
        const Vector delta = lu.solve(-res);
        out.y += delta;
        ++out.iterations;
        res = residual(out.y);
        const double next = max_norm(res);
        out.residual = next;
        if (!std::isfinite(next) || !out.y.allFinite()) {
            out.failure = NewtonFailure::non_finite;
            lu.invalidate();
            return out;
        }
        if (options.polish) {
            lu.invalidate();
            const bool stalled = max_norm(delta) <= 4.0 * kEps * max_norm(out.y) || next >= norm;
            if (next <= options.tolerance && (stalled || next == 0.0)) {
                return out;
            }
        } else if (next <= options.tolerance) {
            return out;
        }
        // Refresh the iteration matrix when it contracts too slowly or could
        // not reach the tolerance within the remaining iterations.
        const double rate = next / norm;
        const int remaining = max_iter - it - 1;
        if (rate > options.refactor_rate ||
            next * std::pow(rate, std::max(remaining, 0)) > options.tolerance) {
            lu.invalidate();
        }
        norm = next;
    }
    if (options.polish && out.residual <= options.tolerance) {
        return out;
    }
    out.failure = NewtonFailure::max_iterations;
    lu.invalidate();
    return out;
}

Vector step_polynomial(const IntegrationTape& tape, std::size_t n, double t) {
    const auto nodes = tape.grid.stencil(n);
    const std::size_t k = nodes.size() - 1;
    Vector y = Vector::Zero(tape.dimension());
    for (std::size_t j = 0; j <= k; ++j) {
        y += lagrange_basis(nodes, j, t) * tape.states[n + 1 - k + j];
    }
    return y;
}

namespace {

const char* describe(NewtonFailure f) {
    switch (f) {
    case NewtonFailure::max_iterations: return "Newton iteration did not converge";
    case NewtonFailure::singular_matrix: return "singular Newton iteration matrix";
    case NewtonFailure::non_finite: return "non-finite Newton iterate";
    case NewtonFailure::none: break;
    }
    return "ok";
}

// y_n, y_{n-1}, ..., y_{n+1-k}
std::vector<Vector> history_of(const std::vector<Vector>& states, std::size_t n, int k) {
    std::vector<Vector> h;
    h.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        h.push_back(states[n - static_cast<std::size_t>(i)]);
    }
    return h;
}

Vector predict(const IntegrationTape& tape, std::size_t n, double t_next) {
    if (n == 0) {
        return tape.states.front();
    }
    return step_polynomial(tape, n - 1, t_next);
}

double roundoff_floor(const BdfCoefficients& c, std::span<const Vector> history, const Vector& y) {
    double scale = std::abs(c.alpha0()) * max_norm(y);
    for (std::size_t i = 1; i < c.alpha.size(); ++i) {
        scale += std::abs(c.alpha[i]) * max_norm(history[i - 1]);
    }
    return 32.0 * kEps * scale;
}

} // namespace

IntegrationTape integrate_on_grid(const OdeProblem& problem, const TimeGrid& grid,
                                  const NewtonOptions& options) {
    grid.validate();
    IntegrationTape tape;
    tape.grid = grid;
    tape.mode = IntegrationMode::nonadaptive;
    tape.states.reserve(grid.steps() + 1);
    tape.states.push_back(problem.initial_state());

    NewtonMatrixCache cache;
    for (std::size_t n = 0; n < grid.steps(); ++n) {
        const int k = grid.order(n);
        const auto coeffs = compute_coefficients(grid.stencil(n), k);
        const auto history = history_of(tape.states, n, k);
        const double t_next = grid.node(n + 1);
        const Vector pred = predict(tape, n, t_next);
        const auto result = newton_bdf_step(problem, history, coeffs, t_next, grid.stepsize(n),
                                            pred, options, &cache);
        if (!result.converged()) {
            throw SolverError(std::string(describe(result.failure)) + " at step " +
                                  std::to_string(n) + " (t = " + std::to_string(t_next) +
                                  ", residual " + std::to_string(result.residual) + ")",
                              static_cast<long>(n));
        }
        tape.states.push_back(result.y);
        tape.coefficients.push_back(coeffs);
        tape.newton.push_back({result.iterations, result.residual, options.tolerance});
    }
    return tape;
}

TimeGrid nonadaptive_grid(double t_start, double t_final, int order, double h) {
    if (order < 1 || order > kMaxOrder) {
        throw std::invalid_argument("nonadaptive: order must lie in [1, 6]");
    }
    if (!(h > 0.0) || !std::isfinite(h)) {
        throw std::invalid_argument("nonadaptive: stepsize must be positive");
    }
    const double span = t_final - t_start;
    const double ratio = span / h;
    const double rounded = std::round(ratio);
    if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
        throw std::invalid_argument("nonadaptive: (t_f - t_s)/h must be an integer");
    }
    const auto intervals = static_cast<std::size_t>(rounded);
    if (intervals < static_cast<std::size_t>(order)) {
        throw std::invalid_argument("nonadaptive: need at least `order` intervals of length h");
    }

    std::vector<double> nodes{t_start};
    std::vector<int> orders;
    if (order == 1) {
        for (std::size_t j = 1; j <= intervals; ++j) {
            nodes.push_back(t_start + static_cast<double>(j) * h);
            orders.push_back(1);
        }
    } else {
        // Self-start inside [t_s, t_s + h]: one implicit Euler step of
        // h/2^(k-1), then steps h/2^(k-1), h/2^(k-2), ..., h/2 with ascending
        // order capped at k - 1. For k = 2 this is two Euler steps of h/2.
        double fraction = std::ldexp(1.0, 1 - order);
        nodes.push_back(t_start + fraction * h);
        orders.push_back(1);
        for (int j = 1; j <= order - 1; ++j) {
            fraction += std::ldexp(1.0, j - order);
            nodes.push_back(t_start + fraction * h);
            orders.push_back(std::min(j + 1, order - 1));
        }
        for (std::size_t j = 2; j <= intervals; ++j) {
            nodes.push_back(t_start + static_cast<double>(j) * h);
            orders.push_back(order);
        }
    }
    nodes.back() = t_final;
    return TimeGrid(std::move(nodes), std::move(orders));
}

IntegrationTape integrate_nonadaptive(const OdeProblem& problem, int order, double h) {
    const TimeGrid grid = nonadaptive_grid(problem.t_start(), problem.t_final(), order, h);
    NewtonOptions options;
    options.tolerance = 1e-12;
    return integrate_on_grid(problem, grid, options);
}

namespace {

// y_{n+1} - P_q(t_{n+1}), P_q the degree-q interpolant through y_n, ...,
// y_{n-q}. When the history is one value short the derivative f(t_0, y_0)
// stands in as a confluent node at t_0.
Vector extrapolation_gap(const std::vector<double>& nodes, const std::vector<Vector>& states,
                         const Vector& f0, double t_next, const Vector& y_next, int q) {
    const std::size_t n = nodes.size() - 1;
    const std::size_t count = static_cast<std::size_t>(q) + 1;
    std::vector<double> z;
    std::vector<Vector> table;
    for (std::size_t j = 0; j < count; ++j) {
        if (j <= n) {
            z.push_back(nodes[n - j]);
            table.push_back(states[n - j]);
        } else {
            z.push_back(nodes[0]);
            table.push_back(states[0]);
        }
    }
    // Newton divided differences, in place; table[0] ends as the leading one.
    std::vector<Vector> coeff{table[0]};
    for (std::size_t m = 1; m < count; ++m) {
        for (std::size_t j = 0; j + m < count; ++j) {
            const double dz = z[j + m] - z[j];
            if (dz == 0.0) {
                table[j] = f0;
            } else {
                table[j] = (table[j + 1] - table[j]) / dz;
            }
        }
        coeff.push_back(table[0]);
    }
    Vector p = coeff.back();
    for (std::size_t m = count - 1; m-- > 0;) {
        p = coeff[m] + (t_next - z[m]) * p;
    }
    return y_next - p;
}

double weighted_norm(const Vector& e, const Vector& y_old, const Vector& y_new, double rtol,
                     double atol) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        const double w = rtol * std::max(std::abs(y_old(i)), std::abs(y_new(i))) + atol;
        worst = std::max(worst, std::abs(e(i)) / w);
    }
    return worst;
}

double step_factor(double err, int q, double safety, double max_factor) {
    if (err <= 0.0) {
        return max_factor;
    }
    return safety * std::pow(err, -1.0 / (q + 1));
}

} // namespace

IntegrationTape integrate_adaptive(const OdeProblem& problem, const AdaptiveOptions& options) {
    if (!(options.rtol > 0.0) || !(options.atol > 0.0)) {
        throw std::invalid_argument("adaptive: rtol and atol must be positive");
    }
    if (options.max_order < 1 || options.max_order > kMaxOrder) {
        throw std::invalid_argument("adaptive: max_order must lie in [1, 6]");
    }
    const double ts = problem.t_start();
    const double tf = problem.t_final();
    const double span = tf - ts;
    const double hmax = options.max_step > 0.0 ? std::min(options.max_step, span) : span;
    const double rtol = options.rtol;
    const double atol = options.atol;

    IntegrationTape tape;
    tape.mode = IntegrationMode::adaptive;
    std::vector<double> nodes{ts};
    std::vector<int> orders;
    tape.states.push_back(problem.initial_state());

    const Vector y0 = tape.states.front();
    const Vector f0 = problem.rhs(ts, y0);
    double h = 0.0;
    {
        Vector w = (rtol * y0.cwiseAbs()).array() + atol;
        const double d0 = (y0.cwiseAbs().array() / w.array()).maxCoeff();
        const double d1 = (f0.cwiseAbs().array() / w.array()).maxCoeff();
        h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-2 * span : 1e-2 * d0 / d1;
        h = std::min(h, hmax);
    }

    int k = 1;
    int steps_at_order = 0;
    int consecutive_failures = 0;
    NewtonMatrixCache cache;
    double t = ts;

    while (t < tf) {
        const std::size_t n = orders.size();
        if (n >= options.max_steps) {
            throw SolverError("adaptive: maximum number of steps exceeded", static_cast<long>(n));
        }
        double t_next = t + h;
        if (t_next >= tf - 0.1 * h) {
            t_next = tf;
        }
        const double hh = t_next - t;
        if (hh < 1e3 * kEps * std::max(std::abs(t), std::abs(tf))) {
            throw SolverError("adaptive: stepsize underflow at t = " + std::to_string(t),
                              static_cast<long>(n));
        }

        std::vector<double> stencil(nodes.end() - k, nodes.end());
        stencil.push_back(t_next);
        const auto coeffs = compute_coefficients(stencil, k);
        const auto history = history_of(tape.states, n, k);

        Vector pred;
        if (n == 0) {
            pred = y0;
        } else {
            // Previous step's interpolation polynomial extrapolated to t_next.
            const auto prev = std::span<const double>(nodes).subspan(
                n - static_cast<std::size_t>(orders.back()), static_cast<std::size_t>(orders.back()) + 1);
            pred = Vector::Zero(y0.size());
            for (std::size_t j = 0; j < prev.size(); ++j) {
                pred += lagrange_basis(prev, j, t_next) * tape.states[n + 1 - prev.size() + j];
            }
        }

        NewtonOptions newton;
        newton.tolerance = std::max(1e-2 * std::min(rtol, hh * hh) * std::max(max_norm(pred), atol / rtol),
                                    roundoff_floor(coeffs, history, pred));
        const auto result = newton_bdf_step(problem, history, coeffs, t_next, hh, pred, newton, &cache);
        if (!result.converged()) {
            cache.invalidate();
            h = 0.5 * hh;
            ++tape.rejected_steps;
            ++consecutive_failures;
            continue;
        }

        const Vector& y_new = result.y;
        const Vector y_old = tape.states.back();
        auto estimate = [&](int q) {
            const Vector gap = extrapolation_gap(nodes, tape.states, f0, t_next, y_new, q);
            // Variable-step error constant h_n / (t_{n+1} - t_{n-q}); 1/(q+1) on uniform grids.
            const std::size_t oldest = n >= static_cast<std::size_t>(q) ? n - static_cast<std::size_t>(q) : 0;
            return weighted_norm(gap, y_old, y_new, rtol, atol) * hh / (t_next - nodes[oldest]);
        };
        const double err = estimate(k);
        if (err > 1.0) {
            double factor = step_factor(err, k, options.safety, 1.0);
            if (k > 1) {
                const double lower = step_factor(estimate(k - 1), k - 1, options.safety, 1.0);
                if (lower > factor) {
                    factor = lower;
                    --k;
                    steps_at_order = 0;
                }
            }
            ++tape.rejected_steps;
            ++consecutive_failures;
            if (consecutive_failures >= 3) {
                factor = std::min(factor, 0.25);
            }
            h = hh * std::clamp(factor, options.min_factor, 0.9);
            continue;
        }

        // Neighbouring-order estimates must be taken before y_new joins the history.
        const double err_lower = k > 1 ? estimate(k - 1) : 0.0;
        const bool may_raise = k < options.max_order && steps_at_order + 1 >= k + 1 &&
                               static_cast<std::size_t>(k + 1) <= n + 1;
        const double err_higher = may_raise ? estimate(k + 1) : 0.0;

        nodes.push_back(t_next);
        orders.push_back(k);
        tape.states.push_back(y_new);
        tape.coefficients.push_back(coeffs);
        tape.newton.push_back({result.iterations, result.residual, newton.tolerance});
        t = t_next;
        consecutive_failures = 0;
        ++steps_at_order;
        if (t >= tf) {
            break;
        }

        // Order and stepsize for the next step.
        int best_order = k;
        double best = step_factor(err, k, options.safety, options.max_factor);
        if (k > 1) {
            const double lower = step_factor(err_lower, k - 1, options.safety, options.max_factor);
            if (lower > best) {
                best = lower;
                best_order = k - 1;
            }
        }
        if (may_raise) {
            const double higher = step_factor(err_higher, k + 1, options.safety, options.max_factor);
            if (higher > best) {
                best = higher;
                best_order = k + 1;
            }
        }
        if (best_order != k) {
            k = best_order;
            steps_at_order = 0;
        }
        double factor = std::clamp(best, options.min_factor, options.max_factor);
        if (factor >= 1.0 && factor < 1.2) {
            factor = 1.0;
        }
        h = std::min(hh * factor, hmax);
    }

    nodes.back() = tf;
    tape.grid = TimeGrid(std::move(nodes), std::move(orders));
    return tape;
}

Vector dense_eval(const IntegrationTape& tape, double t) {
    const auto& nodes = tape.grid.nodes();
    if (!(t >= nodes.front() && t <= nodes.back())) {
        throw std::out_of_range("dense_eval: t outside [t_s, t_f]");
    }
    if (t == nodes.front()) {
        return tape.states.front();
    }
    // First node >= t; the covering step is (t_n, t_{n+1}] with t_{n+1} that node.
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), t);
    const auto idx = static_cast<std::size_t>(it - nodes.begin());
    if (*it == t) {
        return tape.states[idx];
    }
    return step_polynomial(tape, idx - 1, t);
}

} // namespace bdfadj
