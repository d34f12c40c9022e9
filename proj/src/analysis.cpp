#include "bdfadj/analysis.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bdfadj {

namespace {

using Sparse = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Stacked vector (v_1, ..., v_N) from a list of equally sized blocks.
Vector stack(const std::vector<Vector>& blocks, std::size_t first, std::size_t count, int d) {
    Vector out(static_cast<Eigen::Index>(count) * d);
    for (std::size_t j = 0; j < count; ++j) {
        out.segment(static_cast<Eigen::Index>(j) * d, d) = blocks[first + j];
    }
    return out;
}

struct KktPieces {
    Vector start;    // s: alpha_{n+1}^{(n)} y_s in the rows of steps reaching y_0
    Vector forcing;  // F: h_n f(t_{n+1}, y_{n+1})
    Vector seed;     // e_N (x) J'(y_N)^T
    std::vector<Matrix> scaled_jacobians; // h_n f_y(t_{n+1}, y_{n+1})
};

KktPieces collect(const OdeProblem& problem, const IntegrationTape& tape) {
    const std::size_t big_n = tape.steps();
    const int d = tape.dimension();
    KktPieces p;
    p.start = Vector::Zero(static_cast<Eigen::Index>(big_n) * d);
    p.forcing.resize(static_cast<Eigen::Index>(big_n) * d);
    p.seed = Vector::Zero(static_cast<Eigen::Index>(big_n) * d);
    p.scaled_jacobians.reserve(big_n);
    const Vector& y_s = problem.initial_state();
    for (std::size_t n = 0; n < big_n; ++n) {
        const auto& c = tape.coefficients[n];
        const double t = tape.grid.node(n + 1);
        const double h = tape.grid.stepsize(n);
        const auto row = static_cast<Eigen::Index>(n) * d;
        if (static_cast<std::size_t>(c.order) >= n + 1) {
            p.start.segment(row, d) = c.alpha[n + 1] * y_s;
        }
        p.forcing.segment(row, d) = h * problem.rhs(t, tape.states[n + 1]);
        p.scaled_jacobians.push_back(h * problem.jacobian(t, tape.states[n + 1]));
    }
    p.seed.tail(d) = problem.criterion_gradient(tape.final_state());
    return p;
}

// A (x) I and blockdiag(h_n f_y) as sparse matrices over the unknowns y_1..y_N.
std::pair<Sparse, Sparse> assemble(const IntegrationTape& tape, const KktPieces& pieces) {
    const std::size_t big_n = tape.steps();
    const int d = tape.dimension();
    const auto size = static_cast<Eigen::Index>(big_n) * d;
    std::vector<Triplet> a_entries;
    std::vector<Triplet> b_entries;
    for (std::size_t n = 0; n < big_n; ++n) {
        const auto& c = tape.coefficients[n];
        const auto row = static_cast<Eigen::Index>(n) * d;
        for (int i = 0; i <= c.order; ++i) {
            if (static_cast<std::size_t>(i) > n) {
                break; // y_0 is data, moved to the start vector
            }
            const auto col = static_cast<Eigen::Index>(n - static_cast<std::size_t>(i)) * d;
            for (int r = 0; r < d; ++r) {
                a_entries.emplace_back(row + r, col + r, c.alpha[static_cast<std::size_t>(i)]);
            }
        }
        const Matrix& jb = pieces.scaled_jacobians[n];
        for (int r = 0; r < d; ++r) {
            for (int s = 0; s < d; ++s) {
                if (jb(r, s) != 0.0) {
                    b_entries.emplace_back(row + r, row + s, jb(r, s));
                }
            }
        }
    }
    Sparse a(size, size);
    Sparse b(size, size);
    a.setFromTriplets(a_entries.begin(), a_entries.end());
    b.setFromTriplets(b_entries.begin(), b_entries.end());
    return {std::move(a), std::move(b)};
}

// Step-wise products with A (x) I and its transpose, for large systems.
Vector apply_a(const IntegrationTape& tape, const Vector& y) {
    const int d = tape.dimension();
    Vector out = Vector::Zero(y.size());
    for (std::size_t n = 0; n < tape.steps(); ++n) {
        const auto& c = tape.coefficients[n];
        for (int i = 0; i <= c.order && static_cast<std::size_t>(i) <= n; ++i) {
            out.segment(static_cast<Eigen::Index>(n) * d, d) +=
                c.alpha[static_cast<std::size_t>(i)] *
                y.segment(static_cast<Eigen::Index>(n - static_cast<std::size_t>(i)) * d, d);
        }
    }
    return out;
}

Vector apply_a_transposed(const IntegrationTape& tape, const Vector& lam) {
    const int d = tape.dimension();
    Vector out = Vector::Zero(lam.size());
    for (std::size_t n = 0; n < tape.steps(); ++n) {
        const auto& c = tape.coefficients[n];
        for (int i = 0; i <= c.order && static_cast<std::size_t>(i) <= n; ++i) {
            out.segment(static_cast<Eigen::Index>(n - static_cast<std::size_t>(i)) * d, d) +=
                c.alpha[static_cast<std::size_t>(i)] * lam.segment(static_cast<Eigen::Index>(n) * d, d);
        }
    }
    return out;
}

} // namespace

KktResidualReport verify_kkt(const OdeProblem& problem, const IntegrationTape& tape,
                             const DiscreteAdjoints& adjoints) {
    const std::size_t big_n = tape.steps();
    if (big_n == 0 || tape.states.size() != big_n + 1 || tape.coefficients.size() != big_n) {
        throw std::invalid_argument("verify_kkt: incomplete tape");
    }
    if (adjoints.steps() != big_n) {
        throw std::invalid_argument("verify_kkt: tape and adjoints differ in length");
    }
    const int d = tape.dimension();
    if (d != problem.dimension() || adjoints.gradient.size() != d) {
        throw std::invalid_argument("verify_kkt: dimension mismatch");
    }
    for (const auto& l : adjoints.lambdas) {
        if (l.size() != d) {
            throw std::invalid_argument("verify_kkt: dimension mismatch");
        }
    }

    const KktPieces pieces = collect(problem, tape);
    const Vector y = stack(tape.states, 1, big_n, d);
    const Vector lam = stack(adjoints.lambdas, 0, big_n, d);

    KktResidualReport report;
    Vector nominal;
    Vector adjoint;
    if (static_cast<std::size_t>(d) * big_n <= kAssembleLimit) {
        const auto [a, b] = assemble(tape, pieces);
        nominal = a * y + pieces.start - pieces.forcing;
        const Sparse m = a - b;
        adjoint = pieces.seed - Sparse(m.transpose()) * lam;
        report.assembled = true;
    } else {
        nominal = apply_a(tape, y) + pieces.start - pieces.forcing;
        adjoint = pieces.seed - apply_a_transposed(tape, lam);
        for (std::size_t n = 0; n < big_n; ++n) {
            const auto row = static_cast<Eigen::Index>(n) * d;
            adjoint.segment(row, d) += pieces.scaled_jacobians[n].transpose() * lam.segment(row, d);
        }
    }

    report.nominal_residual = nominal.size() ? nominal.cwiseAbs().maxCoeff() : 0.0;
    report.adjoint_residual = adjoint.size() ? adjoint.cwiseAbs().maxCoeff() : 0.0;

    for (std::size_t n = 0; n < big_n; ++n) {
        const double r = max_norm(nominal.segment(static_cast<Eigen::Index>(n) * d, d));
        const double tol = n < tape.newton.size() ? tape.newton[n].tolerance : 0.0;
        const double ratio = tol > 0.0 ? r / (10.0 * tol) : (r == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        if (ratio > report.worst_nominal_ratio || !std::isfinite(ratio)) {
            report.worst_nominal_ratio = ratio;
            report.worst_nominal_step = n;
        }
    }
    report.nominal_within_tolerance =
        std::isfinite(report.worst_nominal_ratio) && report.worst_nominal_ratio <= 1.0;

    Vector w0 = adjoints.gradient;
    for (std::size_t n = 0; n < std::min<std::size_t>(big_n, kMaxOrder); ++n) {
        const auto& c = tape.coefficients[n];
        if (static_cast<std::size_t>(c.order) >= n + 1) {
            w0 += c.alpha[n + 1] * adjoints.lambdas[n];
        }
    }
    report.gradient_residual = max_norm(w0);
    report.initial_residual = max_norm(tape.states.front() - problem.initial_state());

    double max_lambda = 0.0;
    for (const auto& l : adjoints.lambdas) {
        max_lambda = std::max(max_lambda, max_norm(l));
    }
    report.adjoint_threshold = 1e-9 * (1.0 + max_lambda);
    return report;
}

double max_coefficient_defect(const IntegrationTape& tape) {
    double worst = 0.0;
    for (std::size_t n = 0; n < tape.steps(); ++n) {
        worst = std::max(worst, coefficient_defect(tape.coefficients[n], tape.grid.stencil(n)));
    }
    return worst;
}

void ConvergenceTable::add(double h_value, double error_value) {
    h.push_back(h_value);
    error.push_back(error_value);
}

double ConvergenceTable::observed_order(std::size_t i) const {
    if (i == 0 || i >= rows()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double e0 = error[i - 1];
    const double e1 = error[i];
    if (!(e0 > 0.0) || !(e1 > 0.0) || !std::isfinite(e0) || !std::isfinite(e1)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return std::log(e0 / e1) / std::log(h[i - 1] / h[i]);
}

double fit_order(const ConvergenceTable& table, std::vector<std::string>* warnings) {
    if (table.rows() < 3) {
        throw std::invalid_argument("fit_order: at least three rows required");
    }
    for (std::size_t i = 0; i < table.rows(); ++i) {
        if (!(table.h[i] > 0.0) || (i > 0 && !(table.h[i] < table.h[i - 1]))) {
            throw std::invalid_argument("fit_order: h must be positive and strictly decreasing");
        }
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < table.rows(); ++i) {
        const double e = table.error[i];
        if (!(e > 0.0) || !std::isfinite(e)) {
            if (warnings) {
                warnings->push_back("fit_order: row " + std::to_string(i) +
                                    " excluded (error is zero or not finite)");
            }
            continue;
        }
        xs.push_back(std::log(table.h[i]));
        ys.push_back(std::log(e));
    }
    if (xs.size() < 2) {
        if (warnings) {
            warnings->push_back("fit_order: fewer than two usable rows, no fit");
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
    const auto m = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= m;
    my /= m;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

double pointwise_error(const WeakAdjoint& weak, const AnalyticReference& reference, double t) {
    if (!(t >= weak.t_start() && t <= weak.t_final())) {
        throw std::out_of_range("pointwise_error: t outside [t_s, t_f]");
    }
    return (reference.weak_adjoint(t) - weak.eval(t)).norm();
}

double dual_norm_bound(const WeakAdjoint& weak, const AnalyticReference& reference,
                       const TimeGrid& grid) {
    const std::size_t big_n = grid.steps();
    if (big_n == 0 || weak.jumps().size() != big_n) {
        throw std::invalid_argument("dual_norm_bound: grid and weak adjoint differ in length");
    }
    const auto hs = grid.stepsizes();
    const double h = hs.back();
    const double ts = grid.node(0);
    auto same = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };

    // First index from which all steps equal h.
    std::size_t ramp_end = big_n - 1;
    while (ramp_end > 0 && same(hs[ramp_end - 1], h)) {
        --ramp_end;
    }
    if (ramp_end > 0 && !same(grid.node(ramp_end) - ts, h)) {
        throw std::invalid_argument("dual_norm_bound: grid is not equidistant");
    }

    const int d = weak.dimension();
    Vector acc = reference.classical_adjoint(ts).cwiseAbs() * h;
    for (std::size_t n = 1; n <= big_n; ++n) {
        const double hn = hs[n - 1];
        const Vector lambda_n = weak.jumps()[n - 1] / hn;
        acc += hn * (reference.classical_adjoint(grid.node(n)) - lambda_n).cwiseAbs();
    }
    acc += h * reference.classical_adjoint(grid.node(big_n)).cwiseAbs();
    return d > 0 ? acc.maxCoeff() : 0.0;
}

} // namespace bdfadj
