#include "bdfadj/ode_model.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bdfadj {

OdeProblem::OdeProblem(std::string name, Rhs rhs, Jacobian jacobian, Criterion criterion,
                       CriterionGradient criterion_gradient, double t_start, double t_final,
                       Vector y_start)
    : name_(std::move(name)),
      rhs_(std::move(rhs)),
      jacobian_(std::move(jacobian)),
      criterion_(std::move(criterion)),
      criterion_gradient_(std::move(criterion_gradient)),
      t_start_(t_start),
      t_final_(t_final),
      y_start_(std::move(y_start)) {
    if (!(t_start_ < t_final_)) {
        throw std::invalid_argument("OdeProblem: t_start must be smaller than t_final");
    }
    if (y_start_.size() == 0) {
        throw std::invalid_argument("OdeProblem: dimension must be positive");
    }
    if (!rhs_ || !jacobian_ || !criterion_ || !criterion_gradient_) {
        throw std::invalid_argument("OdeProblem: all callbacks must be set");
    }
}

OdeProblem OdeProblem::with_initial_state(Vector y_start) const {
    if (y_start.size() != y_start_.size()) {
        throw std::invalid_argument("OdeProblem: initial state has wrong dimension");
    }
    return OdeProblem(name_, rhs_, jacobian_, criterion_, criterion_gradient_, t_start_, t_final_,
                      std::move(y_start));
}

namespace {

// log(cosh(s)) without overflow for large |s|.
double log_cosh(double s) {
    const double a = std::abs(s);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

} // namespace

ProblemWithReference catenary_problem(double p, double shift_a, double t_final, double shift_b) {
    if (!(p > 0.0) || !std::isfinite(p)) {
        throw std::invalid_argument("catenary_problem: p must be positive");
    }
    const double a = shift_a;
    const double b = shift_b;

    Vector y0(2);
    y0 << b + std::cosh(a) / p, std::sinh(a);

    auto rhs = [p](double, const Vector& y) {
        Vector dy(2);
        dy << y(1), p * std::sqrt(1.0 + y(1) * y(1));
        return dy;
    };
    auto jac = [p](double, const Vector& y) {
        Matrix m = Matrix::Zero(2, 2);
        m(0, 1) = 1.0;
        m(1, 1) = p * y(1) / std::sqrt(1.0 + y(1) * y(1));
        return m;
    };
    auto crit = [](const Vector& y) { return y(0); };
    auto crit_grad = [](const Vector&) {
        Vector g(2);
        g << 1.0, 0.0;
        return g;
    };

    OdeProblem problem("catenary", rhs, jac, crit, crit_grad, 0.0, t_final, y0);

    const double s_final = p * t_final + a;
    const double sinh_final = std::sinh(s_final);

    AnalyticReference ref;
    ref.nominal = [p, a, b](double t) {
        const double s = p * t + a;
        Vector y(2);
        y << b + std::cosh(s) / p, std::sinh(s);
        return y;
    };
    ref.classical_adjoint = [p, a, sinh_final](double t) {
        const double s = p * t + a;
        Vector lam(2);
        lam << 1.0, (sinh_final / std::cosh(s) - std::tanh(s)) / p;
        return lam;
    };
    // The closed form is an antiderivative of lambda; shift it so Lambda(0) = 0.
    auto antiderivative = [p, a, sinh_final](double t) {
        const double s = p * t + a;
        return -log_cosh(s) / (p * p) + 2.0 * sinh_final * std::atan(std::exp(s)) / (p * p);
    };
    const double offset = antiderivative(0.0);
    ref.weak_adjoint = [antiderivative, offset](double t) {
        Vector big(2);
        big << t, antiderivative(t) - offset;
        return big;
    };
    return {std::move(problem), std::move(ref)};
}

ProblemWithReference linear_test_problem(const Matrix& a, const Vector& c, const Vector& y_start,
                                         double t_start, double t_final) {
    const auto d = y_start.size();
    if (a.rows() != d || a.cols() != d || c.size() != d) {
        throw std::invalid_argument("linear_test_problem: inconsistent dimensions");
    }

    auto rhs = [a](double, const Vector& y) -> Vector { return a * y; };
    auto jac = [a](double, const Vector&) -> Matrix { return a; };
    auto crit = [c](const Vector& y) { return c.dot(y); };
    auto crit_grad = [c](const Vector&) -> Vector { return c; };

    OdeProblem problem("linear", rhs, jac, crit, crit_grad, t_start, t_final, y_start);

    AnalyticReference ref;
    ref.nominal = [a, y_start, t_start](double t) -> Vector {
        const Matrix m = (a * (t - t_start)).exp();
        return m * y_start;
    };
    const Matrix at = a.transpose();
    auto lambda = [at, c, t_final](double t) -> Vector {
        const Matrix m = (at * (t_final - t)).exp();
        return m * c;
    };
    ref.classical_adjoint = lambda;
    ref.weak_adjoint = [lambda, t_start, d](double t) -> Vector {
        Vector out = Vector::Zero(d);
        if (t == t_start) {
            return out;
        }
        using boost::math::quadrature::gauss_kronrod;
        for (Eigen::Index i = 0; i < d; ++i) {
            auto component = [&](double tau) { return lambda(tau)(i); };
            out(i) = t > t_start
                         ? gauss_kronrod<double, 31>::integrate(component, t_start, t, 15, 1e-12)
                         : -gauss_kronrod<double, 31>::integrate(component, t, t_start, 15, 1e-12);
        }
        return out;
    };
    return {std::move(problem), std::move(ref)};
}

namespace {

std::vector<double> probe_times(const OdeProblem& problem, int probes) {
    std::vector<double> out;
    const double ts = problem.t_start();
    const double tf = problem.t_final();
    if (probes <= 1) {
        return {ts};
    }
    out.reserve(static_cast<std::size_t>(probes));
    for (int i = 0; i < probes; ++i) {
        out.push_back(ts + (tf - ts) * static_cast<double>(i) / (probes - 1));
    }
    return out;
}

Vector probe_state(const OdeProblem& problem, const AnalyticReference* reference, double t, int i) {
    if (reference && reference->nominal) {
        return reference->nominal(t);
    }
    // Deterministic spread around y_s.
    Vector y = problem.initial_state();
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        y(j) += 0.1 * std::sin(1.7 * (i + 1) + 0.3 * static_cast<double>(j));
    }
    return y;
}

} // namespace

ConsistencyCheck check_jacobian(const OdeProblem& problem, const AnalyticReference* reference,
                                int probes) {
    ConsistencyCheck out;
    const double step_base = std::cbrt(std::numeric_limits<double>::epsilon());
    int i = 0;
    for (double t : probe_times(problem, probes)) {
        const Vector y = probe_state(problem, reference, t, i++);
        const Matrix jac = problem.jacobian(t, y);
        Matrix fd(y.size(), y.size());
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double dh = step_base * (1.0 + std::abs(y(j)));
            Vector yp = y;
            Vector ym = y;
            yp(j) += dh;
            ym(j) -= dh;
            fd.col(j) = (problem.rhs(t, yp) - problem.rhs(t, ym)) / (2.0 * dh);
        }
        const double rel = (fd - jac).cwiseAbs().maxCoeff() / (1.0 + jac.cwiseAbs().maxCoeff());
        if (rel > out.worst) {
            out.worst = rel;
            out.at_time = t;
        }
    }
    return out;
}

ConsistencyCheck check_criterion_gradient(const OdeProblem& problem,
                                          const AnalyticReference* reference, int probes) {
    ConsistencyCheck out;
    const double step_base = std::cbrt(std::numeric_limits<double>::epsilon());
    int i = 0;
    for (double t : probe_times(problem, probes)) {
        const Vector y = probe_state(problem, reference, t, i++);
        const Vector grad = problem.criterion_gradient(y);
        Vector fd(y.size());
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double dh = step_base * (1.0 + std::abs(y(j)));
            Vector yp = y;
            Vector ym = y;
            yp(j) += dh;
            ym(j) -= dh;
            fd(j) = (problem.criterion(yp) - problem.criterion(ym)) / (2.0 * dh);
        }
        const double rel = max_norm(fd - grad) / (1.0 + max_norm(grad));
        if (rel > out.worst) {
            out.worst = rel;
            out.at_time = t;
        }
    }
    return out;
}

ConsistencyCheck check_nominal_residual(const OdeProblem& problem,
                                        const AnalyticReference& reference, int probes) {
    ConsistencyCheck out;
    const double dt = 1e-5 * (problem.t_final() - problem.t_start());
    for (double t : probe_times(problem, probes)) {
        const Vector dy = (reference.nominal(t + dt) - reference.nominal(t - dt)) / (2.0 * dt);
        const Vector f = problem.rhs(t, reference.nominal(t));
        const double rel = max_norm(dy - f) / (1.0 + max_norm(f));
        if (rel > out.worst) {
            out.worst = rel;
            out.at_time = t;
        }
    }
    return out;
}

ConsistencyCheck check_weak_adjoint_derivative(const OdeProblem& problem,
                                               const AnalyticReference& reference, int probes) {
    ConsistencyCheck out;
    const double dt = 1e-5 * (problem.t_final() - problem.t_start());
    for (double t : probe_times(problem, probes)) {
        const Vector d_big =
            (reference.weak_adjoint(t + dt) - reference.weak_adjoint(t - dt)) / (2.0 * dt);
        const Vector lam = reference.classical_adjoint(t);
        const double rel = max_norm(d_big - lam) / (1.0 + max_norm(lam));
        if (rel > out.worst) {
            out.worst = rel;
            out.at_time = t;
        }
    }
    return out;
}

} // namespace bdfadj
