#include "bdfadj/analysis.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace bdfadj;

TEST_CASE("KKT residuals of converged runs") {
    const auto [problem, ref] = catenary_problem(3.0, -3.0, 2.0);

    SUBCASE("non-adaptive, assembled") {
        const auto tape = integrate_nonadaptive(problem, 2, 1.0 / 64);
        const auto adj = adjoint_sweep(problem, tape);
        const auto report = verify_kkt(problem, tape, adj);
        CHECK(report.assembled);
        CHECK(report.passed());
        CHECK(report.adjoint_residual <= report.adjoint_threshold);
        CHECK(max_coefficient_defect(tape) <= 1e-12);
    }
    SUBCASE("adaptive") {
        AdaptiveOptions opts;
        opts.rtol = 1e-6;
        opts.atol = 1e-8;
        const auto tape = integrate_adaptive(problem, opts);
        const auto adj = adjoint_sweep(problem, tape);
        const auto report = verify_kkt(problem, tape, adj);
        CHECK(report.passed());
        CHECK(max_coefficient_defect(tape) <= 1e-12);
    }
    SUBCASE("large run, step-wise evaluation") {
        const auto tape = integrate_nonadaptive(problem, 2, std::ldexp(1.0, -14));
        REQUIRE(2 * tape.steps() > kAssembleLimit);
        const auto adj = adjoint_sweep(problem, tape);
        const auto report = verify_kkt(problem, tape, adj);
        CHECK_FALSE(report.assembled);
        CHECK(report.passed());
    }
}

TEST_CASE("KKT check detects perturbations and mismatches") {
    const auto [problem, ref] = catenary_problem(3.0, -3.0, 2.0);
    const auto tape = integrate_nonadaptive(problem, 2, 1.0 / 64);
    const auto adj = adjoint_sweep(problem, tape);

    auto perturbed = adj;
    perturbed.lambdas[40](1) += 1e-3;
    const auto bad = verify_kkt(problem, tape, perturbed);
    CHECK(bad.adjoint_residual >= 1e-4);
    CHECK_FALSE(bad.passed());

    auto bad_gradient = adj;
    bad_gradient.gradient(0) += 1e-3;
    CHECK_FALSE(verify_kkt(problem, tape, bad_gradient).passed());

    auto moved = tape;
    moved.states[50](0) += 1e-6;
    const auto nominal = verify_kkt(problem, moved, adj);
    CHECK_FALSE(nominal.nominal_within_tolerance);
    CHECK((nominal.worst_nominal_step == 49 || nominal.worst_nominal_step == 50 ||
           nominal.worst_nominal_step == 51));

    auto short_adj = adj;
    short_adj.lambdas.pop_back();
    CHECK_THROWS_AS(verify_kkt(problem, tape, short_adj), std::invalid_argument);
    const auto [lin, lin_ref] =
        linear_test_problem(Matrix::Identity(3, 3), Vector::Ones(3), Vector::Ones(3), 0.0, 2.0);
    CHECK_THROWS_AS(verify_kkt(lin, tape, adj), std::invalid_argument);
}

TEST_CASE("order fitting") {
    ConvergenceTable exact;
    for (int e = 2; e <= 6; ++e) {
        const double h = std::ldexp(1.0, -e);
        exact.add(h, 3.0 * h * h);
    }
    CHECK(std::abs(fit_order(exact) - 2.0) <= 1e-10);
    CHECK(std::isnan(exact.observed_order(0)));
    CHECK(std::abs(exact.observed_order(3) - 2.0) <= 1e-10);

    ConvergenceTable linear;
    for (double h : {0.1, 0.05, 0.01}) {
        linear.add(h, 7.0 * h);
    }
    CHECK(std::abs(fit_order(linear) - 1.0) <= 1e-10);

    ConvergenceTable two;
    two.add(0.1, 1.0);
    two.add(0.05, 0.5);
    CHECK_THROWS_AS(fit_order(two), std::invalid_argument);

    ConvergenceTable increasing;
    for (double h : {0.1, 0.2, 0.05}) {
        increasing.add(h, h);
    }
    CHECK_THROWS_AS(fit_order(increasing), std::invalid_argument);

    ConvergenceTable with_zero;
    with_zero.add(0.1, 0.01);
    with_zero.add(0.05, 0.0);
    with_zero.add(0.025, 0.000625);
    with_zero.add(0.0125, std::nan(""));
    std::vector<std::string> warnings;
    CHECK(std::abs(fit_order(with_zero, &warnings) - 2.0) <= 1e-10);
    CHECK(warnings.size() == 2);
    CHECK(std::isnan(with_zero.observed_order(1)));

    ConvergenceTable all_zero;
    for (double h : {0.1, 0.05, 0.025}) {
        all_zero.add(h, 0.0);
    }
    CHECK(std::isnan(fit_order(all_zero)));
}

TEST_CASE("pointwise weak-adjoint error") {
    AnalyticReference ref;
    ref.weak_adjoint = [](double t) -> Vector { return Vector::Constant(1, t); };
    const WeakAdjoint w(0.0, {0.5, 1.0}, {Vector::Constant(1, 0.5), Vector::Constant(1, 0.5)});
    CHECK(pointwise_error(w, ref, 0.0) == 0.0);
    CHECK(pointwise_error(w, ref, 0.25) == doctest::Approx(0.25));
    CHECK(pointwise_error(w, ref, 0.5) == doctest::Approx(0.0));
    CHECK(pointwise_error(w, ref, 0.75) == doctest::Approx(0.25));
    CHECK(pointwise_error(w, ref, 1.0) == doctest::Approx(0.0));
    CHECK_THROWS_AS(pointwise_error(w, ref, 1.5), std::out_of_range);
}

TEST_CASE("dual-norm bound") {
    AnalyticReference zero;
    zero.classical_adjoint = [](double) -> Vector { return Vector::Zero(1); };
    const TimeGrid grid({0.0, 0.5, 1.0}, {1, 1});
    const WeakAdjoint none(0.0, {0.5, 1.0}, {Vector::Zero(1), Vector::Zero(1)});
    CHECK(dual_norm_bound(none, zero, grid) == 0.0);

    AnalyticReference one;
    one.classical_adjoint = [](double) -> Vector { return Vector::Ones(1); };
    // Exact lambda_n = 1 leaves only the two endpoint terms: h (1 + 1).
    const WeakAdjoint exact(0.0, {0.5, 1.0}, {Vector::Constant(1, 0.5), Vector::Constant(1, 0.5)});
    CHECK(dual_norm_bound(exact, one, grid) == doctest::Approx(1.0));
    // Doubling the deviation of every lambda_n.
    const WeakAdjoint off(0.0, {0.5, 1.0}, {Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)});
    const WeakAdjoint off2(0.0, {0.5, 1.0}, {Vector::Constant(1, 1.5), Vector::Constant(1, 1.5)});
    CHECK(dual_norm_bound(off2, zero, grid) == doctest::Approx(2.0 * dual_norm_bound(off, zero, grid) - 1.0));

    const TimeGrid uneven({0.0, 0.3, 1.0}, {1, 1});
    CHECK_THROWS_AS(dual_norm_bound(exact, one, uneven), std::invalid_argument);

    const TimeGrid ramp({0.0, 0.25, 0.5, 1.0}, {1, 1, 2});
    const WeakAdjoint ramp_w(0.0, {0.25, 0.5, 1.0},
                             {Vector::Constant(1, 0.25), Vector::Constant(1, 0.25),
                              Vector::Constant(1, 0.5)});
    CHECK(dual_norm_bound(ramp_w, one, ramp) == doctest::Approx(1.0));

    // First-order decay on the catenary.
    const auto [problem, ref] = catenary_problem(3.0, -3.0, 2.0);
    ConvergenceTable table;
    for (int e = 4; e <= 9; ++e) {
        const double h = std::ldexp(1.0, -e);
        const auto tape = integrate_nonadaptive(problem, 2, h);
        const auto weak = assemble_weak_adjoint(tape, adjoint_sweep(problem, tape));
        table.add(h, dual_norm_bound(weak, ref, tape.grid));
    }
    for (std::size_t i = 1; i < table.rows(); ++i) {
        CHECK(table.error[i] < table.error[i - 1]);
    }
    CHECK(fit_order(table) >= 0.8);
}
