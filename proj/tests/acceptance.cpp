#include "bdfadj/adjoint.hpp"
#include "bdfadj/analysis.hpp"
#include "bdfadj/bdf.hpp"
#include "bdfadj/io.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace bdfadj;

namespace {

struct Outcome {
    bool passed;
    std::string detail;
};

const double kTf = 2.0;
const double kInterior = 1.25;

const ProblemWithReference& catenary() {
    static const ProblemWithReference pr = catenary_problem(3.0, -3.0, kTf);
    return pr;
}

// One non-adaptive k = 2 run per h = 2^-4 .. 2^-9.
struct SweepRun {
    double h;
    IntegrationTape tape;
    DiscreteAdjoints adjoints;
    WeakAdjoint weak;
};

const std::vector<SweepRun>& sweep() {
    static const std::vector<SweepRun> runs = [] {
        std::vector<SweepRun> out;
        const auto& pr = catenary();
        for (int e = 4; e <= 9; ++e) {
            SweepRun r;
            r.h = std::ldexp(1.0, -e);
            r.tape = integrate_nonadaptive(pr.problem, 2, r.h);
            r.adjoints = adjoint_sweep(pr.problem, r.tape);
            r.weak = assemble_weak_adjoint(r.tape, r.adjoints);
            out.push_back(std::move(r));
        }
        return out;
    }();
    return runs;
}

ConvergenceTable sweep_table(const std::function<double(const SweepRun&)>& error) {
    ConvergenceTable table;
    for (const auto& r : sweep()) {
        table.add(r.h, error(r));
    }
    return table;
}

std::string fmt(double v) { return format_double(v); }

std::string orders_text(const ConvergenceTable& t) {
    std::string s = "[";
    for (std::size_t i = 1; i < t.rows(); ++i) {
        s += (i > 1 ? ", " : "") + fmt(std::round(t.observed_order(i) * 1000.0) / 1000.0);
    }
    return s + "]";
}

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

IntegrationTape adaptive_run(double rtol, double atol) {
    AdaptiveOptions opts;
    opts.rtol = rtol;
    opts.atol = atol;
    return integrate_adaptive(catenary().problem, opts);
}

Outcome exact_derivative() {
    const auto start = std::chrono::steady_clock::now();
    const auto& pr = catenary();
    const auto fixed = integrate_nonadaptive(pr.problem, 2, std::ldexp(1.0, -6));
    const auto adaptive = adaptive_run(1e-6, 1e-8);
    double worst = 0.0;
    for (const auto* tape : {&fixed, &adaptive}) {
        const auto adj = adjoint_sweep(pr.problem, *tape);
        worst = std::max(worst, oracle::relative_error(adj.gradient, oracle::fd_gradient(pr.problem, *tape)));
    }
    const double secs = elapsed_seconds(start);
    return {worst <= 1e-6 && secs < 1.0, "max relative error " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome nominal_convergence() {
    const auto start = std::chrono::steady_clock::now();
    const auto& ref = catenary().reference;
    const auto table = sweep_table([&](const SweepRun& r) {
        return (r.tape.final_state() - ref.nominal(kTf)).norm();
    });
    const double secs = elapsed_seconds(start);
    bool ok = secs < 5.0;
    for (std::size_t i = 1; i < table.rows(); ++i) {
        ok = ok && table.observed_order(i) >= 1.8 && table.observed_order(i) <= 2.2;
    }
    return {ok, "observed orders " + orders_text(table) + ", " + fmt(secs) + " s"};
}

Outcome gradient_convergence() {
    const auto& ref = catenary().reference;
    const auto table = sweep_table([&](const SweepRun& r) {
        return (r.adjoints.gradient - ref.classical_adjoint(0.0)).norm();
    });
    bool ok = true;
    for (std::size_t i = 1; i < table.rows(); ++i) {
        ok = ok && table.observed_order(i) >= 1.7 && table.observed_order(i) <= 2.3;
    }
    return {ok, "observed orders " + orders_text(table)};
}

Outcome interior_adjoint() {
    const auto& ref = catenary().reference;
    const auto table = sweep_table([&](const SweepRun& r) {
        const auto& nodes = r.tape.grid.nodes();
        std::size_t n = 1;
        for (std::size_t i = 1; i < nodes.size(); ++i) {
            if (std::abs(nodes[i] - kInterior) < std::abs(nodes[n] - kInterior)) {
                n = i;
            }
        }
        return (r.adjoints.lambda(n) - ref.classical_adjoint(kInterior)).norm();
    });
    bool ok = true;
    for (std::size_t i = 1; i < table.rows(); ++i) {
        ok = ok && table.error[i] < table.error[i - 1];
    }
    const double fitted = fit_order(table);
    ok = ok && fitted >= 0.8;
    return {ok, "fitted order " + fmt(fitted) + ", observed " + orders_text(table)};
}

Outcome boundary_inconsistency() {
    const auto& pr = catenary();
    const Vector jp = pr.problem.criterion_gradient(pr.reference.nominal(kTf));
    double smallest_gap = INFINITY;
    for (const auto& r : sweep()) {
        smallest_gap = std::min(smallest_gap, (r.adjoints.lambdas.back() - pr.reference.classical_adjoint(kTf)).norm());
    }
    const Vector target = (2.0 / 3.0) * jp;
    const double rel = (sweep().back().adjoints.lambdas.back() - target).norm() / target.norm();
    const bool ok = smallest_gap >= jp.norm() / 30.0 && rel <= 0.05;
    return {ok, "min |lambda_N - lambda(2)| " + fmt(smallest_gap) + ", |lambda_N - 2/3 J'| / |2/3 J'| " + fmt(rel) +
                    " at h = 2^-9"};
}

Outcome weak_adjoint_convergence() {
    const auto start = std::chrono::steady_clock::now();
    const auto& ref = catenary().reference;
    const auto at_tf = sweep_table([&](const SweepRun& r) { return pointwise_error(r.weak, ref, kTf); });
    const auto at_int = sweep_table([&](const SweepRun& r) { return pointwise_error(r.weak, ref, kInterior); });
    const double o_tf = fit_order(at_tf);
    const double o_int = fit_order(at_int);
    const double secs = elapsed_seconds(start);
    const bool ok = o_tf >= 1.7 && o_int >= 0.8 && o_int <= 1.3 && secs < 5.0;
    return {ok, "fitted order at t=2: " + fmt(o_tf) + ", at t=1.25: " + fmt(o_int) + ", " + fmt(secs) + " s"};
}

Outcome dual_norm() {
    const auto& ref = catenary().reference;
    const auto table = sweep_table([&](const SweepRun& r) { return dual_norm_bound(r.weak, ref, r.tape.grid); });
    const double fitted = fit_order(table);
    return {fitted >= 0.8, "fitted order " + fmt(fitted)};
}

Outcome kkt_equivalence() {
    const auto& pr = catenary();
    std::vector<std::pair<std::string, IntegrationTape>> runs;
    for (const auto& r : sweep()) {
        runs.emplace_back("h=" + fmt(r.h), r.tape);
    }
    runs.emplace_back("rtol=1e-4", adaptive_run(1e-4, 1e-6));
    runs.emplace_back("rtol=1e-9", adaptive_run(1e-9, 1e-11));
    bool ok = true;
    double worst_nominal = 0.0;
    double worst_adjoint = 0.0;
    std::string failed;
    for (const auto& [label, tape] : runs) {
        const auto report = verify_kkt(pr.problem, tape, adjoint_sweep(pr.problem, tape));
        worst_nominal = std::max(worst_nominal, report.worst_nominal_ratio);
        worst_adjoint = std::max(worst_adjoint, std::max(report.adjoint_residual, report.gradient_residual) /
                                                    report.adjoint_threshold);
        if (!report.passed()) {
            ok = false;
            failed += " " + label;
        }
    }
    return {ok, std::to_string(runs.size()) + " runs, worst nominal residual / (10 tol) " + fmt(worst_nominal) +
                    ", worst adjoint residual / threshold " + fmt(worst_adjoint) +
                    (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome coefficient_suite() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> step(0.05, 1.0);
    std::uniform_real_distribution<double> origin(-50.0, 50.0);
    std::uniform_real_distribution<double> scale_exp(-6.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 1 + trial % kMaxOrder;
        const double scale = std::pow(10.0, scale_exp(rng));
        std::vector<double> nodes{origin(rng)};
        for (int i = 0; i < k; ++i) {
            nodes.push_back(nodes.back() + scale * step(rng));
        }
        worst = std::max(worst, coefficient_defect(compute_coefficients(nodes, k), nodes));
    }
    const double h = 0.1;
    const std::vector<double> n1 = {0.0, h};
    const std::vector<double> n2 = {0.0, h, 2 * h};
    const auto c1 = compute_coefficients(n1, 1);
    const auto c2 = compute_coefficients(n2, 2);
    const double closed = std::max({std::abs(c1.alpha[0] - 1.0), std::abs(c1.alpha[1] + 1.0),
                                    std::abs(c2.alpha[0] - 1.5), std::abs(c2.alpha[1] + 2.0),
                                    std::abs(c2.alpha[2] - 0.5)});
    return {worst <= 1e-12 && closed <= 1e-14,
            "worst scaled defect " + fmt(worst) + ", closed-form deviation " + fmt(closed)};
}

Outcome adaptive_sanity() {
    const auto& pr = catenary();
    const auto loose = adaptive_run(1e-4, 1e-6);
    const auto tight = adaptive_run(1e-9, 1e-11);
    const auto w_loose = assemble_weak_adjoint(loose, adjoint_sweep(pr.problem, loose));
    const auto w_tight = assemble_weak_adjoint(tight, adjoint_sweep(pr.problem, tight));
    bool ok = true;
    std::ostringstream detail;
    detail << "N = " << loose.steps() << " / " << tight.steps();
    for (double t : {kInterior, kTf}) {
        const double e_loose = pointwise_error(w_loose, pr.reference, t);
        const double e_tight = pointwise_error(w_tight, pr.reference, t);
        ok = ok && e_tight < e_loose;
        detail << ", error at t=" << fmt(t) << ": " << fmt(e_loose) << " -> " << fmt(e_tight);
    }
    return {ok, detail.str()};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"exact derivative vs finite differences", exact_derivative},
        {"nominal convergence order", nominal_convergence},
        {"gradient convergence to lambda(t_s)", gradient_convergence},
        {"interior adjoint convergence", interior_adjoint},
        {"boundary inconsistency of lambda_N", boundary_inconsistency},
        {"weak adjoint convergence", weak_adjoint_convergence},
        {"dual-norm bound is O(h)", dual_norm},
        {"KKT residuals of converged runs", kkt_equivalence},
        {"coefficient property suite", coefficient_suite},
        {"adaptive sanity", adaptive_sanity},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome{false, ""};
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double secs = elapsed_seconds(start);
        if (!outcome.passed) {
            ++failures;
        }
        std::cout << (outcome.passed ? "PASS" : "FAIL") << " criterion " << (i + 1) << ": " << criteria[i].first
                  << " (" << outcome.detail << "; " << fmt(std::round(secs * 1000.0) / 1000.0) << " s)\n";
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
    return failures == 0 ? 0 : 1;
}
