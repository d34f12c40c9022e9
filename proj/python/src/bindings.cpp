#include "bdfadj/adjoint.hpp"
#include "bdfadj/analysis.hpp"
#include "bdfadj/bdf.hpp"
#include "bdfadj/cli.hpp"
#include "bdfadj/io.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

namespace py = pybind11;
using namespace bdfadj;

namespace {

struct PyProblem {
    ProblemSpec spec;
    std::shared_ptr<ProblemWithReference> built;

    explicit PyProblem(ProblemSpec s)
        : spec(std::move(s)), built(std::make_shared<ProblemWithReference>(build_problem(spec))) {}
};

struct PyTape {
    IntegrationTape tape;
    ProblemSpec spec;
    RunSettings settings;
};

struct PyAdjoint {
    DiscreteAdjoints adjoints;
    WeakAdjoint weak;
    std::string digest;
    ProblemSpec spec;
};

Matrix stack_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) {
        return Matrix(0, 0);
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return m;
}

std::vector<double> flatten_rows(const Matrix& m) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out.push_back(m(i, j));
        }
    }
    return out;
}

PyProblem make_problem(const std::string& name, double p, double shift_a, double tf, double ts,
                       const std::optional<Matrix>& a, const std::optional<Vector>& c,
                       const std::optional<Vector>& ys) {
    ProblemSpec spec;
    spec.name = name;
    spec.p = p;
    spec.shift_a = shift_a;
    spec.t_final = tf;
    spec.t_start = ts;
    if (a) {
        spec.a = flatten_rows(*a);
    }
    if (c) {
        spec.c.assign(c->data(), c->data() + c->size());
    }
    if (ys) {
        spec.y_start.assign(ys->data(), ys->data() + ys->size());
    }
    return PyProblem(spec);
}

PyTape integrate_py(const PyProblem& problem, const std::string& mode, int order, std::optional<double> h,
                    std::optional<double> rtol, std::optional<double> atol) {
    PyTape out;
    out.spec = problem.spec;
    const auto& ode = problem.built->problem;
    py::gil_scoped_release release;
    if (mode == "nonadaptive") {
        if (!h) {
            throw std::invalid_argument("nonadaptive mode requires h");
        }
        out.tape = integrate_nonadaptive(ode, order, *h);
        out.settings.order = order;
        out.settings.h = *h;
    } else if (mode == "adaptive") {
        if (!rtol || !atol) {
            throw std::invalid_argument("adaptive mode requires rtol and atol");
        }
        AdaptiveOptions opts;
        opts.rtol = *rtol;
        opts.atol = *atol;
        out.tape = integrate_adaptive(ode, opts);
        out.settings.rtol = *rtol;
        out.settings.atol = *atol;
    } else {
        throw std::invalid_argument("mode must be 'nonadaptive' or 'adaptive'");
    }
    return out;
}

PyAdjoint adjoint_py(const PyTape& tape) {
    const auto pr = build_problem(tape.spec);
    PyAdjoint out;
    out.spec = tape.spec;
    out.adjoints = adjoint_sweep(pr.problem, tape.tape);
    out.weak = assemble_weak_adjoint(tape.tape, out.adjoints);
    out.digest = tape_digest(tape.tape);
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Variable-order BDF integration with discrete adjoints";

    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

    py::class_<PyProblem>(m, "Problem")
        .def(py::init(&make_problem), py::arg("name") = "catenary", py::arg("p") = 3.0, py::arg("A") = -3.0,
             py::arg("tf") = 2.0, py::arg("ts") = 0.0, py::arg("a") = py::none(), py::arg("c") = py::none(),
             py::arg("ys") = py::none())
        .def_property_readonly("name", [](const PyProblem& p) { return p.spec.name; })
        .def_property_readonly("dimension", [](const PyProblem& p) { return p.built->problem.dimension(); })
        .def_property_readonly("t_start", [](const PyProblem& p) { return p.built->problem.t_start(); })
        .def_property_readonly("t_final", [](const PyProblem& p) { return p.built->problem.t_final(); })
        .def("nominal", [](const PyProblem& p, double t) { return p.built->reference.nominal(t); })
        .def("classical_adjoint",
             [](const PyProblem& p, double t) { return p.built->reference.classical_adjoint(t); })
        .def("weak_adjoint", [](const PyProblem& p, double t) { return p.built->reference.weak_adjoint(t); });

    py::class_<PyTape>(m, "Tape")
        .def_property_readonly("steps", [](const PyTape& t) { return t.tape.steps(); })
        .def_property_readonly("dimension", [](const PyTape& t) { return t.tape.dimension(); })
        .def_property_readonly("mode", [](const PyTape& t) {
            return t.tape.mode == IntegrationMode::adaptive ? "adaptive" : "nonadaptive";
        })
        .def_property_readonly("nodes", [](const PyTape& t) { return t.tape.grid.nodes(); })
        .def_property_readonly("orders", [](const PyTape& t) { return t.tape.grid.orders(); })
        .def_property_readonly("states", [](const PyTape& t) { return stack_rows(t.tape.states); })
        .def_property_readonly("final_state", [](const PyTape& t) { return t.tape.final_state(); })
        .def_property_readonly("rejected_steps", [](const PyTape& t) { return t.tape.rejected_steps; })
        .def("dense", [](const PyTape& t, double time) { return dense_eval(t.tape, time); }, py::arg("t"))
        .def("to_json", [](const PyTape& t) { return tape_to_json(t.tape, t.spec, t.settings); });

    py::class_<PyAdjoint>(m, "AdjointResult")
        .def_property_readonly("gradient", [](const PyAdjoint& a) { return a.adjoints.gradient; })
        .def_property_readonly("lambdas", [](const PyAdjoint& a) { return stack_rows(a.adjoints.lambdas); })
        .def_property_readonly("jump_times", [](const PyAdjoint& a) { return a.weak.jump_times(); })
        .def("weak_adjoint", [](const PyAdjoint& a, double t) { return a.weak.eval(t); }, py::arg("t"))
        .def(
            "weak_adjoint_error",
            [](const PyAdjoint& a, double t) { return pointwise_error(a.weak, build_problem(a.spec).reference, t); },
            py::arg("t"));

    py::class_<KktResidualReport>(m, "KktReport")
        .def_readonly("nominal_residual", &KktResidualReport::nominal_residual)
        .def_readonly("adjoint_residual", &KktResidualReport::adjoint_residual)
        .def_readonly("initial_residual", &KktResidualReport::initial_residual)
        .def_readonly("gradient_residual", &KktResidualReport::gradient_residual)
        .def_readonly("adjoint_threshold", &KktResidualReport::adjoint_threshold)
        .def_readonly("nominal_within_tolerance", &KktResidualReport::nominal_within_tolerance)
        .def_readonly("assembled", &KktResidualReport::assembled)
        .def_property_readonly("passed", &KktResidualReport::passed);

    m.def("integrate", &integrate_py, py::arg("problem"), py::arg("mode") = "nonadaptive", py::arg("order") = 2,
          py::arg("h") = py::none(), py::arg("rtol") = py::none(), py::arg("atol") = py::none(),
          "Forward integration; returns the tape.");
    m.def("adjoint", &adjoint_py, py::arg("tape"), "Discrete adjoint sweep over a tape.");
    m.def(
        "verify",
        [](const PyTape& tape, const PyAdjoint& adj) {
            if (adj.digest != tape_digest(tape.tape)) {
                throw std::invalid_argument("adjoint does not belong to this tape");
            }
            return verify_kkt(build_problem(tape.spec).problem, tape.tape, adj.adjoints);
        },
        py::arg("tape"), py::arg("adjoint"), "Residuals of the discretized optimality conditions.");
    m.def(
        "tape_from_json",
        [](const std::string& text) {
            auto loaded = tape_from_json(text);
            return PyTape{std::move(loaded.tape), std::move(loaded.problem), loaded.settings};
        },
        py::arg("text"));
    m.def(
        "coefficients",
        [](const std::vector<double>& nodes, int order) { return compute_coefficients(nodes, order).alpha; },
        py::arg("nodes"), py::arg("order"), "BDF coefficients alpha_0..alpha_k for nodes t_{n+1-k}..t_{n+1}.");
    m.def(
        "fit_order",
        [](const std::vector<double>& h, const std::vector<double>& errors) {
            if (h.size() != errors.size()) {
                throw std::invalid_argument("h and errors differ in length");
            }
            ConvergenceTable table;
            for (std::size_t i = 0; i < h.size(); ++i) {
                table.add(h[i], errors[i]);
            }
            return fit_order(table);
        },
        py::arg("h"), py::arg("errors"));
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> full{"bdfadj"};
            full.insert(full.end(), args.begin(), args.end());
            std::vector<const char*> argv;
            for (const auto& a : full) {
                argv.push_back(a.c_str());
            }
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line interface; returns (exit_code, stdout, stderr).");
}
