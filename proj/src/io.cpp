#include "bdfadj/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bdfadj {

using nlohmann::json;

namespace {

void append_double(std::string& out, double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    out.append(buf, res.ptr);
}

// Serializer with shortest round-trip doubles; non-finite numbers become null.
void dump(const json& j, std::string& out, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
    case json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{";
        out += nl;
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) {
                out += ",";
                out += nl;
            }
            first = false;
            out += pad;
            out += json(it.key()).dump();
            out += indent > 0 ? ": " : ":";
            dump(it.value(), out, indent, depth + 1);
        }
        out += nl;
        out += close_pad;
        out += "}";
        return;
    }
    case json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        // Arrays of scalars stay on one line.
        const bool flat = std::all_of(j.begin(), j.end(), [](const json& e) { return !e.is_structured(); });
        out += "[";
        bool first = true;
        for (const auto& e : j) {
            if (!first) {
                out += flat ? ", " : ",";
            }
            if (!flat) {
                out += nl;
                out += pad;
            }
            first = false;
            dump(e, out, indent, depth + 1);
        }
        if (!flat) {
            out += nl;
            out += close_pad;
        }
        out += "]";
        return;
    }
    case json::value_t::number_float: {
        const double v = j.get<double>();
        if (std::isfinite(v)) {
            append_double(out, v);
        } else {
            out += "null";
        }
        return;
    }
    default:
        out += j.dump();
    }
}

std::string to_text(const json& j) {
    std::string out;
    dump(j, out, 2, 0);
    out += "\n";
    return out;
}

json vector_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        arr.push_back(v(i));
    }
    return arr;
}

Vector vector_from(const json& j, Eigen::Index expected, const char* what) {
    if (!j.is_array() || (expected >= 0 && static_cast<Eigen::Index>(j.size()) != expected)) {
        throw std::invalid_argument(std::string("malformed ") + what);
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) {
            throw std::invalid_argument(std::string("non-numeric entry in ") + what);
        }
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

json spec_json(const ProblemSpec& spec) {
    json j;
    j["name"] = spec.name;
    if (spec.name == "catenary") {
        j["p"] = spec.p;
        j["A"] = spec.shift_a;
    } else {
        j["a"] = spec.a;
        j["c"] = spec.c;
        j["ys"] = spec.y_start;
        j["ts"] = spec.t_start;
    }
    j["tf"] = spec.t_final;
    return j;
}

ProblemSpec spec_from(const json& j) {
    ProblemSpec s;
    s.name = j.at("name").get<std::string>();
    s.t_final = j.at("tf").get<double>();
    if (s.name == "catenary") {
        s.p = j.at("p").get<double>();
        s.shift_a = j.at("A").get<double>();
    } else {
        s.a = j.at("a").get<std::vector<double>>();
        s.c = j.at("c").get<std::vector<double>>();
        s.y_start = j.at("ys").get<std::vector<double>>();
        s.t_start = j.at("ts").get<double>();
    }
    return s;
}

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("invalid JSON: ") + e.what());
    }
}

void check_header(const json& j, const char* format, int version) {
    if (!j.is_object() || !j.contains("format") || j["format"] != format) {
        throw std::invalid_argument(std::string("not a ") + format + " document");
    }
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != version) {
        throw std::invalid_argument(std::string("unsupported ") + format + " version");
    }
}

} // namespace

ProblemWithReference build_problem(const ProblemSpec& spec) {
    if (spec.name == "catenary") {
        return catenary_problem(spec.p, spec.shift_a, spec.t_final);
    }
    if (spec.name == "linear") {
        const auto d = static_cast<Eigen::Index>(spec.y_start.size());
        if (d == 0 || static_cast<Eigen::Index>(spec.a.size()) != d * d ||
            static_cast<Eigen::Index>(spec.c.size()) != d) {
            throw std::invalid_argument("linear problem: a must be d*d, c and ys of length d");
        }
        Matrix a(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index col = 0; col < d; ++col) {
                a(r, col) = spec.a[static_cast<std::size_t>(r * d + col)];
            }
        }
        const Vector c = Eigen::Map<const Vector>(spec.c.data(), d);
        const Vector ys = Eigen::Map<const Vector>(spec.y_start.data(), d);
        return linear_test_problem(a, c, ys, spec.t_start, spec.t_final);
    }
    throw std::invalid_argument("unknown problem '" + spec.name + "' (expected catenary or linear)");
}

std::string format_double(double value) {
    if (std::isnan(value)) {
        return "nan";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    std::string out;
    append_double(out, value);
    return out;
}

std::string tape_digest(const IntegrationTape& tape) {
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&hash](const void* data, std::size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            hash ^= bytes[i];
            hash *= 1099511628211ULL;
        }
    };
    for (double t : tape.grid.nodes()) {
        mix(&t, sizeof t);
    }
    for (int k : tape.grid.orders()) {
        mix(&k, sizeof k);
    }
    const int d = tape.dimension();
    mix(&d, sizeof d);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::string tape_to_json(const IntegrationTape& tape, const ProblemSpec& spec,
                         const RunSettings& settings) {
    json j;
    j["format"] = "bdfadj-tape";
    j["version"] = kTapeFormatVersion;
    j["problem"] = spec_json(spec);
    j["mode"] = tape.mode == IntegrationMode::adaptive ? "adaptive" : "nonadaptive";
    json s = json::object();
    if (settings.order) s["order"] = *settings.order;
    if (settings.h) s["h"] = *settings.h;
    if (settings.rtol) s["rtol"] = *settings.rtol;
    if (settings.atol) s["atol"] = *settings.atol;
    j["settings"] = s;
    j["dimension"] = tape.dimension();
    j["steps"] = tape.steps();
    j["rejected_steps"] = tape.rejected_steps;
    j["nodes"] = tape.grid.nodes();
    j["stepsizes"] = tape.grid.stepsizes();
    j["orders"] = tape.grid.orders();
    json states = json::array();
    for (const auto& y : tape.states) {
        states.push_back(vector_json(y));
    }
    j["states"] = std::move(states);
    json coeffs = json::array();
    for (const auto& c : tape.coefficients) {
        coeffs.push_back(c.alpha);
    }
    j["coefficients"] = std::move(coeffs);
    json newton = json::array();
    for (const auto& n : tape.newton) {
        newton.push_back({{"iterations", n.iterations}, {"residual", n.residual}, {"tolerance", n.tolerance}});
    }
    j["newton"] = std::move(newton);
    return to_text(j);
}

LoadedTape tape_from_json(const std::string& text) {
    const json j = parse(text);
    check_header(j, "bdfadj-tape", kTapeFormatVersion);
    LoadedTape out;
    try {
        out.problem = spec_from(j.at("problem"));
        const auto& s = j.at("settings");
        if (s.contains("order")) out.settings.order = s["order"].get<int>();
        if (s.contains("h")) out.settings.h = s["h"].get<double>();
        if (s.contains("rtol")) out.settings.rtol = s["rtol"].get<double>();
        if (s.contains("atol")) out.settings.atol = s["atol"].get<double>();

        const std::string mode = j.at("mode").get<std::string>();
        if (mode != "adaptive" && mode != "nonadaptive") {
            throw std::invalid_argument("tape: unknown mode '" + mode + "'");
        }
        auto& tape = out.tape;
        tape.mode = mode == "adaptive" ? IntegrationMode::adaptive : IntegrationMode::nonadaptive;
        tape.rejected_steps = j.value("rejected_steps", 0);

        auto nodes = j.at("nodes").get<std::vector<double>>();
        auto orders = j.at("orders").get<std::vector<int>>();
        const auto steps = j.at("steps").get<std::size_t>();
        const auto d = j.at("dimension").get<int>();
        if (steps == 0) {
            throw std::invalid_argument("tape: empty tape");
        }
        if (orders.size() != steps || nodes.size() != steps + 1) {
            throw std::invalid_argument("tape: node/order counts disagree with steps");
        }
        tape.grid = TimeGrid(std::move(nodes), std::move(orders));

        const auto stepsizes = j.at("stepsizes").get<std::vector<double>>();
        if (stepsizes.size() != steps) {
            throw std::invalid_argument("tape: stepsize count disagrees with steps");
        }
        for (std::size_t n = 0; n < steps; ++n) {
            if (stepsizes[n] != tape.grid.stepsize(n)) {
                throw std::invalid_argument("tape: stepsizes inconsistent with nodes at step " +
                                            std::to_string(n));
            }
        }

        const auto& states = j.at("states");
        if (!states.is_array() || states.size() != steps + 1 || d <= 0) {
            throw std::invalid_argument("tape: state count must be steps + 1");
        }
        for (const auto& y : states) {
            tape.states.push_back(vector_from(y, d, "state"));
        }

        const auto& coeffs = j.at("coefficients");
        if (!coeffs.is_array() || coeffs.size() != steps) {
            throw std::invalid_argument("tape: one coefficient set per step required");
        }
        for (std::size_t n = 0; n < steps; ++n) {
            auto fresh = compute_coefficients(tape.grid.stencil(n), tape.grid.order(n));
            const auto stored = coeffs[n].get<std::vector<double>>();
            if (stored.size() != fresh.alpha.size()) {
                throw std::invalid_argument("tape: coefficient count wrong at step " + std::to_string(n));
            }
            double scale = 0.0;
            double diff = 0.0;
            for (std::size_t i = 0; i < stored.size(); ++i) {
                scale = std::max(scale, std::abs(fresh.alpha[i]));
                diff = std::max(diff, std::abs(stored[i] - fresh.alpha[i]));
            }
            if (!(diff <= 1e-12 * scale)) {
                throw std::invalid_argument("tape: stored coefficients disagree with nodes at step " +
                                            std::to_string(n));
            }
            tape.coefficients.push_back(std::move(fresh));
        }

        const auto& newton = j.at("newton");
        if (!newton.is_array() || newton.size() != steps) {
            throw std::invalid_argument("tape: one Newton record per step required");
        }
        for (const auto& rec : newton) {
            tape.newton.push_back({rec.at("iterations").get<int>(), rec.at("residual").get<double>(),
                                   rec.at("tolerance").get<double>()});
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("tape: ") + e.what());
    }
    return out;
}

std::string adjoint_to_json(const IntegrationTape& tape, const DiscreteAdjoints& adjoints,
                            const WeakAdjoint& weak, const ProblemSpec& spec,
                            const std::vector<double>& probes) {
    json j;
    j["format"] = "bdfadj-adjoint";
    j["version"] = kAdjointFormatVersion;
    j["problem"] = spec_json(spec);
    j["tape_digest"] = tape_digest(tape);
    j["steps"] = adjoints.steps();
    j["gradient"] = vector_json(adjoints.gradient);
    json lambdas = json::array();
    for (const auto& l : adjoints.lambdas) {
        lambdas.push_back(vector_json(l));
    }
    j["lambdas"] = std::move(lambdas);
    json weak_j;
    weak_j["t_start"] = weak.t_start();
    weak_j["jump_times"] = weak.jump_times();
    json jumps = json::array();
    json values = json::array();
    for (std::size_t n = 0; n < weak.jumps().size(); ++n) {
        jumps.push_back(vector_json(weak.jumps()[n]));
        values.push_back(vector_json(weak.value_at_node(n + 1)));
    }
    weak_j["jumps"] = std::move(jumps);
    weak_j["values"] = std::move(values);
    j["weak_adjoint"] = std::move(weak_j);
    json probe_j = json::array();
    for (double t : probes) {
        probe_j.push_back({{"t", t}, {"value", vector_json(weak.eval(t))}});
    }
    j["probes"] = std::move(probe_j);
    return to_text(j);
}

LoadedAdjoint adjoint_from_json(const std::string& text) {
    const json j = parse(text);
    check_header(j, "bdfadj-adjoint", kAdjointFormatVersion);
    LoadedAdjoint out;
    try {
        out.tape_digest = j.at("tape_digest").get<std::string>();
        const auto& lambdas = j.at("lambdas");
        if (!lambdas.is_array() || lambdas.empty()) {
            throw std::invalid_argument("adjoint: no lambdas");
        }
        out.adjoints.gradient = vector_from(j.at("gradient"), -1, "gradient");
        const auto d = out.adjoints.gradient.size();
        for (const auto& l : lambdas) {
            out.adjoints.lambdas.push_back(vector_from(l, d, "lambda"));
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("adjoint: ") + e.what());
    }
    return out;
}

std::string adjoint_csv(const IntegrationTape& tape, const DiscreteAdjoints& adjoints,
                        const WeakAdjoint& weak, const AnalyticReference* reference) {
    const int d = tape.dimension();
    std::string out = "t";
    auto header = [&](const char* prefix) {
        for (int i = 1; i <= d; ++i) {
            out += ",";
            out += prefix;
            out += std::to_string(i);
        }
    };
    header("lambda_");
    header("Lambda_h_");
    if (reference) {
        header("lambda_ref_");
        header("Lambda_ref_");
    }
    out += "\n";
    auto cells = [&](const Vector& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            out += ",";
            out += format_double(v(i));
        }
    };
    auto blank = [&] {
        for (int i = 0; i < d; ++i) {
            out += ",";
        }
    };
    for (std::size_t n = 0; n <= tape.steps(); ++n) {
        const double t = tape.grid.node(n);
        out += format_double(t);
        if (n == 0) {
            blank();
            cells(Vector::Zero(d));
        } else {
            cells(adjoints.lambda(n));
            cells(weak.value_at_node(n));
        }
        if (reference) {
            cells(reference->classical_adjoint(t));
            cells(reference->weak_adjoint(t));
        }
        out += "\n";
    }
    return out;
}

std::string kkt_to_json(const KktResidualReport& report, double coefficient_defect,
                        double coefficient_tolerance) {
    json j;
    j["format"] = "bdfadj-kkt";
    j["version"] = 1;
    j["nominal_residual"] = report.nominal_residual;
    j["adjoint_residual"] = report.adjoint_residual;
    j["initial_residual"] = report.initial_residual;
    j["gradient_residual"] = report.gradient_residual;
    j["nominal_within_tolerance"] = report.nominal_within_tolerance;
    j["worst_nominal_step"] = report.worst_nominal_step;
    j["worst_nominal_ratio"] = report.worst_nominal_ratio;
    j["adjoint_threshold"] = report.adjoint_threshold;
    j["adjoint_within_tolerance"] = report.adjoint_within_tolerance();
    j["assembled"] = report.assembled;
    j["coefficient_defect"] = coefficient_defect;
    j["coefficient_tolerance"] = coefficient_tolerance;
    const bool coeff_ok = coefficient_defect <= coefficient_tolerance;
    j["coefficients_within_tolerance"] = coeff_ok;
    j["passed"] = report.passed() && coeff_ok;
    return to_text(j);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << content;
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

} // namespace bdfadj
