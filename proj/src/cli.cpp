#include "bdfadj/cli.hpp"

#include "bdfadj/adjoint.hpp"
#include "bdfadj/analysis.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <future>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace bdfadj {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_plain(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') {
        ++first;
    }
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ConfigError("not a number: '" + s + "'");
    }
    return v;
}

// Section owning each key; keys outside this table are rejected.
const std::map<std::string, std::string>& key_sections() {
    static const std::map<std::string, std::string> table = {
        {"problem", "problem"},   {"name", "problem"},      {"p", "problem"},
        {"A", "problem"},         {"tf", "problem"},        {"ts", "problem"},
        {"a", "problem"},         {"c", "problem"},         {"ys", "problem"},
        {"mode", "integrator"},   {"order", "integrator"},  {"h", "integrator"},
        {"rtol", "integrator"},   {"atol", "integrator"},   {"probe", "output"},
        {"tape", "output"},       {"adjoint-file", "output"}, {"out", "output"},
    };
    return table;
}

const std::set<std::string> kProblemKeys = {"problem", "name", "p", "A", "tf", "ts", "a", "c", "ys"};

int parse_int(const std::string& s) {
    const double v = parse_number(s);
    if (v != std::floor(v) || std::abs(v) > 1e9) {
        throw ConfigError("expected an integer: '" + s + "'");
    }
    return static_cast<int>(v);
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) {
            out += ",";
        }
        out += p;
    }
    return out;
}

struct SweepPoint {
    double parameter = 0.0;
    bool failed = false;
    std::string failure;
    double error_tf = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> error_probe;
};

SweepPoint run_point(const ExperimentConfig& config, double parameter, const std::vector<double>& interior) {
    SweepPoint point;
    point.parameter = parameter;
    point.error_probe.assign(interior.size(), std::numeric_limits<double>::quiet_NaN());
    try {
        const auto pr = build_problem(config.problem);
        IntegrationTape tape;
        if (config.mode == IntegrationMode::nonadaptive) {
            tape = integrate_nonadaptive(pr.problem, config.order, parameter);
        } else {
            AdaptiveOptions opts;
            opts.rtol = parameter;
            opts.atol = *config.atol;
            tape = integrate_adaptive(pr.problem, opts);
        }
        const auto adjoints = adjoint_sweep(pr.problem, tape);
        const auto weak = assemble_weak_adjoint(tape, adjoints);
        point.error_tf = pointwise_error(weak, pr.reference, pr.problem.t_final());
        for (std::size_t i = 0; i < interior.size(); ++i) {
            point.error_probe[i] = pointwise_error(weak, pr.reference, interior[i]);
        }
    } catch (const std::exception& e) {
        point.failed = true;
        point.failure = e.what();
    }
    return point;
}

std::string csv_cell(double v) { return format_double(v); }

std::string probe_label(double t) { return "t" + format_double(t); }

int cmd_integrate(const ExperimentConfig& config, std::ostream& out) {
    const auto pr = build_problem(config.problem);
    IntegrationTape tape;
    RunSettings settings;
    if (config.mode == IntegrationMode::nonadaptive) {
        tape = integrate_nonadaptive(pr.problem, config.order, config.h.front());
        settings.order = config.order;
        settings.h = config.h.front();
    } else {
        AdaptiveOptions opts;
        opts.rtol = config.rtol.front();
        opts.atol = *config.atol;
        tape = integrate_adaptive(pr.problem, opts);
        settings.rtol = opts.rtol;
        settings.atol = opts.atol;
    }
    write_file(config.tape_path, tape_to_json(tape, config.problem, settings));

    double worst_ratio = 0.0;
    int max_iterations = 0;
    for (const auto& n : tape.newton) {
        if (n.tolerance > 0.0) {
            worst_ratio = std::max(worst_ratio, n.residual / n.tolerance);
        }
        max_iterations = std::max(max_iterations, n.iterations);
    }
    out << "steps: " << tape.steps() << "\n";
    out << "orders: " << tape.min_order() << ".." << tape.max_order() << "\n";
    out << "rejected_steps: " << tape.rejected_steps << "\n";
    out << "newton_iterations_total: " << tape.total_newton_iterations() << "\n";
    out << "newton_iterations_max: " << max_iterations << "\n";
    out << "newton_residual_over_tolerance_max: " << format_double(worst_ratio) << "\n";
    out << "y_final: [";
    for (Eigen::Index i = 0; i < tape.final_state().size(); ++i) {
        out << (i ? ", " : "") << format_double(tape.final_state()(i));
    }
    out << "]\n";
    out << "tape: " << config.tape_path << "\n";
    return kExitOk;
}

std::string default_csv_path(const std::string& json_path) {
    const auto dot = json_path.rfind('.');
    const auto slash = json_path.find_last_of("/\\");
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
        return json_path.substr(0, dot) + ".csv";
    }
    return json_path + ".csv";
}

int cmd_adjoint(const ExperimentConfig& config, const std::map<std::string, std::string>& given,
                std::ostream& out) {
    const LoadedTape loaded = tape_from_json(read_file(config.tape_path));
    const bool problem_given = std::any_of(given.begin(), given.end(), [](const auto& kv) {
        return kProblemKeys.count(kv.first) > 0;
    });
    if (problem_given && !(config.problem == loaded.problem)) {
        throw ConfigError("tape was recorded for a different problem than the one configured");
    }
    const auto pr = build_problem(loaded.problem);
    if (pr.problem.dimension() != loaded.tape.dimension()) {
        throw ConfigError("tape dimension does not match the problem");
    }
    if (pr.problem.t_start() != loaded.tape.t_start() || pr.problem.t_final() != loaded.tape.t_final()) {
        throw ConfigError("tape interval does not match the problem");
    }
    for (double t : config.probes) {
        if (!(t >= loaded.tape.t_start() && t <= loaded.tape.t_final())) {
            throw ConfigError("probe time " + format_double(t) + " outside [t_s, t_f]");
        }
    }
    const auto adjoints = adjoint_sweep(pr.problem, loaded.tape);
    const auto weak = assemble_weak_adjoint(loaded.tape, adjoints);
    write_file(config.adjoint_path,
               adjoint_to_json(loaded.tape, adjoints, weak, loaded.problem, config.probes));
    const std::string csv_path = config.out_path.empty() ? default_csv_path(config.adjoint_path) : config.out_path;
    write_file(csv_path, adjoint_csv(loaded.tape, adjoints, weak, &pr.reference));

    out << "steps: " << adjoints.steps() << "\n";
    out << "gradient: [";
    for (Eigen::Index i = 0; i < adjoints.gradient.size(); ++i) {
        out << (i ? ", " : "") << format_double(adjoints.gradient(i));
    }
    out << "]\n";
    for (double t : config.probes) {
        out << "Lambda_h(" << format_double(t) << "): [";
        const Vector v = weak.eval(t);
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            out << (i ? ", " : "") << format_double(v(i));
        }
        out << "] error: " << format_double(pointwise_error(weak, pr.reference, t)) << "\n";
    }
    out << "adjoint: " << config.adjoint_path << "\n";
    out << "csv: " << csv_path << "\n";
    return kExitOk;
}

int cmd_converge(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    const bool adaptive = config.mode == IntegrationMode::adaptive;
    std::vector<double> params = adaptive ? config.rtol : config.h;
    std::sort(params.begin(), params.end(), std::greater<>());

    const double ts = config.problem.name == "catenary" ? 0.0 : config.problem.t_start;
    const double tf = config.problem.t_final;
    std::vector<double> interior;
    for (double t : config.probes) {
        if (t != tf && std::find(interior.begin(), interior.end(), t) == interior.end()) {
            interior.push_back(t);
        }
    }
    if (interior.empty()) {
        interior.push_back(ts + 0.625 * (tf - ts));
    }

    std::vector<std::future<SweepPoint>> futures;
    futures.reserve(params.size());
    for (double v : params) {
        futures.push_back(std::async(std::launch::async, run_point, std::cref(config), v, std::cref(interior)));
    }
    std::vector<SweepPoint> points;
    for (auto& f : futures) {
        points.push_back(f.get());
    }

    ConvergenceTable tf_table;
    std::vector<ConvergenceTable> probe_tables(interior.size());
    for (const auto& p : points) {
        tf_table.add(p.parameter, p.error_tf);
        for (std::size_t i = 0; i < interior.size(); ++i) {
            probe_tables[i].add(p.parameter, p.error_probe[i]);
        }
    }

    std::string csv = adaptive ? "rtol" : "h";
    csv += ",error_tf,order_tf,error_interior,order_interior";
    for (std::size_t i = 1; i < interior.size(); ++i) {
        csv += ",error_" + probe_label(interior[i]) + ",order_" + probe_label(interior[i]);
    }
    csv += "\n";
    for (std::size_t r = 0; r < points.size(); ++r) {
        csv += csv_cell(points[r].parameter);
        csv += "," + csv_cell(tf_table.error[r]) + "," + csv_cell(tf_table.observed_order(r));
        for (std::size_t i = 0; i < interior.size(); ++i) {
            csv += "," + csv_cell(probe_tables[i].error[r]) + "," + csv_cell(probe_tables[i].observed_order(r));
        }
        csv += "\n";
    }

    std::ostream& summary = config.out_path.empty() ? err : out;
    if (config.out_path.empty()) {
        out << csv;
    } else {
        write_file(config.out_path, csv);
    }

    std::size_t failures = 0;
    for (const auto& p : points) {
        if (p.failed) {
            ++failures;
            err << "warning: sweep point " << format_double(p.parameter) << " failed: " << p.failure << "\n";
        }
    }
    summary << "interior_probe: " << format_double(interior.front()) << "\n";
    auto report_fit = [&](const std::string& label, const ConvergenceTable& table) {
        double largest = 0.0;
        for (double e : table.error) {
            if (std::isfinite(e)) {
                largest = std::max(largest, e);
            }
        }
        if (table.rows() < 3) {
            err << "warning: " << label << ": fewer than three sweep points, fit skipped\n";
            return;
        }
        if (largest <= 1e-12) {
            err << "warning: " << label << ": errors at machine precision, fit skipped\n";
            return;
        }
        std::vector<std::string> warnings;
        const double slope = fit_order(table, &warnings);
        for (const auto& w : warnings) {
            err << "warning: " << label << ": " << w << "\n";
        }
        summary << "fitted_order_" << label << ": " << format_double(slope) << "\n";
    };
    report_fit("tf", tf_table);
    report_fit("interior", probe_tables.front());
    for (std::size_t i = 1; i < interior.size(); ++i) {
        report_fit(probe_label(interior[i]), probe_tables[i]);
    }
    if (failures == points.size()) {
        err << "error: every sweep point failed\n";
        return kExitSolver;
    }
    return kExitOk;
}

int cmd_verify(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    const LoadedTape loaded = tape_from_json(read_file(config.tape_path));
    const LoadedAdjoint adj = adjoint_from_json(read_file(config.adjoint_path));
    if (adj.tape_digest != tape_digest(loaded.tape) || adj.adjoints.steps() != loaded.tape.steps() ||
        adj.adjoints.gradient.size() != loaded.tape.dimension()) {
        throw ConfigError("adjoint file does not belong to this tape");
    }
    const auto pr = build_problem(loaded.problem);
    const auto report = verify_kkt(pr.problem, loaded.tape, adj.adjoints);
    const double defect = max_coefficient_defect(loaded.tape);
    constexpr double kCoefficientTolerance = 1e-12;
    const std::string text = kkt_to_json(report, defect, kCoefficientTolerance);
    if (config.out_path.empty()) {
        out << text;
    } else {
        write_file(config.out_path, text);
    }
    bool ok = true;
    if (!report.nominal_within_tolerance) {
        err << "verification failed: nominal_residual " << format_double(report.nominal_residual)
            << " (step " << report.worst_nominal_step << " exceeds 10x its Newton tolerance)\n";
        ok = false;
    }
    if (report.adjoint_residual > report.adjoint_threshold) {
        err << "verification failed: adjoint_residual " << format_double(report.adjoint_residual)
            << " > " << format_double(report.adjoint_threshold) << "\n";
        ok = false;
    }
    if (report.gradient_residual > report.adjoint_threshold) {
        err << "verification failed: gradient_residual " << format_double(report.gradient_residual)
            << " > " << format_double(report.adjoint_threshold) << "\n";
        ok = false;
    }
    if (report.initial_residual != 0.0) {
        err << "verification failed: initial_residual " << format_double(report.initial_residual) << "\n";
        ok = false;
    }
    if (!(defect <= kCoefficientTolerance)) {
        err << "verification failed: coefficient_defect " << format_double(defect) << "\n";
        ok = false;
    }
    return ok ? kExitOk : kExitVerification;
}

} // namespace

double parse_number(const std::string& text) {
    const std::string s = trim(text);
    if (s.empty()) {
        throw ConfigError("empty number");
    }
    const auto caret = s.find('^');
    if (caret != std::string::npos) {
        const double base = parse_plain(trim(s.substr(0, caret)));
        const double expo = parse_plain(trim(s.substr(caret + 1)));
        return std::pow(base, expo);
    }
    return parse_plain(s);
}

std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_number(item));
    }
    if (out.empty()) {
        throw ConfigError("empty list");
    }
    return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> values;
    std::stringstream ss(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(where + "unterminated section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section != "problem" && section != "integrator" && section != "output") {
                throw ConfigError(where + "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + "expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto it = key_sections().find(key);
        if (it == key_sections().end()) {
            throw ConfigError(where + "unknown key '" + key + "'");
        }
        if (!section.empty() && it->second != section) {
            throw ConfigError(where + "key '" + key + "' belongs to section [" + it->second + "]");
        }
        if (key == "probe" && values.count(key)) {
            values[key] += "," + value;
        } else {
            values[key] = value;
        }
    }
    return values;
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        if (key == "problem" || key == "name") {
            problem.name = value;
        } else if (key == "p") {
            problem.p = parse_number(value);
        } else if (key == "A") {
            problem.shift_a = parse_number(value);
        } else if (key == "tf") {
            problem.t_final = parse_number(value);
        } else if (key == "ts") {
            problem.t_start = parse_number(value);
        } else if (key == "a") {
            problem.a = parse_number_list(value);
        } else if (key == "c") {
            problem.c = parse_number_list(value);
        } else if (key == "ys") {
            problem.y_start = parse_number_list(value);
        } else if (key == "mode") {
            if (value == "nonadaptive") {
                mode = IntegrationMode::nonadaptive;
            } else if (value == "adaptive") {
                mode = IntegrationMode::adaptive;
            } else {
                throw ConfigError("mode must be nonadaptive or adaptive, got '" + value + "'");
            }
        } else if (key == "order") {
            order = parse_int(value);
        } else if (key == "h") {
            h = parse_number_list(value);
        } else if (key == "rtol") {
            rtol = parse_number_list(value);
        } else if (key == "atol") {
            atol = parse_number(value);
        } else if (key == "probe") {
            probes = parse_number_list(value);
        } else if (key == "tape") {
            tape_path = value;
        } else if (key == "adjoint-file") {
            adjoint_path = value;
        } else if (key == "out") {
            out_path = value;
        } else {
            throw ConfigError("unknown key '" + key + "'");
        }
    }
}

void validate_config(const ExperimentConfig& config, Command command) {
    auto need_path = [](const std::string& path, const char* flag) {
        if (path.empty()) {
            throw ConfigError(std::string("missing ") + flag);
        }
    };
    if (command == Command::adjoint) {
        need_path(config.tape_path, "--tape");
        need_path(config.adjoint_path, "--adjoint-file");
        return;
    }
    if (command == Command::verify) {
        need_path(config.tape_path, "--tape");
        need_path(config.adjoint_path, "--adjoint-file");
        return;
    }

    const auto& pb = config.problem;
    if (pb.name != "catenary" && pb.name != "linear") {
        throw ConfigError("unknown problem '" + pb.name + "' (expected catenary or linear)");
    }
    if (pb.name == "catenary" && !(pb.p > 0.0)) {
        throw ConfigError("p must be positive");
    }
    const double ts = pb.name == "catenary" ? 0.0 : pb.t_start;
    if (!(pb.t_final > ts)) {
        throw ConfigError("tf must exceed the start time");
    }
    for (double t : config.probes) {
        if (!(t >= ts && t <= pb.t_final)) {
            throw ConfigError("probe time " + format_double(t) + " outside [t_s, t_f]");
        }
    }

    const bool sweep = command == Command::converge;
    if (config.mode == IntegrationMode::nonadaptive) {
        if (config.order < 1 || config.order > kMaxOrder) {
            throw ConfigError("order must lie in [1, 6]");
        }
        if (config.h.empty()) {
            throw ConfigError("nonadaptive mode requires --h");
        }
        for (double h : config.h) {
            if (!(h > 0.0) || !std::isfinite(h)) {
                throw ConfigError("h must be positive, got " + format_double(h));
            }
            if (h > pb.t_final - ts) {
                throw ConfigError("h exceeds the integration interval");
            }
        }
        if (!sweep && config.h.size() != 1) {
            throw ConfigError("integrate takes a single --h value");
        }
        if (sweep && std::set<double>(config.h.begin(), config.h.end()).size() < 3) {
            throw ConfigError("converge needs at least three distinct h values");
        }
    } else {
        if (config.rtol.empty() || !config.atol) {
            throw ConfigError("adaptive mode requires --rtol and --atol");
        }
        for (double r : config.rtol) {
            if (!(r > 0.0) || !std::isfinite(r)) {
                throw ConfigError("rtol must be positive");
            }
        }
        if (!(*config.atol > 0.0)) {
            throw ConfigError("atol must be positive");
        }
        if (!sweep && config.rtol.size() != 1) {
            throw ConfigError("integrate takes a single --rtol value");
        }
        if (sweep && std::set<double>(config.rtol.begin(), config.rtol.end()).size() < 2) {
            throw ConfigError("adaptive converge needs at least two distinct rtol values");
        }
    }
    if (command == Command::integrate) {
        need_path(config.tape_path, "--tape");
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Variable-order BDF integration with discrete adjoints"};
    app.require_subcommand(1);
    // "-h" would clash with the stepsize flag.
    app.set_help_flag("--help", "Print this help message and exit");

    struct Flags {
        std::map<std::string, std::string> given;
        std::vector<std::string> probes;
        std::string config_path;
    };
    Flags flags;
    std::map<std::string, std::string> raw;

    const std::vector<std::pair<std::string, Command>> commands = {
        {"integrate", Command::integrate},
        {"adjoint", Command::adjoint},
        {"converge", Command::converge},
        {"verify", Command::verify},
    };
    const std::map<std::string, std::string> descriptions = {
        {"integrate", "Run the forward integration and write the tape"},
        {"adjoint", "Run the adjoint sweep on a tape; write adjoint JSON and CSV"},
        {"converge", "Sweep h (or rtol) and tabulate weak-adjoint errors"},
        {"verify", "Check the assembled optimality conditions of a tape/adjoint pair"},
    };
    const std::vector<std::pair<std::string, std::string>> value_flags = {
        {"problem", "Problem name: catenary or linear"},
        {"p", "Catenary parameter p > 0"},
        {"A", "Catenary shift A"},
        {"tf", "Final time"},
        {"mode", "nonadaptive or adaptive"},
        {"order", "BDF order for nonadaptive runs"},
        {"h", "Stepsize; a comma list for converge"},
        {"rtol", "Relative tolerance; a comma list for converge"},
        {"atol", "Absolute tolerance"},
        {"tape", "Tape JSON path"},
        {"adjoint-file", "Adjoint JSON path"},
        {"out", "Output path"},
    };
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, cmd] : commands) {
        auto* sub = app.add_subcommand(name, descriptions.at(name));
        for (const auto& [flag, help] : value_flags) {
            sub->add_option("--" + flag, raw[flag], help);
        }
        sub->add_option("--probe", flags.probes, "Probe time (repeatable)");
        sub->add_option("--config", flags.config_path, "key=value config file");
        subs[name] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    Command command = Command::integrate;
    CLI::App* active = nullptr;
    for (const auto& [name, cmd] : commands) {
        if (subs[name]->parsed()) {
            command = cmd;
            active = subs[name];
        }
    }
    for (const auto& [flag, help] : value_flags) {
        if (active->count("--" + flag) > 0) {
            flags.given[flag] = raw[flag];
        }
    }
    if (!flags.probes.empty()) {
        flags.given["probe"] = join(flags.probes);
    }

    ExperimentConfig config;
    std::map<std::string, std::string> merged;
    try {
        if (!flags.config_path.empty()) {
            merged = parse_config_text(read_file(flags.config_path));
        }
        for (const auto& [k, v] : flags.given) {
            merged[k] = v;
        }
        config.apply(merged);
        validate_config(config, command);
    } catch (const std::exception& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        switch (command) {
        case Command::integrate:
            return cmd_integrate(config, out);
        case Command::adjoint:
            return cmd_adjoint(config, merged, out);
        case Command::converge:
            return cmd_converge(config, out, err);
        case Command::verify:
            return cmd_verify(config, out, err);
        }
    } catch (const SolverError& e) {
        err << "solver failure";
        if (e.step() >= 0) {
            err << " at step " << e.step();
        }
        err << ": " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

} // namespace bdfadj
