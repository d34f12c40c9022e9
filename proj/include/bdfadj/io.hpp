#pragma once

#include "bdfadj/adjoint.hpp"
#include "bdfadj/analysis.hpp"
#include "bdfadj/bdf.hpp"
#include "bdfadj/ode_model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bdfadj {

inline constexpr int kTapeFormatVersion = 1;
inline constexpr int kAdjointFormatVersion = 1;

/// Named problem with its parameters; enough to rebuild the OdeProblem.
struct ProblemSpec {
    std::string name = "catenary";
    // catenary
    double p = 3.0;
    double shift_a = -3.0;
    // linear: a is row-major d x d
    std::vector<double> a;
    std::vector<double> c;
    std::vector<double> y_start;
    double t_start = 0.0;
    double t_final = 2.0;

    bool operator==(const ProblemSpec&) const = default;
};

/// Throws std::invalid_argument for unknown names or inconsistent parameters.
ProblemWithReference build_problem(const ProblemSpec& spec);

/// Driver settings recorded with a tape.
struct RunSettings {
    std::optional<int> order;
    std::optional<double> h;
    std::optional<double> rtol;
    std::optional<double> atol;
};

/// Shortest decimal string that parses back to the same double; "nan",
/// "inf", "-inf" for non-finite values.
std::string format_double(double value);

std::string tape_to_json(const IntegrationTape& tape, const ProblemSpec& spec,
                         const RunSettings& settings);

struct LoadedTape {
    IntegrationTape tape;
    ProblemSpec problem;
    RunSettings settings;
};

/// Parses and validates a tape document: format tag and version, array
/// sizes, grid invariants, and stored coefficients against the ones
/// recomputed from the nodes. Throws std::invalid_argument on any violation.
LoadedTape tape_from_json(const std::string& text);

/// Digest of a tape's grid (nodes, orders) and dimension; stored in adjoint
/// files to detect that they were computed for a different run.
std::string tape_digest(const IntegrationTape& tape);

std::string adjoint_to_json(const IntegrationTape& tape, const DiscreteAdjoints& adjoints,
                            const WeakAdjoint& weak, const ProblemSpec& spec,
                            const std::vector<double>& probes);

struct LoadedAdjoint {
    DiscreteAdjoints adjoints;
    std::string tape_digest;
};

LoadedAdjoint adjoint_from_json(const std::string& text);

/// Rows t_n, lambda_n, Lambda^h(t_n) and, when a reference is given, the
/// analytic lambda(t_n) and Lambda(t_n). The first row is t_s with no lambda.
std::string adjoint_csv(const IntegrationTape& tape, const DiscreteAdjoints& adjoints,
                        const WeakAdjoint& weak, const AnalyticReference* reference);

std::string kkt_to_json(const KktResidualReport& report, double coefficient_defect,
                        double coefficient_tolerance);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

} // namespace bdfadj
