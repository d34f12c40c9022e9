#pragma once

#include "bdfadj/bdf.hpp"
#include "bdfadj/io.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bdfadj {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitSolver = 2,
    kExitVerification = 3,
};

/// Thrown for malformed configuration or flags; maps to kExitUsage.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses a number; besides the usual decimal forms accepts powers written
/// as "b^e" (e.g. "2^-4").
double parse_number(const std::string& text);

/// Comma-separated list of numbers.
std::vector<double> parse_number_list(const std::string& text);

/// key=value pairs of a config file, keyed by option name. Section headers
/// ([problem], [integrator], [output]) are optional; a key placed under the
/// wrong section is an error. Lines starting with '#' or ';' are comments.
std::map<std::string, std::string> parse_config_text(const std::string& text);

struct ExperimentConfig {
    ProblemSpec problem;
    IntegrationMode mode = IntegrationMode::nonadaptive;
    int order = 2;
    std::vector<double> h;    // one value for integrate, a sweep for converge
    std::vector<double> rtol; // likewise
    std::optional<double> atol;
    std::vector<double> probes;
    std::string tape_path;
    std::string adjoint_path;
    std::string out_path;

    /// Applies key=value settings (from a file or flags) on top of this config.
    void apply(const std::map<std::string, std::string>& values);
};

enum class Command { integrate, adjoint, converge, verify };

/// Checks the fields a command needs. Throws ConfigError.
void validate_config(const ExperimentConfig& config, Command command);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace bdfadj
