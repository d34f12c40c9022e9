#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdfadj {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an integration or adjoint run cannot proceed. `step()` is the
/// index n of the failing step (the one producing y_{n+1}), or -1 when the
/// failure is not tied to a step.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, long step = -1)
        : std::runtime_error(what), step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

inline double max_norm(const Vector& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

} // namespace bdfadj
