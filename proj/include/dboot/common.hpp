#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dboot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Configuration that cannot be acted on (bad sizes, bad ranges, unknown keys).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or other numerical breakdown, with context of where.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched shapes between containers that must agree.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal invariant (caller bug rather than user input).
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

}  // namespace dboot
