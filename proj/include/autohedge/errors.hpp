#pragma once

#include <stdexcept>
#include <string>

namespace autohedge {

/// Rejected input: violated precondition or invariant of a domain type.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Query outside the region an approximation was built for.
class ExtrapolationError : public std::out_of_range {
public:
    explicit ExtrapolationError(const std::string& what) : std::out_of_range(what) {}
};

/// Numerical failure during a computation (divergence, non-finite values).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

}  // namespace autohedge
