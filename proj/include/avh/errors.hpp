#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avh {

// Numerical precondition violated (zero norm, |r| >= 1, zero variance, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Class index outside [0, C).
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Caller-supplied argument outside its contract.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Matrix / vector dimensions do not chain.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Run configuration rejected before any work starts.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data unusable for the requested run (missing column, unreadable file).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Computation produced non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace avh
