#pragma once

#include <stdexcept>
#include <string>

namespace banforge {

// Malformed arguments, shape mismatches, out-of-range values. Exit code 2.
class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A library-produced value left the finite domain (NaN/Inf). Exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A training run produced a non-finite loss and was aborted.
class DivergenceError : public NumericError {
public:
    explicit DivergenceError(const std::string& msg) : NumericError(msg) {}
};

// Bad run manifest or incompatible run configuration. Exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data or checkpoint file contents. Exit code 4.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures. Exit code 4.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace banforge
