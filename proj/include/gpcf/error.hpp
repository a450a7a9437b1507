#pragma once

#include <stdexcept>
#include <string>

namespace gpcf {

// Exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, usage = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Bad call arguments or an invalid configuration value.
class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& what) : Error(ExitCode::usage, what) {}
};

/// Malformed input file (missing column, unparsable number).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Well-formed input that violates a data invariant.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Cholesky exhaustion, non-finite activations, NaN losses.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

}  // namespace gpcf
