#pragma once

#include <stdexcept>
#include <string>

namespace sds {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration: bad sparsity pattern, bad hyperparameter ranges.
/// Maps to CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shape mismatches between matrices, layers or calibration data.
/// Maps to CLI exit code 2.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed container or manifest files.
enum class FormatIssue {
    BadMagic,
    BadVersion,
    Truncated,
    DuplicateName,
    EmptyName,
    BadDtype,
    BadShape,
    Io,
};

/// Maps to CLI exit code 2.
class FormatError : public Error {
public:
    FormatError(FormatIssue issue, const std::string& msg) : Error(msg), issue_(issue) {}
    FormatIssue issue() const { return issue_; }

private:
    FormatIssue issue_;
};

/// Numerical failures: Cholesky breakdown, ill-conditioned pivots,
/// diverging optimization, non-finite values. Maps to CLI exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace sds
