#pragma once

#include <stdexcept>
#include <string>

namespace mapl {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    numeric = 4,
};

/// Base class for every error raised by the library. Each error carries the
/// exit code the CLI reports for it.
class Error : public std::runtime_error {
public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Invalid argument to an operation (shape mismatch, bad frequency, ...).
class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& what) : Error("parameter error: " + what, ExitCode::config) {}
};

/// Bad or inconsistent configuration (unknown key, out-of-range value, empty pool).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what, ExitCode::config) {}
};

/// Operation invoked on an object in the wrong state (empty memory bank, ...).
class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error("state error: " + what, ExitCode::config) {}
};

/// Dataset directory tree does not match the expected layout.
class DatasetLayoutError : public Error {
public:
    explicit DatasetLayoutError(const std::string& what) : Error("dataset layout error: " + what, ExitCode::data) {}
};

/// File could not be read, decoded or written.
class FileError : public Error {
public:
    explicit FileError(const std::string& what) : Error("file error: " + what, ExitCode::data) {}
};

/// Metric undefined for the given input (single-class AUROC).
class UndefinedMetricError : public Error {
public:
    explicit UndefinedMetricError(const std::string& what) : Error("undefined metric: " + what, ExitCode::data) {}
};

/// Non-finite value encountered during training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric failure: " + what, ExitCode::numeric) {}
};

/// Checkpoint is truncated, corrupted or of an unsupported version.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& what) : Error("checkpoint error: " + what, ExitCode::data) {}
};

}  // namespace mapl
