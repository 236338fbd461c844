#pragma once

#include <stdexcept>
#include <string>

namespace pumba {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Violated operation preconditions (non-positive delta, empty input, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid API usage ordering (double backward without reset, ...).
struct StateError : Error {
    using Error::Error;
};

// Bad configuration: CLI flags, config files, group specs.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset / checkpoint format and IO problems.
struct DataError : Error {
    using Error::Error;
};

// Metric undefined for the given inputs (single-class AUC, no positives).
struct MetricError : Error {
    using Error::Error;
};

// Non-finite losses and other unrecoverable optimization states.
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace pumba
