#pragma once

#include <stdexcept>
#include <string>

namespace flowlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad dimension, unknown class id,
/// time outside [0,1], malformed file, ...).
struct RejectedInput : Error {
    using Error::Error;
};

/// ODE stepping failed; carries the grid index of the offending step.
struct IntegrationError : Error {
    IntegrationError(const std::string& msg, int step)
        : Error(msg + " (step " + std::to_string(step) + ")"), step_index(step) {}
    int step_index;
};

/// Monte-Carlo estimate has too little effective weight near the query point.
struct EstimateUnreliable : Error {
    using Error::Error;
};

struct TrainingDiverged : Error {
    using Error::Error;
};

/// Checkpoint load failures keep their cause machine-readable.
struct CheckpointError : Error {
    enum class Kind { version, truncated, shape, parse };
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace flowlab
