#pragma once

#include <stdexcept>
#include <string>

namespace defleye {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration input.
struct ConfigError : Error {
    using Error::Error;
};

/// Geometric input that admits no unique solution (parallel lines, rank-deficient
/// correspondences, ...).
struct DegenerateGeometry : Error {
    using Error::Error;
};

/// Iterative solver hit its iteration cap. Carries the last residual so callers
/// can decide whether the result is still usable.
struct NonConvergence : Error {
    NonConvergence(const std::string& what, double residual_)
        : Error(what), residual(residual_) {}
    double residual = 0.0;
};

/// A pipeline stage failed; `stage` names it for CLI reporting.
struct PipelineError : Error {
    PipelineError(std::string stage_, const std::string& what)
        : Error(stage_ + ": " + what), stage(std::move(stage_)) {}
    std::string stage;
};

}  // namespace defleye
