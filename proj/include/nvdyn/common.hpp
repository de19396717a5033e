#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nvdyn {

// Base class for all library errors so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument values or out-of-domain inputs (x < 0, tau <= 0, ...).
struct DomainError : Error {
    using Error::Error;
};

// Linear solve / steady-state extraction failed to produce a valid answer.
struct NonConvergence : Error {
    using Error::Error;
};

// Fixed-step integration asked to run outside its stability region.
struct StepSizeError : Error {
    using Error::Error;
};

// A curve fit could not be carried out (empty signal, amplitude below floor).
struct FitError : Error {
    using Error::Error;
};

// Requested occupancy target cannot be realized by a two-state chain.
struct TargetUnreachable : Error {
    using Error::Error;
};

// Scaled forward-backward hit a zero normalizer; indicates impossible data.
struct NumericalUnderflow : Error {
    using Error::Error;
};

// EM landed in a degenerate optimum (empty state, collapsed components).
struct DegenerateFit : Error {
    using Error::Error;
};

// Normal equations are singular: one or more parameters are unidentifiable.
struct SingularJacobian : Error {
    using Error::Error;
};

// Reference spectra are (numerically) parallel; decomposition is ill-posed.
struct SingularBasis : Error {
    using Error::Error;
};

// Input signal is identically zero where structure is required.
struct AllZero : Error {
    using Error::Error;
};

// Integration window does not overlap the data grid.
struct EmptyWindow : Error {
    using Error::Error;
};

// Not enough photons to build a meaningful correlation histogram.
struct TooFewPhotons : Error {
    using Error::Error;
};

// Malformed file content. line/column are 1-based; 0 means "not applicable".
struct SchemaError : Error {
    std::size_t line = 0;
    std::size_t column = 0;
    SchemaError(const std::string& msg, std::size_t line_ = 0, std::size_t column_ = 0)
        : Error(line_ ? msg + " (line " + std::to_string(line_) +
                            (column_ ? ", column " + std::to_string(column_) : "") + ")"
                      : msg),
          line(line_), column(column_) {}
};

// A pipeline stage failed; carries the stage name for the report.
struct ScenarioFailure : Error {
    std::string stage;
    ScenarioFailure(const std::string& stage_, const std::string& msg)
        : Error("stage '" + stage_ + "': " + msg), stage(stage_) {}
};

namespace constants {
// CODATA 2018.
inline constexpr double vacuum_permittivity_f_per_m = 8.8541878128e-12;
inline constexpr double elementary_charge_c = 1.602176634e-19;
}  // namespace constants

}  // namespace nvdyn
