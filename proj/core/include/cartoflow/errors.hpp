#pragma once

#include <stdexcept>
#include <string>

namespace cartoflow {

// Two failure families, mapped to process exit codes by the CLI:
// validation errors (bad input / bad request, exit 2) and numeric
// failures (non-finite values mid-computation, exit 3).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateInput : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyInput : ValidationError {
    using ValidationError::ValidationError;
};
struct SchemaError : ValidationError {
    using ValidationError::ValidationError;
};
struct NonUniformT : ValidationError {
    using ValidationError::ValidationError;
};
struct NegativeCount : ValidationError {
    using ValidationError::ValidationError;
};
struct OutOfBounds : ValidationError {
    using ValidationError::ValidationError;
};
struct WindowOutOfRange : ValidationError {
    using ValidationError::ValidationError;
};
struct InsufficientHistory : ValidationError {
    using ValidationError::ValidationError;
};
struct ShapeMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct LengthMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct ZeroVariance : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyCell : ValidationError {
    using ValidationError::ValidationError;
};
struct NoScoresCollected : ValidationError {
    using ValidationError::ValidationError;
};
struct InvalidConfig : ValidationError {
    using ValidationError::ValidationError;
};
struct MissingForwardCache : ValidationError {
    using ValidationError::ValidationError;
};

struct NonFiniteActivation : NumericError {
    using NumericError::NumericError;
};
struct NonFiniteLoss : NumericError {
    using NumericError::NumericError;
};

} // namespace cartoflow
