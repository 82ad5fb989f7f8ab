#pragma once

#include <stdexcept>
#include <string>

namespace eir {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad configuration or schedule. The CLI maps it to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

/// Step index outside 1..T.
struct ScheduleRangeError : ConfigError {
    using ConfigError::ConfigError;
};

/// Unreadable or inconsistent input data. The CLI maps it to exit code 3.
struct DataError : Error {
    using Error::Error;
};

/// A step selects no samples at all; the schedule is degenerate for this dataset.
struct EmptyStepError : DataError {
    using DataError::DataError;
};

struct ShapeError : Error {
    using Error::Error;
};

/// Non-finite loss during training. The CLI maps it to exit code 4.
struct DivergenceError : Error {
    using Error::Error;
};

/// An instance cannot be placed (no free region, or it would shrink below min_scale).
struct PlacementSkip : Error {
    using Error::Error;
};

}  // namespace eir
