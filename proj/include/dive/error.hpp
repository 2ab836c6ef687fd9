#pragma once

#include <stdexcept>
#include <string>

namespace dive {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad argument or violated precondition (shape mismatch, out-of-range index, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Run configuration is malformed or internally inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

// A required upstream artifact is missing or stale.
struct DependencyError : Error {
    using Error::Error;
};

// On-disk container is corrupt, truncated, or has the wrong version.
struct FormatError : Error {
    using Error::Error;
};

// Noise schedule violates its invariants.
struct ScheduleError : Error {
    using Error::Error;
};

// Optimization diverged or produced non-finite values.
struct TrainingError : Error {
    using Error::Error;
};

// Guided or unguided sampling failed mid-chain.
struct GenerationError : Error {
    using Error::Error;
};

// An embedding norm fell below the normalization floor.
struct DegenerateEmbeddingError : Error {
    using Error::Error;
};

struct EmptyInputError : Error {
    using Error::Error;
};

}  // namespace dive
