#pragma once

#include <stdexcept>
#include <string>

namespace peftlad {

// Invalid configuration values or malformed configuration files.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not conform for the requested operation.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad runtime inputs: out-of-range token ids, label values, length mismatches.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values, rank-deficient matrices, failed numeric procedures.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required on-disk artifact (checkpoint, bundle, lexicon) is absent.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File read/write failures other than missing artifacts.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace peftlad
