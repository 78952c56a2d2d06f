#pragma once

#include <stdexcept>
#include <string>

namespace fedprune {

// Bad model/experiment configuration (shape mismatch, out-of-range setting).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad runtime input (empty dataset, mask that does not fit the model, ...).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed external file (IDX magic, truncation, unparsable CSV).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fedprune
