#pragma once

#include <stdexcept>

namespace csp {

// Invalid configuration or input files; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure (non-finite loss or gradient); CLI exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace csp
