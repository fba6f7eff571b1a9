#pragma once

#include <stdexcept>
#include <string>

namespace deferral {

// Exit codes used by the CLI; each error class maps to one.
enum class ExitCode : int {
    ok = 0,
    config_error = 1,
    data_error = 2,
    invariant_violation = 3,
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised by calibrators that need both label classes.
class DegenerateLabels : public DataError {
public:
    using DataError::DataError;
};

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace deferral
