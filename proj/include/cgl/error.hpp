#pragma once

#include <stdexcept>
#include <string>

namespace cgl {

// Error taxonomy. The CLI maps these onto exit codes: anything caused by
// bad user input (config, data files, argument ranges) exits 2, everything
// else exits 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file contents; carries line/field context in the message.
struct ParseError : DataError {
    using DataError::DataError;
};

// API misuse (backward before forward, dimension mixups in library calls).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// A structural invariant was violated (row-sum-one paths, shape contracts).
struct InvariantError : std::logic_error {
    using std::logic_error::logic_error;
};

// Corrupt or checksum-failing persisted state.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace cgl
