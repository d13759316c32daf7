#pragma once

#include <stdexcept>
#include <string>

namespace hfz {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor extents disagree with what an operation requires.
struct ShapeError : Error {
    using Error::Error;
};

/// A computation produced NaN/Inf, or numeric input is invalid.
struct NumericError : Error {
    using Error::Error;
};

/// An on-disk artifact (IDX file, partition JSON, checkpoint) is malformed.
struct FormatError : Error {
    using Error::Error;
};

/// Bad experiment configuration (unknown key, invalid value, missing file).
struct ConfigError : Error {
    using Error::Error;
};

/// An operation's precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

/// An index (e.g. a class label) is outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

/// Dataset or partition content violates an invariant (label range, empty
/// client, infeasible split).
struct DataError : Error {
    using Error::Error;
};

} // namespace hfz
