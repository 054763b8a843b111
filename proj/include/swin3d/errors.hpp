#pragma once

#include <stdexcept>
#include <string>

namespace swin3d {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Window partitioning received extents that do not tile.
class PartitionError : public Error {
public:
    using Error::Error;
};

/// Malformed movie or checkpoint file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace swin3d
