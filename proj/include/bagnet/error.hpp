#pragma once

#include <stdexcept>
#include <string>

namespace bagnet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes. The message names both offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value (kernel size, threshold, divisibility, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

// API misuse: backward on a foreign tensor, empty fold, ...
class UsageError : public Error {
public:
    using Error::Error;
};

// The finite-difference oracle itself cannot be trusted (non-deterministic objective).
class OracleInvalidError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointIntegrityError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class DataError : public Error {
public:
    using Error::Error;
};

class MissingFileError : public DataError {
public:
    using DataError::DataError;
};

class DecodeError : public DataError {
public:
    using DataError::DataError;
};

class SizeMismatchError : public DataError {
public:
    using DataError::DataError;
};

class ManifestError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace bagnet
