#pragma once

#include <stdexcept>
#include <string>

namespace kinf {

// Base of every error thrown by the library. The CLI maps ConfigError to exit
// code 2 and NumericalError to exit code 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// data_io
class BadMagic : public Error {
public:
    using Error::Error;
};
class CountMismatch : public Error {
public:
    using Error::Error;
};
class TruncatedFile : public Error {
public:
    using Error::Error;
};
class InsufficientClassMembers : public Error {
public:
    using Error::Error;
};
class EmptyDataset : public Error {
public:
    using Error::Error;
};
class DegenerateSplit : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

// numerical failures
class DivergenceDetected : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NonFiniteEncountered : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class IndefiniteOperator : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NotAtOptimum : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NotConverged : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// sharding
class PartitionGap : public Error {
public:
    using Error::Error;
};
class PartitionOverlap : public Error {
public:
    using Error::Error;
};

}  // namespace kinf
