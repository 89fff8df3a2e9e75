#pragma once

#include <stdexcept>
#include <string>

namespace vitcx {

// Base of every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
public:
    using Error::Error;
};

class InvalidGeometry : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Raised when a model oracle fails to answer a query.
class OracleError : public Error {
public:
    using Error::Error;
};

// Malformed or unexpected frames on the oracle wire.
class ProtocolError : public OracleError {
public:
    using OracleError::OracleError;
};

}  // namespace vitcx
