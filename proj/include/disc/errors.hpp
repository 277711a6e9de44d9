#pragma once

#include <stdexcept>
#include <string>

namespace disc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violated precondition of an operation (bad arguments, wrong state).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch inside a tensor op. Message names the op and both shapes.
class DimensionError : public ContractError {
public:
    using ContractError::ContractError;
};

class UnsupportedOpError : public ContractError {
public:
    using ContractError::ContractError;
};

class NonFiniteError : public ContractError {
public:
    using ContractError::ContractError;
};

class LookupError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Invalid configuration: unknown keys, unrealizable sizes, bad environments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

} // namespace disc
