// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace avdf {

// Process exit codes used by the CLI. Each error family maps onto one.
enum class ExitCode : int {
    kOk = 0,
    kConfig = 2,
    kData = 3,
    kNumeric = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

class DataError : public Error {
public:
    using Error::Error;
};

// Bad magic, unknown version, or otherwise unparseable file.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Structurally valid header whose payload does not match it.
class CorruptionError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

}  // namespace avdf
