#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pprobe {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A transcript record violates the corpus schema.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, std::string field, const std::string& what)
        : Error("line " + std::to_string(line) + ", field '" + field + "': " + what),
          line_(line),
          field_(std::move(field)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

/// Binary or JSON file format problems (bad magic, malformed metadata, trailing bytes).
class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncationError : public FormatError {
public:
    TruncationError(std::size_t expected, std::size_t actual)
        : FormatError("truncated input: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(actual)),
          expected_(expected),
          actual_(actual) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

/// A value breaks a documented domain invariant.
class InvariantError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Dataset assembly or analysis inputs cannot produce a result.
class DataError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::size_t epoch)
        : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace pprobe
