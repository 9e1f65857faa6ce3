#pragma once

#include <stdexcept>
#include <string>

namespace percep {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values or inconsistent settings.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input files. Carries the 1-based line number when known (0 otherwise).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what, std::size_t line = 0)
        : Error(what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Training produced a non-finite loss or otherwise diverged.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace percep
