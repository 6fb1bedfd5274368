#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alloctune {

/// Bad user-supplied configuration (unknown allocator, malformed space file, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data that could not be parsed. Carries the 1-based line number when
/// one is known (0 otherwise).
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A child process or external tool failed in a way the caller cannot recover from.
class SubprocessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace alloctune
