#pragma once

#include <stdexcept>
#include <string>

namespace segnn {

/// Violated precondition or invalid argument value.
class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed input data (file contents, wire formats).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, const std::string& source, long line_or_offset)
        : std::runtime_error(source + ":" + std::to_string(line_or_offset) + ": " + what),
          source_(source),
          position_(line_or_offset) {}

    const std::string& source() const { return source_; }
    long position() const { return position_; }

private:
    std::string source_;
    long position_;
};

/// Filesystem or stream failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite arithmetic is required.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace segnn
