#pragma once

#include <stdexcept>
#include <string>

namespace imucoco {

// Bad user input: malformed files, out-of-range arguments, shape mismatches.
// The CLI maps these to exit code 1; anything else lands on exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public ValidationError {
public:
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& file, int line, const std::string& msg)
        : ValidationError(file + ":" + std::to_string(line) + ": " + msg),
          line_number(line) {}
    int line_number;
};

}  // namespace imucoco
