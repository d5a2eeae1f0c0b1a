#pragma once

#include <stdexcept>
#include <string>

namespace rotdet {

// Error taxonomy shared by the library and the CLI. The CLI maps each
// category to a distinct process exit code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Annotation/text parsing failure; carries the 1-based line number.
struct ParseError : ConfigError {
    ParseError(const std::string& msg, int line)
        : ConfigError("line " + std::to_string(line) + ": " + msg), line_number(line) {}
    int line_number;
};

}  // namespace rotdet
