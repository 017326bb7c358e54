#pragma once

#include <stdexcept>
#include <string>

namespace headprobe {

enum class ErrorKind {
    Config,     // bad configuration or command-line input
    Format,     // malformed dump or table file
    Range,      // index or coordinate out of bounds
    NotFound,   // unknown essay id, trait, or prompt
    Validation, // data violating a declared invariant
    Contract,   // caller broke a precondition
    Numerical,  // non-finite value or failed factorization
    Io,         // file system failure
};

const char* to_string(ErrorKind kind);

// Process exit code for a failure of this kind: 2 config, 3 data, 4 numerical.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace headprobe
