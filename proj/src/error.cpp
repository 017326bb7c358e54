#include "headprobe/error.hpp"

namespace headprobe {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Format: return "format";
    case ErrorKind::Range: return "range";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Numerical: return 4;
    default: return 3;
    }
}

}  // namespace headprobe
