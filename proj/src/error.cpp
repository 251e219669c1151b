#include "alarm/error.hpp"

namespace alm {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::FormatError: return "format-error";
    case ErrorKind::SpecMismatch: return "spec-mismatch";
    case ErrorKind::IoError: return "io-error";
    case ErrorKind::BankError: return "bank-error";
    case ErrorKind::TooShort: return "too-short";
    case ErrorKind::RateError: return "rate-error";
    case ErrorKind::TooLong: return "too-long";
    case ErrorKind::InvalidSpan: return "invalid-span";
    case ErrorKind::OutOfRange: return "out-of-range";
    case ErrorKind::Diverged: return "diverged";
    case ErrorKind::IncompatibleCheckpoint: return "incompatible-checkpoint";
    case ErrorKind::PipelineError: return "pipeline-error";
    case ErrorKind::EmptyFiltered: return "empty-filtered";
    case ErrorKind::ParseError: return "parse-error";
    }
    return "unknown";
}

} // namespace alm
