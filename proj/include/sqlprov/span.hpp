#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sqlprov {

/// Byte range into the source text a construct was parsed from.
struct SourceSpan {
    uint32_t begin = 0;
    uint32_t end = 0;
};

enum class ErrorKind {
    Syntax,              // malformed input text
    Unsupported,         // recognized but outside the dialect
    Validation,          // name resolution / typing
    Evaluation,          // runtime (division by zero, type error, recursion cap)
    ReplayIntegrity,     // phase 2 misses a mandatory log record
    Io,
};

class SqlError : public std::runtime_error {
public:
    SqlError(ErrorKind kind, std::string message, SourceSpan span = {})
        : std::runtime_error(std::move(message)), kind(kind), span(span) {}

    ErrorKind kind;
    SourceSpan span;
};

} // namespace sqlprov
