#pragma once

#include <stdexcept>
#include <string>

namespace refinery {

enum class ErrorKind {
    EmptyText,        // readability: no qualifying word in input
    Precondition,     // caller violated a documented precondition
    TransportError,   // live backend: retries exhausted or non-retryable HTTP failure
    AuthError,        // live backend: credential rejected
    ScriptExhausted,  // scripted backend has no response left for the request
    CacheMiss,        // replay backend: fingerprint absent from cache
    MalformedOutput,  // model output unparseable after the retry budget
    ParseError,       // input file violates its schema
    DuplicateId,      // duplicate problem id / topic name in a dataset
    MixedStrategy,    // analytics input mixes traces from different strategies
    WrongArity,       // agreement input with a rater count other than 3
    LengthMismatch,   // paired label lists of different lengths
    EmptyInput,       // agreement/analytics input with zero items
    TemplateError,    // prompt template placeholder unbound at render time
    ConfigError,      // CLI/backend wiring problem (missing credential, cache, ...)
    IoError,          // file could not be opened or written
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
          kind_(kind), message_(message) {}

    ErrorKind kind() const { return kind_; }
    // what() without the kind prefix
    const std::string& message() const { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

} // namespace refinery
