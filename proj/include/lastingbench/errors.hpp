#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace lastingbench {

// Endpoint unreachable, HTTP failure, or retries exhausted.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Replay-mode request whose key is not in the cache.
struct CacheMissError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Endpoint does not support the requested capability.
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Prompt template rendered without one of its slots.
struct TemplateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Model output that does not follow the mandated format; keeps the raw reply.
struct ParseError : std::runtime_error {
    std::string raw_output;
    ParseError(const std::string& what, std::string raw)
        : std::runtime_error(what), raw_output(std::move(raw)) {}
};

// Generator returned the input question verbatim on every attempt.
struct DegenerateRephraseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// No counterfactual variant survived generation and validation.
struct RewriteGenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace lastingbench
