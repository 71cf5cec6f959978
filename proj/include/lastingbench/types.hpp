#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lastingbench {

// Half-open byte range [start, end) into a UTF-8 string.
struct Span {
    size_t start = 0;
    size_t end = 0;

    size_t length() const { return end - start; }
    bool operator==(const Span&) const = default;
};

struct ChatMessage {
    std::string role; // "system", "user" or "assistant"
    std::string content;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int total_tokens = 0;
};

// One request/response pair kept for audit trails.
struct ChatExchange {
    std::vector<ChatMessage> messages;
    std::string response;
    TokenUsage usage;
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0; // nats, <= 0
};

struct LogprobScore {
    std::vector<TokenLogprob> tokens;
    double total_logprob = 0.0;
    int token_count = 0;

    static LogprobScore from_tokens(std::vector<TokenLogprob> toks) {
        LogprobScore s;
        s.tokens = std::move(toks);
        double total = 0.0;
        for (const auto& t : s.tokens) total += t.logprob;
        s.total_logprob = total;
        s.token_count = static_cast<int>(s.tokens.size());
        return s;
    }
};

} // namespace lastingbench
