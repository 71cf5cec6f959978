#pragma once

#include <algorithm>
#include <cctype>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lastingbench/dataset.hpp"
#include "lastingbench/detector.hpp"
#include "lastingbench/errors.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/prompts.hpp"

namespace lastingbench {

struct ReasoningStep {
    std::string reasoning;
    std::string reference_content; // verbatim sentence(s) cited from the context
};

struct ReasoningTrace {
    std::string answer;
    std::vector<ReasoningStep> steps;
    std::string raw;
};

// Verified minimal evidence: the retrieved chunks plus the exact sentence
// spans inside them that the rewriter will target.
struct CriticalSection {
    std::vector<size_t> chunk_indices; // ascending
    std::vector<SentenceSpan> sentence_spans;
    bool verified = false;
    int iterations_used = 0;
};

struct LocalizeConfig {
    size_t k_chunks = 5;
    size_t k_step = 3;
    int max_iters = 3;
};

// ---------------------------------------------------------------------------
// Trace parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_brackets(std::string s) {
    s = text::trim(s);
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']')
        s = text::trim(s.substr(1, s.size() - 2));
    return s;
}

inline bool starts_numbered_step(const std::string& line, std::string* rest) {
    size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == 0 || i >= line.size()) return false;
    if (line[i] != '.' && line[i] != ')') return false;
    *rest = text::trim(line.substr(i + 1));
    return true;
}

} // namespace detail

inline std::optional<ReasoningTrace> try_parse_trace(const std::string& raw) {
    ReasoningTrace trace;
    trace.raw = raw;
    bool saw_answer = false;
    ReasoningStep* current = nullptr;
    for (const auto& raw_line : text::split_lines(raw)) {
        std::string line = text::trim(raw_line);
        if (line.empty()) continue;
        if (!saw_answer) {
            size_t pos = line.find("Answer:");
            if (pos != std::string::npos) {
                trace.answer = detail::strip_brackets(line.substr(pos + 7));
                saw_answer = true;
            }
            continue;
        }
        if (line.rfind("Step-by-step", 0) == 0) continue;
        std::string rest;
        if (detail::starts_numbered_step(line, &rest)) {
            trace.steps.push_back(ReasoningStep{detail::strip_brackets(rest), ""});
            current = &trace.steps.back();
            continue;
        }
        if (line.front() == '[' && current) {
            std::string ref = detail::strip_brackets(line);
            if (current->reference_content.empty())
                current->reference_content = ref;
            else
                current->reference_content += " " + ref;
        }
    }
    if (!saw_answer || trace.answer.empty() || trace.steps.empty()) return std::nullopt;
    return trace;
}

// Chain-of-thought answer over the full context. Malformed replies are
// re-asked twice with the previous output quoted before giving up.
inline ReasoningTrace cot_answer(Gateway& gateway, const ModelEndpoint& reasoner,
                                 const std::string& question, const std::string& context,
                                 const std::string& extra_note = "",
                                 std::vector<ChatExchange>* transcripts = nullptr) {
    auto messages = render_prompt("cot", {{"Context", context}, {"Question", question}});
    if (!extra_note.empty()) messages.push_back(ChatMessage{"user", extra_note});

    std::string raw;
    for (int attempt = 0; attempt < 3; ++attempt) {
        raw = gateway.complete_chat(reasoner, messages);
        if (transcripts) transcripts->push_back(ChatExchange{messages, raw, {}});
        if (auto trace = try_parse_trace(raw)) return *trace;
        messages.push_back(ChatMessage{"assistant", raw});
        messages.push_back(ChatMessage{
            "user",
            "That reply did not follow the required format. Answer again using exactly the "
            "mandated format, starting with \"Answer:\"."});
    }
    throw ParseError("cot_answer: unparseable reasoning output after 3 attempts", raw);
}

// q+ = reasoning steps and their references, then the question, then the answer.
inline std::string build_enriched_query(const ReasoningTrace& trace, const std::string& question) {
    std::vector<std::string> parts;
    for (const auto& step : trace.steps) {
        if (!step.reasoning.empty()) parts.push_back(step.reasoning);
        if (!step.reference_content.empty()) parts.push_back(step.reference_content);
    }
    parts.push_back(question);
    parts.push_back(trace.answer);
    return text::join(parts, "\n");
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

// Dot product in index order with double accumulation; vectors are unit-norm
// so this is the cosine similarity.
inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    size_t n = std::min(a.size(), b.size());
    double dot = 0.0;
    for (size_t i = 0; i < n; ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return dot;
}

// Top-k chunk indices by cosine similarity to the enriched query, descending;
// ties broken by ascending chunk index.
inline std::vector<size_t> retrieve_topk(Gateway& gateway, const ModelEndpoint& embedder,
                                         const std::string& enriched_query,
                                         const std::vector<Chunk>& chunks, size_t k) {
    if (k < 1 || k > chunks.size())
        throw std::invalid_argument("retrieve_topk: k out of range [1, " +
                                    std::to_string(chunks.size()) + "]");
    std::vector<std::string> texts;
    texts.reserve(chunks.size() + 1);
    texts.push_back(enriched_query);
    for (const auto& c : chunks) texts.push_back(c.text);
    auto vectors = gateway.embed(embedder, texts);

    std::vector<double> scores(chunks.size());
    for (size_t j = 0; j < chunks.size(); ++j) scores[j] = cosine(vectors[0], vectors[j + 1]);

    std::vector<size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(k);
    return order;
}

// ---------------------------------------------------------------------------
// Sufficiency check
// ---------------------------------------------------------------------------

inline bool verify_sufficiency(Gateway& gateway, const ModelEndpoint& reasoner,
                               const std::string& question, const std::string& c_crit_text,
                               const std::vector<std::string>& golds, MatchRule rule,
                               std::vector<ChatExchange>* transcripts = nullptr) {
    if (c_crit_text.empty()) throw std::invalid_argument("verify_sufficiency: empty evidence");
    if (golds.empty()) throw std::invalid_argument("verify_sufficiency: empty gold answers");
    auto messages =
        render_prompt("qa_with_context", {{"Context", c_crit_text}, {"Question", question}});
    std::string answer = gateway.complete_chat(reasoner, messages);
    if (transcripts) transcripts->push_back(ChatExchange{messages, answer, {}});
    return answer_matches(answer, golds, rule);
}

// ---------------------------------------------------------------------------
// Reference-to-sentence matching
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fuzzy_form(std::string_view s) {
    return text::collapse_ws(text::strip_punct(text::to_lower(s)));
}

inline bool either_contains(const std::string& a, const std::string& b) {
    if (a.empty() || b.empty()) return false;
    return text::contains(a, b) || text::contains(b, a);
}

} // namespace detail

// Sentences of the selected chunks matching any reference: exact substring
// first (either direction, since a reference may span consecutive sentences),
// then the punctuation-stripped fuzzy form, then all sentences of the best
// chunk as a last resort.
inline std::vector<SentenceSpan> select_reference_sentences(
    const std::vector<Chunk>& chunks, const std::vector<size_t>& selected,
    const std::vector<std::string>& references) {
    std::vector<SentenceSpan> all_sentences;
    for (size_t idx : selected)
        for (auto& s : sentences_in_chunk(chunks[idx])) all_sentences.push_back(std::move(s));
    std::sort(all_sentences.begin(), all_sentences.end(),
              [](const SentenceSpan& a, const SentenceSpan& b) { return a.span.start < b.span.start; });

    std::vector<SentenceSpan> exact, fuzzy;
    for (const auto& sentence : all_sentences) {
        bool exact_hit = false, fuzzy_hit = false;
        std::string sentence_fuzzy = detail::fuzzy_form(sentence.text);
        for (const auto& ref : references) {
            if (ref.empty()) continue;
            if (detail::either_contains(sentence.text, ref)) {
                exact_hit = true;
                break;
            }
            if (detail::either_contains(sentence_fuzzy, detail::fuzzy_form(ref))) fuzzy_hit = true;
        }
        if (exact_hit)
            exact.push_back(sentence);
        else if (fuzzy_hit)
            fuzzy.push_back(sentence);
    }
    if (!exact.empty()) return exact;
    if (!fuzzy.empty()) return fuzzy;
    if (!selected.empty()) return sentences_in_chunk(chunks[selected.front()]);
    return {};
}

// ---------------------------------------------------------------------------
// Localization loop
// ---------------------------------------------------------------------------

// CoT answer -> enriched query -> top-k retrieval -> sufficiency check; on
// failure the next iteration notes the insufficient chunks and grows k by
// k_step. Returns verified=false after max_iters (unlocalizable).
inline CriticalSection localize(Gateway& gateway, const ModelEndpoint& reasoner,
                                const ModelEndpoint& embedder, const QaInstance& instance,
                                const std::vector<Chunk>& chunks, const std::string& rephrased,
                                const LocalizeConfig& config = {},
                                MatchRule rule = MatchRule::substring,
                                nlohmann::json* audit = nullptr) {
    if (chunks.empty()) throw std::invalid_argument("localize: instance has no chunks");
    CriticalSection result;
    size_t k = std::min(config.k_chunks, chunks.size());
    if (k == 0) k = 1;
    std::string note;

    for (int iter = 1; iter <= config.max_iters; ++iter) {
        result.iterations_used = iter;
        std::vector<std::string> references;
        std::string enriched;
        bool trace_ok = true;
        try {
            ReasoningTrace trace =
                cot_answer(gateway, reasoner, rephrased, instance.context, note);
            for (const auto& step : trace.steps)
                if (!step.reference_content.empty()) references.push_back(step.reference_content);
            enriched = build_enriched_query(trace, rephrased);
        } catch (const ParseError&) {
            trace_ok = false;
            enriched = rephrased;
        }

        std::vector<size_t> selected = retrieve_topk(gateway, embedder, enriched, chunks, k);
        std::vector<size_t> sorted_selected = selected;
        std::sort(sorted_selected.begin(), sorted_selected.end());
        std::vector<std::string> texts;
        for (size_t idx : sorted_selected) texts.push_back(chunks[idx].text);
        std::string c_crit_text = text::join(texts, "\n\n");

        bool ok = trace_ok && verify_sufficiency(gateway, reasoner, rephrased, c_crit_text,
                                                 instance.gold_answers, rule);
        if (audit) {
            audit->push_back({{"iteration", iter},
                              {"k", k},
                              {"chunk_indices", sorted_selected},
                              {"verified", ok}});
        }
        if (ok) {
            result.chunk_indices = sorted_selected;
            result.sentence_spans = select_reference_sentences(chunks, selected, references);
            result.verified = true;
            return result;
        }

        std::string indices;
        for (size_t idx : sorted_selected) indices += (indices.empty() ? "" : ", ") + std::to_string(idx);
        note = "Note: the passages previously cited (chunks " + indices +
               ") were not sufficient to answer. Cite different or additional passages. (round " +
               std::to_string(iter + 1) + ")";
        k = std::min(k + config.k_step, chunks.size());
    }
    result.verified = false;
    return result;
}

} // namespace lastingbench
