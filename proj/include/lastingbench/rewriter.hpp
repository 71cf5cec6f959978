#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lastingbench/dataset.hpp"
#include "lastingbench/errors.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/localizer.hpp"
#include "lastingbench/metrics.hpp"
#include "lastingbench/prompts.hpp"

namespace lastingbench {

struct CounterfactualVariant {
    std::string antifact_answer;
    std::vector<std::string> rewritten_sentences; // aligned 1:1 with the input sentences
    double cppl = 0.0;
    int variant_index = 0;
};

enum class CpplScope { merged, critical_only };

inline std::string to_string(CpplScope s) {
    return s == CpplScope::merged ? "merged" : "critical_only";
}

inline CpplScope cppl_scope_from_string(const std::string& s) {
    if (s == "merged") return CpplScope::merged;
    if (s == "critical_only") return CpplScope::critical_only;
    throw std::runtime_error("unknown cppl scope: " + s);
}

struct DefendConfig {
    int k_variants = 4;
    CpplScope cppl_scope = CpplScope::merged;
};

// ---------------------------------------------------------------------------
// Counterfactual generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<nlohmann::json> extract_json_object(const std::string& reply) {
    size_t begin = reply.find('{');
    size_t end = reply.rfind('}');
    if (begin == std::string::npos || end == std::string::npos || end <= begin)
        return std::nullopt;
    auto parsed = nlohmann::json::parse(reply.substr(begin, end - begin + 1), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) return std::nullopt;
    return parsed;
}

inline std::string numbered(const std::vector<std::string>& sentences) {
    std::string out;
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (i) out += "\n";
        out += std::to_string(i + 1) + ". " + sentences[i];
    }
    return out;
}

} // namespace detail

// Generates k scored-later variants via independent generator calls. Every
// call carries a variant nonce plus the previously produced antifact answers
// so that selection has distinct candidates. Variants that break sentence
// alignment, repeat a gold answer, or merely quote the question are retried
// twice and then dropped.
inline std::vector<CounterfactualVariant> generate_counterfactuals(
    Gateway& gateway, const ModelEndpoint& generator, const std::string& question,
    const std::string& original_answer, const std::vector<std::string>& sentences, int k,
    const std::vector<std::string>& avoid_answers = {}) {
    if (sentences.empty())
        throw std::invalid_argument("generate_counterfactuals: no sentences to rewrite");
    if (k < 1) throw std::invalid_argument("generate_counterfactuals: k must be >= 1");

    std::vector<std::string> forbidden = avoid_answers;
    forbidden.push_back(original_answer);
    std::string question_norm = normalize_answer(question);

    auto base = render_prompt("rewrite", {{"Question", question},
                                          {"Original Answer", original_answer},
                                          {"Numbered Sentences", detail::numbered(sentences)}});

    std::vector<CounterfactualVariant> variants;
    for (int i = 0; i < k; ++i) {
        std::string avoid_note;
        for (const auto& v : variants)
            avoid_note += (avoid_note.empty() ? "" : ", ") + v.antifact_answer;

        for (int attempt = 0; attempt < 3; ++attempt) {
            auto messages = base;
            std::string nonce = "Variant " + std::to_string(i + 1) + " of " + std::to_string(k) + ".";
            if (!avoid_note.empty())
                nonce += " Avoid these previous antifact answers: [" + avoid_note + "].";
            if (attempt > 0)
                nonce += " Output strictly the mandated JSON. (retry " + std::to_string(attempt) + ")";
            messages.push_back(ChatMessage{"user", nonce});

            std::string reply = gateway.complete_chat(generator, messages);
            auto parsed = detail::extract_json_object(reply);
            if (!parsed) continue;
            if (!parsed->contains("answer") || !(*parsed)["answer"].is_string()) continue;
            if (!parsed->contains("revised") || !(*parsed)["revised"].is_array()) continue;

            CounterfactualVariant variant;
            variant.antifact_answer = text::trim((*parsed)["answer"].get<std::string>());
            bool strings_ok = true;
            for (const auto& s : (*parsed)["revised"]) {
                if (!s.is_string()) {
                    strings_ok = false;
                    break;
                }
                variant.rewritten_sentences.push_back(s.get<std::string>());
            }
            if (!strings_ok || variant.rewritten_sentences.size() != sentences.size()) continue;
            if (variant.antifact_answer.empty()) continue;

            std::string antifact_norm = normalize_answer(variant.antifact_answer);
            bool clashes = antifact_norm.empty();
            for (const auto& f : forbidden)
                if (antifact_norm == normalize_answer(f)) clashes = true;
            // Degenerate rewrites that answer with a fragment of the question.
            if (!clashes && text::contains(question_norm, antifact_norm)) clashes = true;
            if (clashes) continue;

            variant.variant_index = static_cast<int>(variants.size());
            variants.push_back(std::move(variant));
            break;
        }
    }
    if (variants.empty())
        throw RewriteGenerationError("generate_counterfactuals: no variant of " +
                                     std::to_string(k) + " survived validation");
    return variants;
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

// PPL = exp(-(1/T) * sum logprob(t_i)) over the tokens of `body`, conditioned
// on `conditioning` (empty means unconditional; the empty case uses the exact
// same call, so PPL(x | "") == PPL(x) bit for bit).
inline double perplexity(Gateway& gateway, const ModelEndpoint& scorer, const std::string& body,
                         const std::string& conditioning = "") {
    if (body.empty()) throw std::invalid_argument("perplexity: empty text");
    std::string prefix = conditioning.empty() ? "" : conditioning + "\n\n";
    LogprobScore score = gateway.score_logprobs(scorer, prefix, body);
    if (score.token_count == 0) throw std::invalid_argument("perplexity: no tokens scored");
    return std::exp(-score.total_logprob / static_cast<double>(score.token_count));
}

// CPPL(C, q) = PPL(q) - PPL(q | C). Higher means the context disagrees more
// with what the scorer already expects.
inline double cppl(Gateway& gateway, const ModelEndpoint& scorer, const std::string& question,
                   const std::string& variant_context) {
    return perplexity(gateway, scorer, question) -
           perplexity(gateway, scorer, question, variant_context);
}

// Argmax CPPL; ties resolve to the lowest variant index.
inline const CounterfactualVariant& select_best(const std::vector<CounterfactualVariant>& variants) {
    if (variants.empty()) throw std::invalid_argument("select_best: empty variant list");
    size_t best = 0;
    for (size_t i = 1; i < variants.size(); ++i)
        if (variants[i].cppl > variants[best].cppl) best = i;
    return variants[best];
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

// Splices replacements into the given spans, descending by start so offsets
// stay valid. Bytes outside the spans are untouched.
inline std::string merge(const std::string& context, const std::vector<SentenceSpan>& spans,
                         const std::vector<std::string>& replacements) {
    if (spans.size() != replacements.size())
        throw std::invalid_argument("merge: spans/replacements size mismatch");
    std::vector<size_t> order(spans.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return spans[a].span.start < spans[b].span.start; });
    for (size_t i = 0; i < order.size(); ++i) {
        const Span& s = spans[order[i]].span;
        if (s.start > s.end || s.end > context.size())
            throw std::runtime_error("merge: span out of bounds [" + std::to_string(s.start) +
                                     ", " + std::to_string(s.end) + ")");
        if (i + 1 < order.size() && s.end > spans[order[i + 1]].span.start)
            throw std::invalid_argument("merge: overlapping spans");
    }
    std::string out = context;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Span& s = spans[*it].span;
        out.replace(s.start, s.length(), replacements[*it]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Defense
// ---------------------------------------------------------------------------

// Generate -> splice each variant -> score CPPL -> pick the argmax -> merge.
// The antifact answer becomes the defended instance's gold.
inline DefendedInstance defend(Gateway& gateway, const ModelEndpoint& generator,
                               const ModelEndpoint& scorer, const QaInstance& instance,
                               const CriticalSection& critical, const DefendConfig& config = {},
                               nlohmann::json* audit = nullptr) {
    if (!critical.verified) throw std::invalid_argument("defend: critical section not verified");
    if (instance.gold_answers.empty())
        throw std::invalid_argument("defend: instance has no gold answers");

    std::vector<SentenceSpan> spans = critical.sentence_spans;
    std::sort(spans.begin(), spans.end(),
              [](const SentenceSpan& a, const SentenceSpan& b) { return a.span.start < b.span.start; });
    std::vector<std::string> sentence_texts;
    for (const auto& s : spans) sentence_texts.push_back(s.text);

    std::vector<CounterfactualVariant> variants = generate_counterfactuals(
        gateway, generator, instance.question, instance.gold_answers.front(), sentence_texts,
        config.k_variants, instance.gold_answers);

    for (auto& variant : variants) {
        std::string spliced = merge(instance.context, spans, variant.rewritten_sentences);
        std::string conditioning = config.cppl_scope == CpplScope::merged
                                       ? spliced
                                       : text::join(variant.rewritten_sentences, "\n");
        variant.cppl = cppl(gateway, scorer, instance.question, conditioning);
    }

    const CounterfactualVariant& best = select_best(variants);

    DefendedInstance defended;
    defended.id = instance.id;
    defended.original = instance;
    defended.antifact_answer = best.antifact_answer;
    defended.chosen_variant = best.variant_index;
    defended.defended_context = merge(instance.context, spans, best.rewritten_sentences);
    for (size_t i = 0; i < spans.size(); ++i)
        defended.edits.push_back(Edit{spans[i].span, spans[i].text, best.rewritten_sentences[i]});

    if (audit) {
        auto rows = nlohmann::json::array();
        for (const auto& v : variants)
            rows.push_back({{"answer", v.antifact_answer},
                            {"cppl", v.cppl},
                            {"revised", v.rewritten_sentences}});
        (*audit)["variants"] = rows;
        (*audit)["chosen"] = best.variant_index;
    }
    return defended;
}

} // namespace lastingbench
