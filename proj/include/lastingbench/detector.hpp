#pragma once

#include <map>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "lastingbench/dataset.hpp"
#include "lastingbench/errors.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/metrics.hpp"
#include "lastingbench/prompts.hpp"

namespace lastingbench {

// Equality rule for "model answered a*". The substring rule accepts a gold
// that appears as a whole-token run inside the answer, since chat models wrap
// answers in sentences; strict is plain normalized equality.
enum class MatchRule { strict, substring };

inline std::string to_string(MatchRule r) {
    return r == MatchRule::strict ? "strict" : "substring";
}

inline MatchRule match_rule_from_string(const std::string& s) {
    if (s == "strict") return MatchRule::strict;
    if (s == "substring") return MatchRule::substring;
    throw std::runtime_error("unknown match rule: " + s);
}

namespace detail {

inline bool token_run_contains(const std::vector<std::string>& haystack,
                               const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool all = true;
        for (size_t j = 0; j < needle.size(); ++j) {
            if (haystack[i + j] != needle[j]) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

} // namespace detail

inline bool answer_matches(const std::string& answer, const std::vector<std::string>& golds,
                           MatchRule rule) {
    if (golds.empty()) throw std::invalid_argument("answer_matches: empty gold answers");
    if (exact_match(answer, golds)) return true;
    if (rule == MatchRule::strict) return false;
    auto answer_toks = text::tokenize(normalize_answer(answer));
    for (const auto& g : golds) {
        auto gold_toks = text::tokenize(normalize_answer(g));
        if (detail::token_run_contains(answer_toks, gold_toks)) return true;
    }
    return false;
}

inline bool is_dont_know(const std::string& answer) {
    std::string n = normalize_answer(answer);
    return n == "i dont know" || n == "dont know" || n == "unknown" ||
           text::contains(n, "i dont know");
}

struct PerturbationSet {
    std::string rephrased;     // semantically equivalent form
    std::string contradictory; // logically contradictory form
    std::string generator_model;
};

struct LeakageVerdict {
    bool contextless_correct = false;
    bool rephrase_failed = false;
    bool contradiction_leaked = false;
    bool leaked = false;
    bool high_prior = false; // yes/no or date-only gold; contextless success may be guessing
    std::string contextless_answer;
    std::string rephrase_answer;
    std::string contradiction_answer;
    PerturbationSet perturbations;
    std::vector<ChatExchange> transcripts;
};

namespace detail {

inline std::string generate_variant(Gateway& gateway, const ModelEndpoint& generator,
                                    const std::string& question, const std::string& template_id,
                                    std::vector<ChatExchange>* transcripts, int nonce) {
    if (question.empty()) throw std::invalid_argument(template_id + ": empty question");
    auto base = render_prompt(template_id, {{"Question", question}});
    std::string reply;
    for (int attempt = 0; attempt < 3; ++attempt) {
        auto messages = base;
        if (attempt > 0 || nonce > 0)
            messages.push_back(ChatMessage{
                "user", "Produce a different wording than before. (variation " +
                            std::to_string(nonce * 3 + attempt) + ")"});
        reply = text::trim(gateway.complete_chat(generator, messages));
        if (reply.size() >= 2 && reply.front() == '"' && reply.back() == '"')
            reply = reply.substr(1, reply.size() - 2);
        if (transcripts) transcripts->push_back(ChatExchange{messages, reply, {}});
        if (!reply.empty() && reply != question) return reply;
    }
    throw DegenerateRephraseError(template_id + ": generator echoed the question 3 times");
}

} // namespace detail

// Semantically equivalent rewrite of q; retried when the generator echoes q.
inline std::string rephrase_question(Gateway& gateway, const ModelEndpoint& generator,
                                     const std::string& question,
                                     std::vector<ChatExchange>* transcripts = nullptr,
                                     int nonce = 0) {
    return detail::generate_variant(gateway, generator, question, "rephrase", transcripts, nonce);
}

// Logically contradictory rewrite of q; the result may be unanswerable.
inline std::string contradict_question(Gateway& gateway, const ModelEndpoint& generator,
                                       const std::string& question,
                                       std::vector<ChatExchange>* transcripts = nullptr) {
    return detail::generate_variant(gateway, generator, question, "contradict", transcripts, 0);
}

// Probe 1: question with no context; a match suggests memorized knowledge.
inline std::pair<std::string, bool> contextless_probe(Gateway& gateway,
                                                      const ModelEndpoint& model,
                                                      const QaInstance& instance, MatchRule rule,
                                                      std::vector<ChatExchange>* transcripts) {
    auto messages = render_prompt("qa_no_context", {{"Question", instance.question}});
    std::string answer = gateway.complete_chat(model, messages);
    if (transcripts) transcripts->push_back(ChatExchange{messages, answer, {}});
    return {answer, answer_matches(answer, instance.gold_answers, rule)};
}

// Probe 2: rephrased question with full context; a miss suggests the original
// success did not come from reading.
inline std::pair<std::string, bool> rephrase_probe(Gateway& gateway, const ModelEndpoint& model,
                                                   const QaInstance& instance,
                                                   const std::string& rephrased, MatchRule rule,
                                                   std::vector<ChatExchange>* transcripts) {
    auto messages = render_prompt(
        "qa_with_context", {{"Context", instance.context}, {"Question", rephrased}});
    std::string answer = gateway.complete_chat(model, messages);
    if (transcripts) transcripts->push_back(ChatExchange{messages, answer, {}});
    return {answer, answer_matches(answer, instance.gold_answers, rule)};
}

// Probe 3: contradictory question with full context; still producing the
// original gold marks a leak. "I don't know" never counts as leaked.
inline std::pair<std::string, bool> contradiction_probe(Gateway& gateway,
                                                        const ModelEndpoint& model,
                                                        const QaInstance& instance,
                                                        const std::string& contradictory,
                                                        MatchRule rule,
                                                        std::vector<ChatExchange>* transcripts) {
    auto messages = render_prompt(
        "qa_with_context_idk", {{"Context", instance.context}, {"Question", contradictory}});
    std::string answer = gateway.complete_chat(model, messages);
    if (transcripts) transcripts->push_back(ChatExchange{messages, answer, {}});
    bool leaked = !is_dont_know(answer) && answer_matches(answer, instance.gold_answers, rule);
    return {answer, leaked};
}

namespace detail {

inline bool high_prior_golds(const std::vector<std::string>& golds) {
    static const std::regex year_like(R"(^\d{3,4}$)");
    for (const auto& g : golds) {
        std::string n = normalize_answer(g);
        if (n == "yes" || n == "no" || n == "true" || n == "false") return true;
        if (std::regex_match(n, year_like)) return true;
    }
    return false;
}

template <typename Probe>
inline auto run_probe(const char* name, Probe probe) {
    try {
        return probe();
    } catch (const TransportError& e) {
        throw TransportError(std::string(name) + " probe: " + e.what());
    }
}

} // namespace detail

// Runs all three probes (no short-circuit, for reporting) and returns the
// disjunction verdict with full transcripts.
inline LeakageVerdict detect(Gateway& gateway, const ModelEndpoint& model,
                             const ModelEndpoint& generator, const QaInstance& instance,
                             MatchRule rule = MatchRule::substring, int n_rephrases = 1) {
    LeakageVerdict verdict;
    verdict.perturbations.generator_model =
        generator.model_name.empty() ? generator.base_url : generator.model_name;

    verdict.perturbations.rephrased =
        rephrase_question(gateway, generator, instance.question, &verdict.transcripts);
    verdict.perturbations.contradictory =
        contradict_question(gateway, generator, instance.question, &verdict.transcripts);

    auto [ctxless_answer, ctxless_match] = detail::run_probe("contextless", [&] {
        return contextless_probe(gateway, model, instance, rule, &verdict.transcripts);
    });
    verdict.contextless_answer = ctxless_answer;
    verdict.contextless_correct = ctxless_match;

    int failures = 0;
    for (int i = 0; i < std::max(1, n_rephrases); ++i) {
        std::string rephrased =
            i == 0 ? verdict.perturbations.rephrased
                   : rephrase_question(gateway, generator, instance.question,
                                       &verdict.transcripts, i);
        auto [reph_answer, reph_match] = detail::run_probe("rephrase", [&] {
            return rephrase_probe(gateway, model, instance, rephrased, rule,
                                  &verdict.transcripts);
        });
        if (i == 0) verdict.rephrase_answer = reph_answer;
        if (!reph_match) ++failures;
    }
    verdict.rephrase_failed = failures * 2 > std::max(1, n_rephrases);

    auto [con_answer, con_leaked] = detail::run_probe("contradiction", [&] {
        return contradiction_probe(gateway, model, instance,
                                   verdict.perturbations.contradictory, rule,
                                   &verdict.transcripts);
    });
    verdict.contradiction_answer = con_answer;
    verdict.contradiction_leaked = con_leaked;

    verdict.leaked = verdict.contextless_correct || verdict.rephrase_failed ||
                     verdict.contradiction_leaked;
    verdict.high_prior = detail::high_prior_golds(instance.gold_answers);
    return verdict;
}

inline nlohmann::json verdict_to_json(const std::string& id, const LeakageVerdict& v) {
    return nlohmann::json{
        {"id", id},
        {"flags",
         {{"contextless_correct", v.contextless_correct},
          {"rephrase_failed", v.rephrase_failed},
          {"contradiction_leaked", v.contradiction_leaked}}},
        {"leaked", v.leaked},
        {"high_prior", v.high_prior},
        {"answers",
         {{"contextless", v.contextless_answer},
          {"rephrase", v.rephrase_answer},
          {"contradiction", v.contradiction_answer}}},
        {"rephrased_question", v.perturbations.rephrased},
        {"contradictory_question", v.perturbations.contradictory}};
}

} // namespace lastingbench
