#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lastingbench/dataset.hpp"
#include "lastingbench/text.hpp"
#include "lastingbench/types.hpp"

namespace lastingbench {

// ---------------------------------------------------------------------------
// simlm: a deterministic in-process model endpoint (chat, logprobs, embeddings)
// with configurable memorized knowledge. Contexts carry planted evidence
// sentences of the form "The answer to <question key> is <answer>." which the
// simulated reader extracts by token overlap, giving provable oracle behavior
// for every pipeline stage.
// ---------------------------------------------------------------------------

enum class SimMode { memorizing, faithful, mixed };

struct SimProfile {
    SimMode mode = SimMode::faithful;
    std::map<std::string, std::string> memory; // normalized question pattern -> answer
    double overlap_threshold = 0.6;            // in (0, 1]
    int vocab_size = 50000;
    double context_weight = 0.9;
};

struct SyntheticCorpus {
    std::vector<QaInstance> instances;
    std::vector<std::string> memorized_ids;
};

namespace sim_detail {

inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",  "an",  "the", "is",    "are",  "was",   "were", "be",  "been", "what",
        "of", "to",  "in",  "on",    "at",   "by",    "for",  "and", "or",   "with",
        "who", "whom", "whose", "which", "when", "where", "why",  "how"};
    return words;
}

inline std::vector<std::string> content_tokens(std::string_view s) {
    std::vector<std::string> out;
    for (auto& t : text::norm_tokens(s))
        if (stopwords().count(t) == 0) out.push_back(std::move(t));
    return out;
}

// Fraction of the key's content tokens that appear in the probe text.
// The key side is the denominator so that additive rephrasings of the probe
// ("To put it differently: ...") do not dilute the match.
inline double key_coverage(std::string_view key, std::string_view probe) {
    auto key_toks = content_tokens(key);
    if (key_toks.empty()) key_toks = text::norm_tokens(key);
    if (key_toks.empty()) return 0.0;
    std::unordered_set<std::string> probe_set;
    for (auto& t : text::norm_tokens(probe)) probe_set.insert(std::move(t));
    size_t hit = 0;
    for (const auto& t : key_toks)
        if (probe_set.count(t)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(key_toks.size());
}

inline bool has_negation(std::string_view question) {
    static const std::unordered_set<std::string> neg = {
        "not", "never", "no", "isnt", "wasnt", "arent", "werent",
        "doesnt", "didnt", "dont", "cannot", "cant"};
    for (const auto& t : text::norm_tokens(question))
        if (neg.count(t)) return true;
    return false;
}

struct PlantedFact {
    std::string key;
    std::string answer;
    size_t sentence_start = 0;
    size_t sentence_end = 0; // exclusive, past the final '.'
};

// Scans for "The answer to <key> is <answer>." occurrences.
inline std::vector<PlantedFact> planted_facts(std::string_view context) {
    static const std::string marker = "The answer to ";
    std::vector<PlantedFact> out;
    size_t pos = 0;
    while ((pos = context.find(marker, pos)) != std::string_view::npos) {
        size_t dot = context.find('.', pos + marker.size());
        if (dot == std::string_view::npos) break;
        std::string_view inner = context.substr(pos + marker.size(), dot - pos - marker.size());
        size_t is_pos = inner.rfind(" is ");
        if (is_pos != std::string_view::npos) {
            PlantedFact f;
            f.key = std::string(inner.substr(0, is_pos));
            f.answer = text::trim(inner.substr(is_pos + 4));
            f.sentence_start = pos;
            f.sentence_end = dot + 1;
            if (!f.key.empty() && !f.answer.empty()) out.push_back(std::move(f));
        }
        pos = dot + 1;
    }
    return out;
}

inline std::optional<PlantedFact> best_planted_match(std::string_view context,
                                                     std::string_view question,
                                                     double threshold) {
    std::optional<PlantedFact> best;
    double best_cov = 0.0;
    for (auto& f : planted_facts(context)) {
        double cov = key_coverage(f.key, question);
        if (cov >= threshold && cov > best_cov) {
            best_cov = cov;
            best = f;
        }
    }
    return best;
}

inline std::optional<std::string> memory_lookup(const SimProfile& profile,
                                                std::string_view question) {
    if (profile.mode == SimMode::faithful) return std::nullopt;
    const std::string* best = nullptr;
    double best_cov = 0.0;
    for (const auto& [key, answer] : profile.memory) {
        double cov = key_coverage(key, question);
        if (cov >= profile.overlap_threshold && cov > best_cov) {
            best_cov = cov;
            best = &answer;
        }
    }
    if (best) return *best;
    return std::nullopt;
}

// ---- prompt field extraction -------------------------------------------

inline std::string find_question(const std::string& prompt) {
    size_t pos = prompt.rfind("Question:");
    if (pos == std::string::npos) return "";
    size_t start = pos + std::string("Question:").size();
    size_t eol = prompt.find('\n', start);
    std::string same_line = text::trim(prompt.substr(start, eol - start));
    if (!same_line.empty()) return same_line;
    if (eol == std::string::npos) return "";
    // Value on the following line (rewrite-style templates).
    size_t next_start = eol + 1;
    size_t next_eol = prompt.find('\n', next_start);
    return text::trim(prompt.substr(next_start, next_eol - next_start));
}

inline std::string find_context(const std::string& prompt) {
    static const std::string begin_marker = "The following are the passages:\n";
    static const std::string end_marker = "\nAnswer the question based on the given passages.";
    size_t b = prompt.find(begin_marker);
    if (b == std::string::npos) return "";
    size_t start = b + begin_marker.size();
    size_t e = prompt.find(end_marker, start);
    if (e == std::string::npos) return "";
    return prompt.substr(start, e - start);
}

inline std::string find_block_after(const std::string& prompt, const std::string& header) {
    size_t pos = prompt.find(header);
    if (pos == std::string::npos) return "";
    size_t start = prompt.find('\n', pos);
    if (start == std::string::npos) return "";
    return prompt.substr(start + 1);
}

// Deterministic pronounceable token with a numeric tail; the tail keeps it
// distinct from every corpus word and question token.
inline std::string counterfact_word(uint64_t h) {
    static const char* syl[] = {"bel", "dor", "fen", "gal", "hur", "jat", "kel", "lom",
                                "mir", "nep", "pol", "qued", "ril", "sev", "tul", "vog",
                                "wim", "yar", "zel", "oxa"};
    std::string w = syl[h % 20];
    w += syl[(h / 20) % 20];
    w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    w += std::to_string(h % 89);
    return w;
}

} // namespace sim_detail

// ---------------------------------------------------------------------------
// Chat
// ---------------------------------------------------------------------------

// Routes on the fixed sentinels of the pipeline's prompt templates, then
// answers deterministically from planted evidence and/or memory.
inline std::string sim_chat(const SimProfile& profile, const std::vector<ChatMessage>& messages) {
    if (messages.empty() || messages.back().role != "user")
        throw std::invalid_argument("sim_chat: last message must be the user prompt");
    std::string prompt;
    for (const auto& m : messages) {
        if (!prompt.empty()) prompt += "\n";
        prompt += m.content;
    }

    const std::string question = sim_detail::find_question(prompt);
    const std::string context = sim_detail::find_context(prompt);

    // Counterfactual rewriting request.
    if (text::contains(prompt, "creative contrarian")) {
        std::string original = sim_detail::find_block_after(prompt, "Original answer:");
        size_t stop = original.find('\n');
        original = text::trim(original.substr(0, stop));

        std::vector<std::string> sentences;
        std::string block = sim_detail::find_block_after(prompt, "Sentences to rewrite:");
        for (const auto& line : text::split_lines(block)) {
            std::string t = text::trim(line);
            size_t dot = t.find(". ");
            if (!t.empty() && std::isdigit(static_cast<unsigned char>(t[0])) &&
                dot != std::string::npos && dot <= 3) {
                sentences.push_back(t.substr(dot + 2));
            }
        }

        uint64_t nonce = 1;
        size_t vpos = prompt.rfind("Variant ");
        if (vpos != std::string::npos) {
            nonce = 0;
            for (size_t i = vpos + 8; i < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[i])); ++i)
                nonce = nonce * 10 + static_cast<uint64_t>(prompt[i] - '0');
            if (nonce == 0) nonce = 1;
        }
        std::string antifact =
            sim_detail::counterfact_word(text::fnv1a64(original + "#" + std::to_string(nonce)));

        nlohmann::json out;
        out["answer"] = antifact;
        auto revised = nlohmann::json::array();
        for (const auto& s : sentences) {
            std::string r = s;
            size_t pos = 0;
            while (!original.empty() && (pos = r.find(original, pos)) != std::string::npos) {
                r.replace(pos, original.size(), antifact);
                pos += antifact.size();
            }
            revised.push_back(r);
        }
        out["revised"] = revised;
        return out.dump();
    }

    // Question perturbation requests.
    if (text::contains(prompt, "keeps exactly the same meaning"))
        return "To put it differently: " + question;
    if (text::contains(prompt, "logically contradicts")) {
        size_t pos = question.find(" is ");
        if (pos != std::string::npos) {
            std::string out = question;
            out.replace(pos, 4, " is not ");
            return out;
        }
        return "Is it not true that " + question;
    }

    // Chain-of-thought evidence request: cite the planted sentence verbatim.
    if (text::contains(prompt, "Step-by-step Reasoning:")) {
        if (!sim_detail::has_negation(question)) {
            auto fact = sim_detail::best_planted_match(context, question, profile.overlap_threshold);
            if (fact) {
                std::string sentence =
                    context.substr(fact->sentence_start, fact->sentence_end - fact->sentence_start);
                return "Answer: " + fact->answer +
                       "\nStep-by-step Reasoning:\n1. The passage states this fact directly.\n[" +
                       sentence + "]";
            }
        }
        return "Answer: I don't know\nStep-by-step Reasoning:\n1. The passages do not state the "
               "asked fact.\n[no supporting passage]";
    }

    // Plain QA. Memory is consulted first except in faithful mode; this is what
    // makes contradiction probes leak for memorizing profiles.
    if (auto memorized = sim_detail::memory_lookup(profile, question)) return *memorized;
    if (!context.empty() && !sim_detail::has_negation(question)) {
        auto fact = sim_detail::best_planted_match(context, question, profile.overlap_threshold);
        if (fact) return fact->answer;
    }
    return "I don't know";
}

// ---------------------------------------------------------------------------
// Logprobs
// ---------------------------------------------------------------------------

// Token probability: context_weight * [t in S] / max(|S|, 1) + (1 - context_weight) / V
// where S is the token set of the prefix plus, outside faithful mode, the
// tokens of memorized answers whose key overlaps the prefix.
inline LogprobScore sim_logprobs(const SimProfile& profile, std::string_view prefix,
                                 std::string_view continuation) {
    if (continuation.empty())
        throw std::invalid_argument("sim_logprobs: empty continuation");

    std::unordered_set<std::string> support;
    for (auto& t : text::tokenize(text::to_lower(prefix))) support.insert(std::move(t));
    if (profile.mode != SimMode::faithful && !prefix.empty()) {
        for (const auto& [key, answer] : profile.memory) {
            if (sim_detail::key_coverage(key, prefix) >= profile.overlap_threshold)
                for (auto& t : text::tokenize(text::to_lower(answer))) support.insert(std::move(t));
        }
    }

    const double uniform = (1.0 - profile.context_weight) / static_cast<double>(profile.vocab_size);
    const double in_support =
        profile.context_weight / static_cast<double>(std::max<size_t>(support.size(), 1));

    std::vector<TokenLogprob> toks;
    for (auto& t : text::tokenize(text::to_lower(continuation))) {
        double p = uniform + (support.count(t) ? in_support : 0.0);
        toks.push_back(TokenLogprob{std::move(t), std::log(p)});
    }
    return LogprobScore::from_tokens(std::move(toks));
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

// Hashed TF-IDF over the batch: bucket = fnv1a64(token) % 1024,
// weight = tf * ln(1 + N/df), then L2 normalization.
inline std::vector<std::vector<float>> sim_embed(const SimProfile&,
                                                 const std::vector<std::string>& texts) {
    if (texts.empty()) throw std::invalid_argument("sim_embed: empty text list");
    constexpr size_t dims = 1024;
    const double n_texts = static_cast<double>(texts.size());

    std::vector<std::map<std::string, int>> tf(texts.size());
    std::map<std::string, int> df;
    for (size_t i = 0; i < texts.size(); ++i) {
        for (auto& t : text::norm_tokens(texts[i])) ++tf[i][t];
        for (const auto& [tok, count] : tf[i]) {
            (void)count;
            ++df[tok];
        }
    }

    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (size_t i = 0; i < texts.size(); ++i) {
        std::vector<double> acc(dims, 0.0);
        for (const auto& [tok, count] : tf[i]) {
            double weight = count * std::log(1.0 + n_texts / static_cast<double>(df[tok]));
            acc[text::fnv1a64(tok) % dims] += weight;
        }
        double norm_sq = 0.0;
        for (double v : acc) norm_sq += v * v;
        std::vector<float> vec(dims, 0.0f);
        if (norm_sq > 0.0) {
            double norm = std::sqrt(norm_sq);
            for (size_t d = 0; d < dims; ++d) vec[d] = static_cast<float>(acc[d] / norm);
        } else {
            vec[0] = 1.0f;
        }
        out.push_back(std::move(vec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Profiles on disk
// ---------------------------------------------------------------------------

inline std::string to_string(SimMode mode) {
    switch (mode) {
        case SimMode::memorizing: return "memorizing";
        case SimMode::faithful: return "faithful";
        case SimMode::mixed: return "mixed";
    }
    return "faithful";
}

inline SimMode sim_mode_from_string(const std::string& s) {
    if (s == "memorizing") return SimMode::memorizing;
    if (s == "faithful") return SimMode::faithful;
    if (s == "mixed") return SimMode::mixed;
    throw std::runtime_error("unknown sim mode: " + s);
}

inline void save_profile(const SimProfile& profile, const std::string& path) {
    nlohmann::json j;
    j["mode"] = to_string(profile.mode);
    j["overlap_threshold"] = profile.overlap_threshold;
    j["vocab_size"] = profile.vocab_size;
    j["context_weight"] = profile.context_weight;
    j["memory"] = profile.memory;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_profile: cannot open " + path);
    out << j.dump(2) << "\n";
}

inline SimProfile load_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_profile: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    SimProfile p;
    p.mode = sim_mode_from_string(j.value("mode", "faithful"));
    p.overlap_threshold = j.value("overlap_threshold", 0.6);
    p.vocab_size = j.value("vocab_size", 50000);
    p.context_weight = j.value("context_weight", 0.9);
    if (j.contains("memory"))
        p.memory = j["memory"].get<std::map<std::string, std::string>>();
    if (p.overlap_threshold <= 0.0 || p.overlap_threshold > 1.0)
        throw std::runtime_error("load_profile: overlap_threshold out of (0,1]");
    if (p.vocab_size < 1) throw std::runtime_error("load_profile: vocab_size must be >= 1");
    return p;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace sim_detail {

inline std::string corpus_word(std::mt19937_64& rng, bool capitalize) {
    static const char* syl[] = {"ba",  "den", "vor", "mel", "tis", "kan", "rel", "sto", "pia",
                                "lun", "gar", "fen", "dru", "nim", "tor", "qua", "bri", "sal"};
    size_t parts = 2 + rng() % 2;
    std::string w;
    for (size_t i = 0; i < parts; ++i) w += syl[rng() % 18];
    if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

inline std::string filler_sentence(std::mt19937_64& rng) {
    size_t words = 5 + rng() % 5;
    std::string s;
    for (size_t i = 0; i < words; ++i) {
        if (i) s += " ";
        s += corpus_word(rng, i == 0);
    }
    return s + ".";
}

} // namespace sim_detail

// Deterministic corpus: each context holds 6 to 12 distractor paragraphs plus
// one paragraph containing the planted sentence "The answer to <key> is <answer>.".
// The first floor(n * fraction) instances are memorized by the returned profile.
inline std::pair<SyntheticCorpus, SimProfile> generate_corpus(uint64_t seed, int n,
                                                              double memorized_fraction) {
    if (n < 0) throw std::invalid_argument("generate_corpus: n must be >= 0");
    if (memorized_fraction < 0.0 || memorized_fraction > 1.0)
        throw std::invalid_argument("generate_corpus: fraction must be in [0,1]");

    static const char* attributes[] = {"capital",  "founder", "river",  "motto",    "anthem",
                                       "emblem",   "harbor",  "summit", "festival", "currency"};
    std::mt19937_64 rng(seed);
    SyntheticCorpus corpus;
    SimProfile profile;
    profile.mode = SimMode::mixed;

    std::set<std::string> used_entities;
    int n_memorized = static_cast<int>(n * memorized_fraction);

    for (int i = 0; i < n; ++i) {
        std::string entity = sim_detail::corpus_word(rng, true);
        while (used_entities.count(entity)) entity = sim_detail::corpus_word(rng, true);
        used_entities.insert(entity);
        const std::string attribute = attributes[rng() % 10];

        std::string answer = sim_detail::corpus_word(rng, true);
        while (answer == entity) answer = sim_detail::corpus_word(rng, true);

        QaInstance inst;
        char id_buf[16];
        std::snprintf(id_buf, sizeof(id_buf), "sim-%04d", i + 1);
        inst.id = id_buf;
        inst.dataset = "simcorpus";
        inst.question = "What is the " + attribute + " of " + entity + "?";
        inst.gold_answers = {answer};

        std::string planted = "The answer to What is the " + attribute + " of " + entity +
                              " is " + answer + ".";
        size_t distractors = 6 + rng() % 7;
        size_t planted_pos = rng() % (distractors + 1);
        std::vector<std::string> paragraphs;
        for (size_t p = 0; p <= distractors; ++p) {
            if (p == planted_pos) {
                std::string para = sim_detail::filler_sentence(rng) + " " + planted;
                if (rng() % 2) para += " " + sim_detail::filler_sentence(rng);
                paragraphs.push_back(para);
            } else {
                size_t n_sents = 2 + rng() % 3;
                std::vector<std::string> sents;
                for (size_t s = 0; s < n_sents; ++s)
                    sents.push_back(sim_detail::filler_sentence(rng));
                paragraphs.push_back(text::join(sents, " "));
            }
        }
        inst.context = text::join(paragraphs, "\n\n");

        if (i < n_memorized) {
            corpus.memorized_ids.push_back(inst.id);
            profile.memory[text::join(text::norm_tokens(inst.question), " ")] = answer;
        }
        corpus.instances.push_back(std::move(inst));
    }
    return {std::move(corpus), std::move(profile)};
}

} // namespace lastingbench
