#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lastingbench/text.hpp"

namespace lastingbench {

// Answer-level scores. em == 1 implies f1 == 1.
struct ScorePair {
    int em = 0;      // {0, 1}
    double f1 = 0.0; // [0, 1]
};

struct Aggregate {
    double em_mean = 0.0;
    double f1_mean = 0.0;
};

// SQuAD-style normalization: lowercase, drop punctuation, drop the articles
// "a"/"an"/"the" as whole tokens, collapse whitespace.
inline std::string normalize_answer(std::string_view answer) {
    std::string lowered = text::to_lower(answer);
    std::string no_punct = text::strip_punct(lowered);
    std::vector<std::string> kept;
    for (const auto& tok : text::tokenize(no_punct)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        kept.push_back(tok);
    }
    return text::join(kept, " ");
}

inline int exact_match(std::string_view pred, const std::vector<std::string>& golds) {
    if (golds.empty()) throw std::invalid_argument("exact_match: empty gold answers");
    std::string p = normalize_answer(pred);
    for (const auto& g : golds)
        if (p == normalize_answer(g)) return 1;
    return 0;
}

namespace detail {

inline double f1_single(const std::vector<std::string>& pred_toks,
                        const std::vector<std::string>& gold_toks) {
    if (pred_toks.empty() && gold_toks.empty()) return 1.0;
    if (pred_toks.empty() || gold_toks.empty()) return 0.0;
    std::unordered_map<std::string, int> counts;
    for (const auto& t : gold_toks) ++counts[t];
    int overlap = 0;
    for (const auto& t : pred_toks) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    double precision = static_cast<double>(overlap) / static_cast<double>(pred_toks.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(gold_toks.size());
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace detail

// Token-level F1 with multiset overlap; best score over the gold list.
inline double f1_score(std::string_view pred, const std::vector<std::string>& golds) {
    if (golds.empty()) throw std::invalid_argument("f1_score: empty gold answers");
    auto pred_toks = text::tokenize(normalize_answer(pred));
    double best = 0.0;
    for (const auto& g : golds) {
        auto gold_toks = text::tokenize(normalize_answer(g));
        best = std::max(best, detail::f1_single(pred_toks, gold_toks));
    }
    return best;
}

inline ScorePair score_answer(std::string_view pred, const std::vector<std::string>& golds) {
    return ScorePair{exact_match(pred, golds), f1_score(pred, golds)};
}

inline Aggregate aggregate(const std::vector<ScorePair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("aggregate: empty score list");
    double em_sum = 0.0, f1_sum = 0.0;
    for (const auto& p : pairs) {
        em_sum += p.em;
        f1_sum += p.f1;
    }
    return Aggregate{em_sum / static_cast<double>(pairs.size()),
                     f1_sum / static_cast<double>(pairs.size())};
}

} // namespace lastingbench
