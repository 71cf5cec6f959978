#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lastingbench/text.hpp"
#include "lastingbench/types.hpp"

namespace lastingbench {

// One benchmark entry. `extra` carries every input field we do not interpret,
// so writing an untouched instance back reproduces the original record.
struct QaInstance {
    std::string id;
    std::string context;
    std::string question;
    std::vector<std::string> gold_answers;
    std::string dataset;
    nlohmann::json extra = nlohmann::json::object();
};

struct Chunk {
    size_t index = 0; // 0-based position in the chunk list
    Span span;        // byte range into the owning context
    std::string text; // exact substring context[span]
};

struct SentenceSpan {
    Span span;
    std::string text;
    size_t chunk_index = 0;
};

struct ChunkPolicy {
    size_t max_chars = 1200;
};

// A span replacement applied to a context.
struct Edit {
    Span span;
    std::string original;
    std::string replacement;
};

struct DefendedInstance {
    std::string id;
    std::string defended_context;
    std::string antifact_answer; // empty when the instance was left unchanged
    std::vector<Edit> edits;
    int chosen_variant = -1;
    QaInstance original;

    bool revised() const { return !edits.empty(); }
};

inline DefendedInstance unchanged_instance(const QaInstance& instance) {
    DefendedInstance d;
    d.id = instance.id;
    d.defended_context = instance.context;
    d.original = instance;
    return d;
}

// --------------------------------------------------------------------------
// Sentence splitting
// --------------------------------------------------------------------------

namespace detail {

inline const std::unordered_set<std::string>& sentence_abbreviations() {
    static const std::unordered_set<std::string> abbr = {
        "mr.", "mrs.", "dr.", "st.", "c.", "e.g.", "i.e."};
    return abbr;
}

// Token ending at (and including) the '.' at position `dot`.
inline std::string token_ending_at(std::string_view s, size_t dot) {
    size_t start = dot;
    while (start > 0 && !text::is_space(s[start - 1])) --start;
    return text::to_lower(s.substr(start, dot - start + 1));
}

} // namespace detail

// Splits after '.', '!' or '?' followed by whitespace and an uppercase letter,
// or at end of text. Abbreviations from the fixed list never end a sentence.
// Spans tile the non-whitespace content exactly.
inline std::vector<SentenceSpan> split_sentences(std::string_view input) {
    std::vector<SentenceSpan> out;
    size_t n = input.size();
    size_t i = 0;

    auto skip_ws = [&](size_t pos) {
        while (pos < n && text::is_space(input[pos])) ++pos;
        return pos;
    };

    size_t start = skip_ws(0);
    i = start;
    while (i < n) {
        char c = input[i];
        if (c == '.' || c == '!' || c == '?') {
            bool boundary = false;
            size_t after = i + 1;
            if (after >= n) {
                boundary = true;
            } else if (text::is_space(input[after])) {
                size_t next = skip_ws(after);
                if (next >= n || text::is_upper(input[next])) boundary = true;
            }
            if (boundary && c == '.' &&
                detail::sentence_abbreviations().count(detail::token_ending_at(input, i)) > 0) {
                boundary = false;
            }
            if (boundary) {
                SentenceSpan s;
                s.span = Span{start, i + 1};
                s.text = std::string(input.substr(start, i + 1 - start));
                out.push_back(std::move(s));
                start = skip_ws(i + 1);
                i = start;
                continue;
            }
        }
        ++i;
    }

    // Trailing material without a terminator.
    size_t last = n;
    while (last > start && text::is_space(input[last - 1])) --last;
    if (last > start && start < n) {
        SentenceSpan s;
        s.span = Span{start, last};
        s.text = std::string(input.substr(start, last - start));
        out.push_back(std::move(s));
    }
    return out;
}

// Sentences of one chunk, with spans rebased to context coordinates.
inline std::vector<SentenceSpan> sentences_in_chunk(const Chunk& chunk) {
    auto sentences = split_sentences(chunk.text);
    for (auto& s : sentences) {
        s.span.start += chunk.span.start;
        s.span.end += chunk.span.start;
        s.chunk_index = chunk.index;
    }
    return sentences;
}

// --------------------------------------------------------------------------
// Context chunking
// --------------------------------------------------------------------------

namespace detail {

// Maximal whitespace runs containing at least two newlines separate paragraphs.
inline std::vector<Span> paragraph_spans(std::string_view context) {
    std::vector<Span> paragraphs;
    size_t n = context.size();
    size_t i = 0;
    size_t para_start = std::string::npos;
    while (i <= n) {
        if (i == n) {
            if (para_start != std::string::npos) paragraphs.push_back(Span{para_start, n});
            break;
        }
        if (text::is_space(context[i])) {
            size_t run_start = i;
            int newlines = 0;
            while (i < n && text::is_space(context[i])) {
                if (context[i] == '\n') ++newlines;
                ++i;
            }
            if (newlines >= 2 && para_start != std::string::npos) {
                paragraphs.push_back(Span{para_start, run_start});
                para_start = std::string::npos;
            }
        } else {
            if (para_start == std::string::npos) para_start = i;
            ++i;
        }
    }
    // Trim trailing whitespace kept inside a paragraph (single-newline runs).
    for (auto& p : paragraphs) {
        while (p.end > p.start && text::is_space(context[p.end - 1])) --p.end;
        while (p.start < p.end && text::is_space(context[p.start])) ++p.start;
    }
    return paragraphs;
}

} // namespace detail

// Paragraph-first chunking with a sentence-boundary fallback for paragraphs
// longer than policy.max_chars. Spans are non-overlapping, sorted, and slice
// the context exactly, so reassembly with the inter-chunk gaps is byte-exact.
inline std::vector<Chunk> chunk_context(const QaInstance& instance,
                                        const ChunkPolicy& policy = {}) {
    std::vector<Chunk> chunks;
    const std::string& context = instance.context;
    for (const Span& para : detail::paragraph_spans(context)) {
        if (para.length() <= policy.max_chars) {
            chunks.push_back(Chunk{0, para, std::string(context.substr(para.start, para.length()))});
            continue;
        }
        std::string_view para_text(context.data() + para.start, para.length());
        auto sentences = split_sentences(para_text);
        if (sentences.empty()) {
            chunks.push_back(Chunk{0, para, std::string(para_text)});
            continue;
        }
        size_t group_begin = 0;
        while (group_begin < sentences.size()) {
            size_t group_end = group_begin + 1;
            while (group_end < sentences.size() &&
                   sentences[group_end].span.end - sentences[group_begin].span.start <=
                       policy.max_chars) {
                ++group_end;
            }
            Span span{para.start + sentences[group_begin].span.start,
                      para.start + sentences[group_end - 1].span.end};
            chunks.push_back(Chunk{0, span, std::string(context.substr(span.start, span.length()))});
            group_begin = group_end;
        }
    }
    for (size_t i = 0; i < chunks.size(); ++i) chunks[i].index = i;
    return chunks;
}

// --------------------------------------------------------------------------
// JSONL I/O
// --------------------------------------------------------------------------

// Loads LongBench-style records: {"input": question, "context": ..., "answers": [...]}.
// Unknown fields pass through via `extra`. A missing id becomes "<dataset>-<line#>".
inline std::vector<QaInstance> load_jsonl(const std::string& path,
                                          const std::string& dataset_tag = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
    std::string default_tag =
        dataset_tag.empty() ? std::filesystem::path(path).stem().string() : dataset_tag;

    std::vector<QaInstance> out;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed JSON line: " + e.what());
        }
        if (!j.is_object())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected a JSON object");

        QaInstance inst;
        inst.dataset = j.value("dataset", default_tag);
        if (j.contains("_id") && j["_id"].is_string())
            inst.id = j["_id"].get<std::string>();
        else if (j.contains("id") && j["id"].is_string())
            inst.id = j["id"].get<std::string>();
        else
            inst.id = inst.dataset + "-" + std::to_string(line_no);

        if (!j.contains("input") || !j["input"].is_string())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": missing string field 'input'");
        if (!j.contains("context") || !j["context"].is_string())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": missing string field 'context'");
        inst.question = j["input"].get<std::string>();
        inst.context = j["context"].get<std::string>();

        if (!j.contains("answers") || !j["answers"].is_array())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": missing array field 'answers'");
        for (const auto& a : j["answers"]) {
            if (!a.is_string())
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": non-string answer");
            inst.gold_answers.push_back(a.get<std::string>());
        }
        if (inst.gold_answers.empty())
            throw std::runtime_error("empty gold answers for id " + inst.id + " (" + path + ":" +
                                     std::to_string(line_no) + ")");
        if (!seen_ids.insert(inst.id).second)
            throw std::runtime_error("duplicate id " + inst.id + " (" + path + ":" +
                                     std::to_string(line_no) + ")");

        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() == "input" || it.key() == "context" || it.key() == "answers" ||
                it.key() == "_id" || it.key() == "id" || it.key() == "dataset")
                continue;
            inst.extra[it.key()] = it.value();
        }
        out.push_back(std::move(inst));
    }
    return out;
}

inline nlohmann::json instance_to_json(const QaInstance& inst) {
    nlohmann::json j = inst.extra;
    j["_id"] = inst.id;
    j["input"] = inst.question;
    j["context"] = inst.context;
    j["answers"] = inst.gold_answers;
    j["dataset"] = inst.dataset;
    return j;
}

inline void write_jsonl(const std::vector<QaInstance>& instances, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_jsonl: cannot open " + path);
    for (const auto& inst : instances) out << instance_to_json(inst).dump() << "\n";
    if (!out) throw std::runtime_error("write_jsonl: write failed for " + path);
}

// Same schema as the input files: context swapped for the defended context,
// answers swapped for the antifact answer, originals preserved under
// "original_answers", and the replacement map under "lastingbench_edits".
inline void write_defended_jsonl(const std::vector<DefendedInstance>& instances,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_defended_jsonl: cannot open " + path);
    for (const auto& d : instances) {
        nlohmann::json j = d.original.extra;
        j["_id"] = d.id;
        j["input"] = d.original.question;
        j["context"] = d.defended_context;
        j["dataset"] = d.original.dataset;
        if (d.revised() && !d.antifact_answer.empty())
            j["answers"] = std::vector<std::string>{d.antifact_answer};
        else
            j["answers"] = d.original.gold_answers;
        j["original_answers"] = d.original.gold_answers;
        nlohmann::json edits = nlohmann::json::array();
        for (const auto& e : d.edits) {
            edits.push_back({{"span", {e.span.start, e.span.end}},
                             {"original", e.original},
                             {"replacement", e.replacement}});
        }
        j["lastingbench_edits"] = edits;
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write_defended_jsonl: write failed for " + path);
}

} // namespace lastingbench
