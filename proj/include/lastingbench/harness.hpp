#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lastingbench/dataset.hpp"
#include "lastingbench/detector.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/metrics.hpp"
#include "lastingbench/parallel.hpp"

namespace lastingbench {

enum class Condition { original, defended, contextless, rephrased, contradictory };

inline std::string to_string(Condition c) {
    switch (c) {
        case Condition::original: return "original";
        case Condition::defended: return "defended";
        case Condition::contextless: return "contextless";
        case Condition::rephrased: return "rephrased";
        case Condition::contradictory: return "contradictory";
    }
    return "original";
}

inline Condition condition_from_string(const std::string& s) {
    if (s == "original") return Condition::original;
    if (s == "defended") return Condition::defended;
    if (s == "contextless") return Condition::contextless;
    if (s == "rephrased") return Condition::rephrased;
    if (s == "contradictory") return Condition::contradictory;
    throw std::runtime_error("unknown condition: " + s);
}

struct InstanceScore {
    std::string id;
    int em = 0;
    double f1 = 0.0;
    bool error = false;
    std::string answer;
};

struct RunResult {
    std::string dataset;
    std::string model;
    Condition condition = Condition::original;
    std::vector<InstanceScore> scores;
};

struct EvalOptions {
    int parallelism = 1;
    // Generator for the rephrased/contradictory conditions.
    ModelEndpoint generator;
};

// Trailing "Answer: ..." extraction; chat models pad their replies.
inline std::string extract_answer(const std::string& reply) {
    size_t pos = reply.rfind("Answer:");
    if (pos == std::string::npos) return reply;
    std::string tail = text::trim(reply.substr(pos + 7));
    size_t eol = tail.find('\n');
    if (eol != std::string::npos) tail = text::trim(tail.substr(0, eol));
    if (tail.size() >= 2 && tail.front() == '[' && tail.back() == ']')
        tail = text::trim(tail.substr(1, tail.size() - 2));
    return tail.empty() ? reply : tail;
}

// Scores both the raw reply and the extracted answer, keeping the better
// value per metric.
inline ScorePair score_reply(const std::string& reply, const std::vector<std::string>& golds) {
    ScorePair full = score_answer(reply, golds);
    ScorePair extracted = score_answer(extract_answer(reply), golds);
    return ScorePair{std::max(full.em, extracted.em), std::max(full.f1, extracted.f1)};
}

// Scores one model on one dataset under one condition. Transport failures
// score 0 with the error flag set; the run continues.
inline RunResult evaluate(Gateway& gateway, const ModelEndpoint& model,
                          const std::vector<QaInstance>& instances, Condition condition,
                          const EvalOptions& options = {}) {
    if (instances.empty()) throw std::invalid_argument("evaluate: empty instance list");

    RunResult run;
    run.dataset = instances.front().dataset;
    run.model = model.model_name.empty() ? model.base_url : model.model_name;
    run.condition = condition;
    run.scores.resize(instances.size());

    parallel_for(instances.size(), options.parallelism, [&](size_t i) {
        const QaInstance& inst = instances[i];
        InstanceScore& row = run.scores[i];
        row.id = inst.id;
        try {
            std::vector<ChatMessage> messages;
            switch (condition) {
                case Condition::original:
                case Condition::defended:
                    messages = render_prompt("qa_with_context", {{"Context", inst.context},
                                                                 {"Question", inst.question}});
                    break;
                case Condition::contextless:
                    messages = render_prompt("qa_no_context", {{"Question", inst.question}});
                    break;
                case Condition::rephrased: {
                    std::string q = rephrase_question(gateway, options.generator, inst.question);
                    messages = render_prompt("qa_with_context",
                                             {{"Context", inst.context}, {"Question", q}});
                    break;
                }
                case Condition::contradictory: {
                    std::string q = contradict_question(gateway, options.generator, inst.question);
                    messages = render_prompt("qa_with_context_idk",
                                             {{"Context", inst.context}, {"Question", q}});
                    break;
                }
            }
            row.answer = gateway.complete_chat(model, messages);
            ScorePair pair = score_reply(row.answer, inst.gold_answers);
            row.em = pair.em;
            row.f1 = pair.f1;
        } catch (const TransportError&) {
            row.error = true;
        } catch (const DegenerateRephraseError&) {
            row.error = true;
        }
    });
    return run;
}

inline Aggregate aggregate_run(const RunResult& run) {
    std::vector<ScorePair> pairs;
    pairs.reserve(run.scores.size());
    for (const auto& s : run.scores) pairs.push_back(ScorePair{s.em, s.f1});
    return aggregate(pairs);
}

// ---------------------------------------------------------------------------
// Comparison reports
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string model;
    std::string dataset;
    double em_orig = 0.0, f1_orig = 0.0;
    double em_def = 0.0, f1_def = 0.0;
    double delta_em = 0.0, delta_f1 = 0.0;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    double revised_fraction = 0.0;
};

enum class ReportFormat { markdown, csv };

// Pairs an original run with a defended run over the same id set.
inline ComparisonReport compare(const RunResult& original, const RunResult& defended,
                                double revised_fraction = 0.0) {
    if (original.model != defended.model)
        throw std::invalid_argument("compare: runs score different models (" + original.model +
                                    " vs " + defended.model + ")");
    std::set<std::string> orig_ids, def_ids;
    for (const auto& s : original.scores) orig_ids.insert(s.id);
    for (const auto& s : defended.scores) def_ids.insert(s.id);
    if (orig_ids != def_ids) {
        std::vector<std::string> diff;
        std::set_symmetric_difference(orig_ids.begin(), orig_ids.end(), def_ids.begin(),
                                      def_ids.end(), std::back_inserter(diff));
        throw std::runtime_error("compare: id mismatch: " + text::join(diff, ", "));
    }

    Aggregate orig_agg = aggregate_run(original);
    Aggregate def_agg = aggregate_run(defended);
    ComparisonRow row;
    row.model = original.model;
    row.dataset = original.dataset;
    row.em_orig = orig_agg.em_mean;
    row.f1_orig = orig_agg.f1_mean;
    row.em_def = def_agg.em_mean;
    row.f1_def = def_agg.f1_mean;
    row.delta_em = def_agg.em_mean - orig_agg.em_mean;
    row.delta_f1 = def_agg.f1_mean - orig_agg.f1_mean;

    ComparisonReport report;
    report.rows.push_back(row);
    report.revised_fraction = revised_fraction;
    std::sort(report.rows.begin(), report.rows.end(),
              [](const ComparisonRow& a, const ComparisonRow& b) { return a.model < b.model; });
    return report;
}

inline ComparisonReport merge_reports(const std::vector<ComparisonReport>& reports) {
    ComparisonReport out;
    for (const auto& r : reports) {
        out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
        out.revised_fraction = r.revised_fraction;
    }
    std::sort(out.rows.begin(), out.rows.end(),
              [](const ComparisonRow& a, const ComparisonRow& b) { return a.model < b.model; });
    return out;
}

namespace detail {

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

} // namespace detail

// Stable column order: model, dataset, em_orig, f1_orig, em_def, f1_def,
// delta_em, delta_f1, revised_fraction.
inline std::string render_report(const ComparisonReport& report, ReportFormat format) {
    using detail::csv_field;
    using detail::fmt4;
    std::string out;
    if (format == ReportFormat::csv) {
        out = "model,dataset,em_orig,f1_orig,em_def,f1_def,delta_em,delta_f1,revised_fraction\r\n";
        for (const auto& r : report.rows) {
            out += csv_field(r.model) + "," + csv_field(r.dataset) + "," + fmt4(r.em_orig) + "," +
                   fmt4(r.f1_orig) + "," + fmt4(r.em_def) + "," + fmt4(r.f1_def) + "," +
                   fmt4(r.delta_em) + "," + fmt4(r.delta_f1) + "," +
                   fmt4(report.revised_fraction) + "\r\n";
        }
        return out;
    }
    out = "| model | dataset | em_orig | f1_orig | em_def | f1_def | delta_em | delta_f1 |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
        out += "| " + r.model + " | " + r.dataset + " | " + fmt4(r.em_orig) + " | " +
               fmt4(r.f1_orig) + " | " + fmt4(r.em_def) + " | " + fmt4(r.f1_def) + " | " +
               fmt4(r.delta_em) + " | " + fmt4(r.delta_f1) + " |\n";
    }
    out += "\nRevised fraction: " + fmt4(report.revised_fraction) + "\n";
    return out;
}

} // namespace lastingbench
