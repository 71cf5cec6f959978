#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lastingbench/config.hpp"
#include "lastingbench/dataset.hpp"
#include "lastingbench/detector.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/harness.hpp"
#include "lastingbench/localizer.hpp"
#include "lastingbench/parallel.hpp"
#include "lastingbench/rewriter.hpp"
#include "lastingbench/simlm.hpp"

namespace lastingbench {

namespace detail {

inline std::vector<QaInstance> load_datasets(const RunConfig& config) {
    if (config.dataset_paths.empty()) throw std::runtime_error("no dataset configured");
    std::vector<QaInstance> instances;
    for (const auto& path : config.dataset_paths) {
        auto batch = load_jsonl(path);
        instances.insert(instances.end(), batch.begin(), batch.end());
    }
    if (instances.empty()) throw std::runtime_error("empty dataset");
    return instances;
}

inline std::string ensure_out_dir(const RunConfig& config) {
    std::filesystem::create_directories(config.out_dir);
    return config.out_dir;
}

inline std::string effective_cache_path(const RunConfig& config) {
    if (!config.cache_path.empty()) return config.cache_path;
    return config.out_dir + "/cache.jsonl";
}

inline Gateway make_gateway(const RunConfig& config) {
    if (config.cache_mode == CacheMode::live) return Gateway{};
    return Gateway{config.cache_mode, effective_cache_path(config)};
}

// Output names are stored relative to the out dir and the config in its
// canonical location-independent form, so replayed runs into different
// directories emit byte-identical manifests.
inline void write_manifest(const RunConfig& config, const std::string& command,
                           const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["command"] = command;
    m["config_hash"] = config_hash(config);
    m["config"] = config_to_json(config, /*for_hash=*/true);
    std::vector<std::string> names;
    for (const auto& path : outputs)
        names.push_back(std::filesystem::path(path).filename().string());
    m["outputs"] = names;
    std::ofstream out(config.out_dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + config.out_dir);
    out << m.dump(2) << "\n";
}

inline std::string sanitize_label(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
            out.push_back(c);
        else if (!out.empty() && out.back() != '_')
            out.push_back('_');
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "model" : out;
}

inline std::string endpoint_label(const ModelEndpoint& endpoint) {
    if (!endpoint.model_name.empty()) return sanitize_label(endpoint.model_name);
    if (endpoint.is_sim())
        return sanitize_label(std::filesystem::path(endpoint.sim_path()).stem().string());
    return sanitize_label(endpoint.base_url);
}

} // namespace detail

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectSummary {
    int total = 0;
    int leaked = 0;
    int contextless = 0;
    int rephrase_failed = 0;
    int contradiction = 0;
    int errors = 0;
    std::string verdicts_path;
};

inline DetectSummary cmd_detect(const RunConfig& config) {
    auto instances = detail::load_datasets(config);
    detail::ensure_out_dir(config);
    Gateway gateway = detail::make_gateway(config);

    std::vector<nlohmann::json> rows(instances.size());
    parallel_for(instances.size(), config.parallelism, [&](size_t i) {
        const QaInstance& inst = instances[i];
        try {
            LeakageVerdict v = detect(gateway, config.endpoints.answerer,
                                      config.endpoints.generator, inst, config.match_rule,
                                      config.n_rephrases);
            rows[i] = verdict_to_json(inst.id, v);
        } catch (const TransportError& e) {
            rows[i] = {{"id", inst.id}, {"error", e.what()}, {"leaked", false}};
        } catch (const DegenerateRephraseError& e) {
            rows[i] = {{"id", inst.id}, {"error", e.what()}, {"leaked", false}};
        }
    });

    DetectSummary summary;
    summary.total = static_cast<int>(instances.size());
    summary.verdicts_path = config.out_dir + "/verdicts.jsonl";
    std::ofstream out(summary.verdicts_path);
    if (!out) throw std::runtime_error("cannot write " + summary.verdicts_path);
    for (const auto& row : rows) {
        out << row.dump() << "\n";
        if (row.contains("error")) {
            ++summary.errors;
            continue;
        }
        if (row["leaked"].get<bool>()) ++summary.leaked;
        const auto& flags = row["flags"];
        if (flags["contextless_correct"].get<bool>()) ++summary.contextless;
        if (flags["rephrase_failed"].get<bool>()) ++summary.rephrase_failed;
        if (flags["contradiction_leaked"].get<bool>()) ++summary.contradiction;
    }
    detail::write_manifest(config, "detect", {summary.verdicts_path});
    return summary;
}

// ---------------------------------------------------------------------------
// defend
// ---------------------------------------------------------------------------

struct DefendSummary {
    int total = 0;
    int revised = 0;
    int unchanged = 0;
    int unlocalizable = 0;
    int failed = 0;
    std::string defended_path;
    std::string defense_audit_path;
    std::string localization_audit_path;
};

inline DefendSummary cmd_defend(const RunConfig& config, const std::string& verdicts_path) {
    auto instances = detail::load_datasets(config);
    detail::ensure_out_dir(config);
    Gateway gateway = detail::make_gateway(config);

    std::map<std::string, bool> leaked_by_id;
    {
        std::ifstream in(verdicts_path);
        if (!in) throw std::runtime_error("cannot open verdicts " + verdicts_path);
        std::string line;
        while (std::getline(in, line)) {
            if (text::trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line);
            leaked_by_id[j.at("id").get<std::string>()] = j.value("leaked", false);
        }
    }

    std::vector<DefendedInstance> defended(instances.size());
    std::vector<nlohmann::json> defense_rows(instances.size());
    std::vector<nlohmann::json> localization_rows(instances.size());

    parallel_for(instances.size(), config.parallelism, [&](size_t i) {
        const QaInstance& inst = instances[i];
        defended[i] = unchanged_instance(inst);
        auto it = leaked_by_id.find(inst.id);
        if (it == leaked_by_id.end() || !it->second) {
            defense_rows[i] = {{"id", inst.id}, {"status", "not_leaked"}};
            return;
        }
        try {
            auto chunks = chunk_context(inst, ChunkPolicy{config.max_chars});
            std::string rephrased =
                rephrase_question(gateway, config.endpoints.generator, inst.question);

            nlohmann::json rounds = nlohmann::json::array();
            CriticalSection critical =
                localize(gateway, config.endpoints.reasoner, config.endpoints.embedder, inst,
                         chunks, rephrased, config.localize_config(), config.match_rule, &rounds);
            nlohmann::json spans = nlohmann::json::array();
            for (const auto& s : critical.sentence_spans)
                spans.push_back({s.span.start, s.span.end});
            localization_rows[i] = {{"id", inst.id},
                                    {"iterations", critical.iterations_used},
                                    {"chunk_indices", critical.chunk_indices},
                                    {"spans", spans},
                                    {"verified", critical.verified},
                                    {"rounds", rounds}};
            if (!critical.verified) {
                defense_rows[i] = {{"id", inst.id}, {"status", "unlocalizable"}};
                return;
            }

            nlohmann::json audit;
            defended[i] = defend(gateway, config.endpoints.generator, config.endpoints.scorer,
                                 inst, critical, config.defend_config(), &audit);
            nlohmann::json edits = nlohmann::json::array();
            for (const auto& e : defended[i].edits)
                edits.push_back({{"span", {e.span.start, e.span.end}},
                                 {"original", e.original},
                                 {"replacement", e.replacement}});
            defense_rows[i] = {{"id", inst.id},
                               {"status", "revised"},
                               {"variants", audit["variants"]},
                               {"chosen", audit["chosen"]},
                               {"edits", edits}};
        } catch (const TransportError& e) {
            defense_rows[i] = {{"id", inst.id}, {"status", "failed"}, {"error", e.what()}};
        } catch (const ParseError& e) {
            defense_rows[i] = {{"id", inst.id}, {"status", "failed"}, {"error", e.what()}};
        } catch (const DegenerateRephraseError& e) {
            defense_rows[i] = {{"id", inst.id}, {"status", "failed"}, {"error", e.what()}};
        } catch (const RewriteGenerationError& e) {
            defense_rows[i] = {{"id", inst.id}, {"status", "failed"}, {"error", e.what()}};
        }
    });

    DefendSummary summary;
    summary.total = static_cast<int>(instances.size());
    summary.defended_path = config.out_dir + "/defended.jsonl";
    summary.defense_audit_path = config.out_dir + "/defense_audit.jsonl";
    summary.localization_audit_path = config.out_dir + "/localization_audit.jsonl";

    write_defended_jsonl(defended, summary.defended_path);
    {
        std::ofstream audit_out(summary.defense_audit_path);
        std::ofstream loc_out(summary.localization_audit_path);
        if (!audit_out || !loc_out)
            throw std::runtime_error("cannot write audit logs in " + config.out_dir);
        for (size_t i = 0; i < instances.size(); ++i) {
            audit_out << defense_rows[i].dump() << "\n";
            if (!localization_rows[i].is_null()) loc_out << localization_rows[i].dump() << "\n";
            const std::string status = defense_rows[i].value("status", "failed");
            if (status == "revised") ++summary.revised;
            else ++summary.unchanged;
            if (status == "unlocalizable") ++summary.unlocalizable;
            if (status == "failed") ++summary.failed;
        }
    }
    detail::write_manifest(config, "defend",
                           {summary.defended_path, summary.defense_audit_path,
                            summary.localization_audit_path});
    return summary;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreSummary {
    std::string dataset;
    std::string model;
    Condition condition = Condition::original;
    double em_mean = 0.0;
    double f1_mean = 0.0;
    int total = 0;
    int errors = 0;
    std::string scores_path;
};

inline ScoreSummary cmd_score(const RunConfig& config, const std::string& dataset_path,
                              Condition condition, const ModelEndpoint& model) {
    auto instances = load_jsonl(dataset_path);
    if (instances.empty()) throw std::runtime_error("empty dataset " + dataset_path);
    detail::ensure_out_dir(config);
    Gateway gateway = detail::make_gateway(config);

    EvalOptions options;
    options.parallelism = config.parallelism;
    options.generator = config.endpoints.generator;
    RunResult run = evaluate(gateway, model, instances, condition, options);

    ScoreSummary summary;
    summary.dataset = run.dataset;
    summary.model = run.model;
    summary.condition = condition;
    summary.total = static_cast<int>(run.scores.size());
    Aggregate agg = aggregate_run(run);
    summary.em_mean = agg.em_mean;
    summary.f1_mean = agg.f1_mean;

    summary.scores_path = config.out_dir + "/scores_" + to_string(condition) + "_" +
                          detail::endpoint_label(model) + ".jsonl";
    std::ofstream out(summary.scores_path);
    if (!out) throw std::runtime_error("cannot write " + summary.scores_path);
    out << nlohmann::json{{"meta",
                           {{"dataset", run.dataset},
                            {"model", run.model},
                            {"condition", to_string(condition)}}}}
               .dump()
        << "\n";
    for (const auto& s : run.scores) {
        if (s.error) ++summary.errors;
        out << nlohmann::json{{"id", s.id},
                              {"em", s.em},
                              {"f1", s.f1},
                              {"error", s.error},
                              {"answer", s.answer}}
                   .dump()
            << "\n";
    }
    detail::write_manifest(config, "score", {summary.scores_path});
    return summary;
}

inline RunResult load_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open run file " + path);
    RunResult run;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (first && j.contains("meta")) {
            run.dataset = j["meta"].value("dataset", "");
            run.model = j["meta"].value("model", "");
            run.condition = condition_from_string(j["meta"].value("condition", "original"));
            first = false;
            continue;
        }
        first = false;
        InstanceScore s;
        s.id = j.at("id").get<std::string>();
        s.em = j.at("em").get<int>();
        s.f1 = j.at("f1").get<double>();
        s.error = j.value("error", false);
        run.scores.push_back(std::move(s));
    }
    return run;
}

// Fraction of entries in a defended JSONL whose edit list is non-empty.
inline double revised_fraction_of(const std::string& defended_path) {
    std::ifstream in(defended_path);
    if (!in) throw std::runtime_error("cannot open " + defended_path);
    size_t total = 0, revised = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        ++total;
        nlohmann::json j = nlohmann::json::parse(line);
        if (j.contains("lastingbench_edits") && !j["lastingbench_edits"].empty()) ++revised;
    }
    if (total == 0) return 0.0;
    return static_cast<double>(revised) / static_cast<double>(total);
}

struct ReportRequest {
    std::string original_run_path;
    std::string defended_run_path;
    std::string defended_jsonl_path; // optional, for the revised fraction
    ReportFormat format = ReportFormat::markdown;
    std::string out_path; // optional; stdout when empty
};

inline std::string cmd_report(const RunConfig& config, const ReportRequest& request) {
    RunResult original = load_run(request.original_run_path);
    RunResult defended = load_run(request.defended_run_path);
    double revised = request.defended_jsonl_path.empty()
                         ? 0.0
                         : revised_fraction_of(request.defended_jsonl_path);
    ComparisonReport report = compare(original, defended, revised);
    std::string rendered = render_report(report, request.format);
    if (!request.out_path.empty()) {
        detail::ensure_out_dir(config);
        std::ofstream out(request.out_path);
        if (!out) throw std::runtime_error("cannot write " + request.out_path);
        out << rendered;
        detail::write_manifest(config, "report", {request.out_path});
    }
    return rendered;
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

struct GenCorpusSummary {
    int total = 0;
    int memorized = 0;
    std::string corpus_path;
    std::string mixed_profile_path;
    std::string faithful_profile_path;
    std::string memorizing_profile_path;
    std::string meta_path;
};

inline GenCorpusSummary cmd_gen_corpus(uint64_t seed, int n, double fraction,
                                       const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto [corpus, mixed_profile] = generate_corpus(seed, n, fraction);

    GenCorpusSummary summary;
    summary.total = static_cast<int>(corpus.instances.size());
    summary.memorized = static_cast<int>(corpus.memorized_ids.size());
    summary.corpus_path = out_dir + "/corpus.jsonl";
    summary.mixed_profile_path = out_dir + "/sim_mixed.json";
    summary.faithful_profile_path = out_dir + "/sim_faithful.json";
    summary.memorizing_profile_path = out_dir + "/sim_memorizing.json";
    summary.meta_path = out_dir + "/corpus_meta.json";

    write_jsonl(corpus.instances, summary.corpus_path);
    save_profile(mixed_profile, summary.mixed_profile_path);

    SimProfile faithful = mixed_profile;
    faithful.mode = SimMode::faithful;
    faithful.memory.clear();
    save_profile(faithful, summary.faithful_profile_path);

    SimProfile memorizing = mixed_profile;
    memorizing.mode = SimMode::memorizing;
    for (const auto& inst : corpus.instances)
        memorizing.memory[text::join(text::norm_tokens(inst.question), " ")] =
            inst.gold_answers.front();
    save_profile(memorizing, summary.memorizing_profile_path);

    nlohmann::json meta;
    meta["seed"] = seed;
    meta["n"] = n;
    meta["memorized_fraction"] = fraction;
    meta["memorized_ids"] = corpus.memorized_ids;
    std::ofstream meta_out(summary.meta_path);
    if (!meta_out) throw std::runtime_error("cannot write " + summary.meta_path);
    meta_out << meta.dump(2) << "\n";
    return summary;
}

} // namespace lastingbench
