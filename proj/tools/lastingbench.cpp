// Command-line entry point: detect -> defend -> score -> report, plus the
// synthetic corpus generator. Stages are separate subcommands with file
// handoffs so expensive model calls stay resumable and auditable.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lastingbench/pipeline.hpp"

namespace lb = lastingbench;

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> datasets;
    std::string out_dir;
    std::string cache_mode;
    std::string cache_file;
    int parallelism = 0;
    uint64_t seed = 0;
    bool seed_set = false;
    size_t k_chunks = 0;
    int k_variants = 0;
    int max_iters = 0;
    std::string cppl_scope;
    std::string match_rule;
    std::string answerer, generator, reasoner, scorer, embedder;
    std::string model_name;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--dataset", f.datasets, "dataset JSONL path (repeatable)");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--cache", f.cache_mode, "cache mode: record|replay|live")
        ->check(CLI::IsMember({"record", "replay", "live"}));
    cmd->add_option("--cache-file", f.cache_file, "cache JSONL path");
    cmd->add_option("--parallelism", f.parallelism, "worker count")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_option("--k-chunks", f.k_chunks, "retrieval top-k");
    cmd->add_option("--k-variants", f.k_variants, "counterfactual variants per instance");
    cmd->add_option("--max-iters", f.max_iters, "localization retries");
    cmd->add_option("--cppl-scope", f.cppl_scope, "merged|critical_only")
        ->check(CLI::IsMember({"merged", "critical_only"}));
    cmd->add_option("--match-rule", f.match_rule, "strict|substring")
        ->check(CLI::IsMember({"strict", "substring"}));
    cmd->add_option("--answerer", f.answerer, "answerer endpoint base URL");
    cmd->add_option("--generator", f.generator, "generator endpoint base URL");
    cmd->add_option("--reasoner", f.reasoner, "reasoner endpoint base URL");
    cmd->add_option("--scorer", f.scorer, "scorer endpoint base URL");
    cmd->add_option("--embedder", f.embedder, "embedder endpoint base URL");
    cmd->add_option("--model-name", f.model_name, "model name for the answerer");
}

lb::RunConfig build_config(const CLI::App* cmd, const CommonFlags& f) {
    lb::RunConfig config;
    if (!f.config_path.empty()) config = lb::load_config(f.config_path);
    if (!f.datasets.empty()) config.dataset_paths = f.datasets;
    if (cmd->count("--out")) config.out_dir = f.out_dir;
    if (cmd->count("--cache")) config.cache_mode = lb::cache_mode_from_string(f.cache_mode);
    if (cmd->count("--cache-file")) config.cache_path = f.cache_file;
    if (cmd->count("--parallelism")) config.parallelism = f.parallelism;
    if (cmd->count("--seed")) config.seed = f.seed;
    if (cmd->count("--k-chunks")) config.k_chunks = f.k_chunks;
    if (cmd->count("--k-variants")) config.k_variants = f.k_variants;
    if (cmd->count("--max-iters")) config.max_iters = f.max_iters;
    if (cmd->count("--cppl-scope")) config.cppl_scope = lb::cppl_scope_from_string(f.cppl_scope);
    if (cmd->count("--match-rule")) config.match_rule = lb::match_rule_from_string(f.match_rule);

    auto override_url = [&](lb::ModelEndpoint& e, const std::string& url) {
        if (!url.empty()) e.base_url = url;
    };
    bool answerer_only_default =
        !f.answerer.empty() && f.generator.empty() && f.reasoner.empty() && f.scorer.empty() &&
        f.embedder.empty() && f.config_path.empty();
    override_url(config.endpoints.answerer, f.answerer);
    if (answerer_only_default) {
        // Bare --answerer with no config wires every role to the same endpoint.
        config.endpoints.generator = config.endpoints.answerer;
        config.endpoints.reasoner = config.endpoints.answerer;
        config.endpoints.scorer = config.endpoints.answerer;
        config.endpoints.embedder = config.endpoints.answerer;
    }
    override_url(config.endpoints.generator, f.generator);
    override_url(config.endpoints.reasoner, f.reasoner);
    override_url(config.endpoints.scorer, f.scorer);
    override_url(config.endpoints.embedder, f.embedder);
    if (cmd->count("--model-name")) config.endpoints.answerer.model_name = f.model_name;
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lastingbench: leakage detection and counterfactual defense for QA benchmarks"};
    app.require_subcommand(1);

    CommonFlags detect_flags;
    auto* detect_cmd = app.add_subcommand("detect", "flag instances answered from memory");
    add_common_flags(detect_cmd, detect_flags);

    CommonFlags defend_flags;
    std::string verdicts_path;
    auto* defend_cmd = app.add_subcommand("defend", "rewrite leaked evidence to counterfactuals");
    add_common_flags(defend_cmd, defend_flags);
    defend_cmd->add_option("--verdicts", verdicts_path, "verdicts JSONL from detect")
        ->required();

    CommonFlags score_flags;
    std::string score_dataset, score_condition = "original";
    auto* score_cmd = app.add_subcommand("score", "score a model on a dataset");
    add_common_flags(score_cmd, score_flags);
    score_cmd->add_option("--condition", score_condition,
                          "original|defended|contextless|rephrased|contradictory")
        ->check(CLI::IsMember(
            {"original", "defended", "contextless", "rephrased", "contradictory"}));

    CommonFlags report_flags;
    std::string orig_run, def_run, defended_file, report_format = "markdown", report_out;
    auto* report_cmd = app.add_subcommand("report", "compare original vs defended runs");
    add_common_flags(report_cmd, report_flags);
    report_cmd->add_option("--orig", orig_run, "score file for the original run")->required();
    report_cmd->add_option("--def", def_run, "score file for the defended run")->required();
    report_cmd->add_option("--defended-file", defended_file,
                           "defended JSONL for the revised fraction");
    report_cmd->add_option("--format", report_format, "markdown|csv")
        ->check(CLI::IsMember({"markdown", "csv"}));
    report_cmd->add_option("--out-file", report_out, "write the report here instead of stdout");

    uint64_t corpus_seed = 7;
    int corpus_n = 50;
    double corpus_fraction = 0.4;
    std::string corpus_out = "corpus";
    auto* corpus_cmd = app.add_subcommand("gen-corpus", "generate a synthetic leakage corpus");
    corpus_cmd->add_option("--seed", corpus_seed, "corpus seed");
    corpus_cmd->add_option("--n", corpus_n, "instance count")->check(CLI::NonNegativeNumber);
    corpus_cmd->add_option("--fraction", corpus_fraction, "memorized fraction")
        ->check(CLI::Range(0.0, 1.0));
    corpus_cmd->add_option("--out", corpus_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (detect_cmd->parsed()) {
            auto config = build_config(detect_cmd, detect_flags);
            auto s = lb::cmd_detect(config);
            std::printf("leaked: %d/%d (contextless: %d, rephrase_failed: %d, contradiction: %d, "
                        "errors: %d)\n",
                        s.leaked, s.total, s.contextless, s.rephrase_failed, s.contradiction,
                        s.errors);
            std::printf("verdicts: %s\n", s.verdicts_path.c_str());
        } else if (defend_cmd->parsed()) {
            auto config = build_config(defend_cmd, defend_flags);
            auto s = lb::cmd_defend(config, verdicts_path);
            std::printf("revised: %d unchanged: %d (unlocalizable: %d, failed: %d, total: %d)\n",
                        s.revised, s.unchanged, s.unlocalizable, s.failed, s.total);
            std::printf("defended: %s\n", s.defended_path.c_str());
        } else if (score_cmd->parsed()) {
            auto config = build_config(score_cmd, score_flags);
            if (config.dataset_paths.size() != 1)
                throw std::runtime_error("score: provide exactly one --dataset");
            auto s = lb::cmd_score(config, config.dataset_paths.front(),
                                   lb::condition_from_string(score_condition),
                                   config.endpoints.answerer);
            std::printf("em_mean: %.4f f1_mean: %.4f (n=%d, errors=%d)\n", s.em_mean, s.f1_mean,
                        s.total, s.errors);
            std::printf("scores: %s\n", s.scores_path.c_str());
        } else if (report_cmd->parsed()) {
            auto config = build_config(report_cmd, report_flags);
            lb::ReportRequest request;
            request.original_run_path = orig_run;
            request.defended_run_path = def_run;
            request.defended_jsonl_path = defended_file;
            request.format = report_format == "csv" ? lb::ReportFormat::csv
                                                    : lb::ReportFormat::markdown;
            request.out_path = report_out;
            std::string rendered = lb::cmd_report(config, request);
            if (report_out.empty()) std::fputs(rendered.c_str(), stdout);
            else std::printf("report: %s\n", report_out.c_str());
        } else if (corpus_cmd->parsed()) {
            auto s = lb::cmd_gen_corpus(corpus_seed, corpus_n, corpus_fraction, corpus_out);
            std::printf("corpus: %s (%d instances, %d memorized)\n", s.corpus_path.c_str(),
                        s.total, s.memorized);
            std::printf("profiles: %s %s %s\n", s.mixed_profile_path.c_str(),
                        s.faithful_profile_path.c_str(), s.memorizing_profile_path.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
