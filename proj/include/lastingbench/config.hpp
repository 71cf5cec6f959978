#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lastingbench/detector.hpp"
#include "lastingbench/gateway.hpp"
#include "lastingbench/localizer.hpp"
#include "lastingbench/rewriter.hpp"
#include "lastingbench/sha256.hpp"

namespace lastingbench {

// Endpoint roles: the answerer is the model under test, the generator writes
// perturbations and rewrites, the reasoner drives localization, the scorer
// provides logprobs for CPPL (defaults to the answerer) and the embedder
// backs retrieval.
struct EndpointRoles {
    ModelEndpoint answerer;
    ModelEndpoint generator;
    ModelEndpoint reasoner;
    ModelEndpoint scorer;
    ModelEndpoint embedder;
};

struct RunConfig {
    std::vector<std::string> dataset_paths;
    std::string out_dir = "out";
    CacheMode cache_mode = CacheMode::live;
    std::string cache_path;
    EndpointRoles endpoints;
    size_t k_chunks = 5;
    size_t k_step = 3;
    int k_variants = 4;
    int max_iters = 3;
    CpplScope cppl_scope = CpplScope::merged;
    MatchRule match_rule = MatchRule::substring;
    int parallelism = 1;
    int n_rephrases = 1;
    uint64_t seed = 0;
    size_t max_chars = 1200;

    LocalizeConfig localize_config() const {
        return LocalizeConfig{k_chunks, k_step, max_iters};
    }
    DefendConfig defend_config() const { return DefendConfig{k_variants, cppl_scope}; }
};

namespace detail {

inline ModelEndpoint endpoint_from_json(const nlohmann::json& j) {
    ModelEndpoint e;
    e.base_url = j.value("base_url", "");
    e.model_name = j.value("model_name", "");
    e.temperature = j.value("temperature", 0.0);
    e.max_tokens = j.value("max_tokens", 512);
    e.timeout_s = j.value("timeout_s", 60);
    e.max_retries = j.value("max_retries", 2);
    e.rate_limit_per_min = j.value("rate_limit_per_min", 0);
    std::string env = j.value("api_key_env", "LASTINGBENCH_API_KEY");
    if (const char* key = std::getenv(env.c_str())) e.api_key = key;
    if (e.temperature < 0.0) throw std::runtime_error("endpoint: temperature must be >= 0");
    if (e.max_retries < 0) throw std::runtime_error("endpoint: max_retries must be >= 0");
    return e;
}

inline nlohmann::json endpoint_to_json(const ModelEndpoint& e) {
    // The resolved API key never serializes.
    return nlohmann::json{{"base_url", e.base_url},
                          {"model_name", e.model_name},
                          {"temperature", e.temperature},
                          {"max_tokens", e.max_tokens},
                          {"timeout_s", e.timeout_s},
                          {"max_retries", e.max_retries},
                          {"rate_limit_per_min", e.rate_limit_per_min}};
}

} // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("dataset")) {
        if (j["dataset"].is_string())
            c.dataset_paths.push_back(j["dataset"].get<std::string>());
        else
            c.dataset_paths = j["dataset"].get<std::vector<std::string>>();
    }
    c.out_dir = j.value("out", c.out_dir);
    if (j.contains("cache")) {
        c.cache_mode = cache_mode_from_string(j["cache"].value("mode", "live"));
        c.cache_path = j["cache"].value("path", "");
    }
    if (j.contains("endpoints")) {
        const auto& eps = j["endpoints"];
        if (eps.contains("answerer"))
            c.endpoints.answerer = detail::endpoint_from_json(eps["answerer"]);
        auto role_or_answerer = [&](const char* role) {
            return eps.contains(role) ? detail::endpoint_from_json(eps[role])
                                      : c.endpoints.answerer;
        };
        c.endpoints.generator = role_or_answerer("generator");
        c.endpoints.reasoner = role_or_answerer("reasoner");
        c.endpoints.scorer = role_or_answerer("scorer");
        c.endpoints.embedder = role_or_answerer("embedder");
    }
    c.k_chunks = j.value("k_chunks", c.k_chunks);
    c.k_step = j.value("k_step", c.k_step);
    c.k_variants = j.value("k_variants", c.k_variants);
    c.max_iters = j.value("max_iters", c.max_iters);
    if (j.contains("cppl_scope")) c.cppl_scope = cppl_scope_from_string(j["cppl_scope"]);
    if (j.contains("match_rule")) c.match_rule = match_rule_from_string(j["match_rule"]);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.n_rephrases = j.value("n_rephrases", c.n_rephrases);
    c.seed = j.value("seed", c.seed);
    c.max_chars = j.value("max_chars", c.max_chars);
    if (c.parallelism < 1) throw std::runtime_error("config: parallelism must be >= 1");
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    return config_from_json(nlohmann::json::parse(in));
}

// Canonical form for the manifest hash. Output locations are excluded so the
// hash identifies the experiment, not where its files land.
inline nlohmann::json config_to_json(const RunConfig& c, bool for_hash = false) {
    nlohmann::json j;
    j["dataset"] = c.dataset_paths;
    if (!for_hash) {
        j["out"] = c.out_dir;
        j["cache"] = {{"mode", to_string(c.cache_mode)}, {"path", c.cache_path}};
    } else {
        j["cache"] = {{"mode", to_string(c.cache_mode)}};
    }
    j["endpoints"] = {{"answerer", detail::endpoint_to_json(c.endpoints.answerer)},
                      {"generator", detail::endpoint_to_json(c.endpoints.generator)},
                      {"reasoner", detail::endpoint_to_json(c.endpoints.reasoner)},
                      {"scorer", detail::endpoint_to_json(c.endpoints.scorer)},
                      {"embedder", detail::endpoint_to_json(c.endpoints.embedder)}};
    j["k_chunks"] = c.k_chunks;
    j["k_step"] = c.k_step;
    j["k_variants"] = c.k_variants;
    j["max_iters"] = c.max_iters;
    j["cppl_scope"] = to_string(c.cppl_scope);
    j["match_rule"] = to_string(c.match_rule);
    j["parallelism"] = c.parallelism;
    j["n_rephrases"] = c.n_rephrases;
    j["seed"] = c.seed;
    j["max_chars"] = c.max_chars;
    return j;
}

inline std::string config_hash(const RunConfig& c) {
    return detail::sha256_hex(config_to_json(c, /*for_hash=*/true).dump());
}

} // namespace lastingbench
