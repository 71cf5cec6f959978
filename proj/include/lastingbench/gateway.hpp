#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lastingbench/errors.hpp"
#include "lastingbench/sha256.hpp"
#include "lastingbench/simlm.hpp"
#include "lastingbench/types.hpp"

namespace lastingbench {

enum class CacheMode { record, replay, live };

inline std::string to_string(CacheMode mode) {
    switch (mode) {
        case CacheMode::record: return "record";
        case CacheMode::replay: return "replay";
        case CacheMode::live: return "live";
    }
    return "live";
}

inline CacheMode cache_mode_from_string(const std::string& s) {
    if (s == "record") return CacheMode::record;
    if (s == "replay") return CacheMode::replay;
    if (s == "live") return CacheMode::live;
    throw std::runtime_error("unknown cache mode: " + s);
}

// One model endpoint. base_url is either an HTTP origin with optional path
// prefix ("https://host:port/v1") or an in-process profile ("sim://file.json").
struct ModelEndpoint {
    std::string base_url;
    std::string model_name;
    std::string api_key;
    double temperature = 0.0;
    int max_tokens = 512;
    int timeout_s = 60;
    int max_retries = 2;
    int rate_limit_per_min = 0; // 0 = unlimited

    bool is_sim() const { return base_url.rfind("sim://", 0) == 0; }
    std::string sim_path() const { return base_url.substr(6); }
    std::string cache_id() const { return base_url + "|" + model_name; }
};

struct ChatParams {
    std::optional<double> temperature;
    std::optional<int> max_tokens;
};

// Uniform access to chat completion, forced-continuation logprobs and text
// embedding, with a deterministic record/replay cache keyed by the SHA-256 of
// the canonicalized request. The cache file is append-only JSONL.
class Gateway {
public:
    Gateway() = default;

    Gateway(CacheMode mode, std::string cache_path)
        : mode_(mode), cache_path_(std::move(cache_path)) {
        if (mode_ == CacheMode::live) return;
        if (cache_path_.empty())
            throw std::runtime_error("gateway: record/replay mode needs a cache path");
        if (std::filesystem::exists(cache_path_)) {
            load_cache();
        } else if (mode_ == CacheMode::replay) {
            throw std::runtime_error("gateway: replay mode requires existing cache at " +
                                     cache_path_);
        }
    }

    CacheMode mode() const { return mode_; }

    std::string complete_chat(const ModelEndpoint& endpoint,
                              const std::vector<ChatMessage>& messages,
                              const ChatParams& params = {}) {
        double temperature = params.temperature.value_or(endpoint.temperature);
        int max_tokens = params.max_tokens.value_or(endpoint.max_tokens);

        nlohmann::json request;
        request["model"] = endpoint.model_name;
        request["temperature"] = temperature;
        request["max_tokens"] = max_tokens;
        auto msgs = nlohmann::json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        request["messages"] = msgs;

        nlohmann::json response = cached_dispatch("chat", endpoint, request, [&] {
            nlohmann::json r;
            if (endpoint.is_sim()) {
                r["text"] = sim_chat(sim_profile(endpoint.sim_path()), messages);
            } else {
                r["text"] = http_chat(endpoint, request);
            }
            return r;
        });
        return response.at("text").get<std::string>();
    }

    LogprobScore score_logprobs(const ModelEndpoint& endpoint, const std::string& prefix,
                                const std::string& continuation) {
        if (continuation.empty())
            throw std::invalid_argument("score_logprobs: empty continuation");

        nlohmann::json request;
        request["model"] = endpoint.model_name;
        request["prefix"] = prefix;
        request["continuation"] = continuation;

        nlohmann::json response = cached_dispatch("logprobs", endpoint, request, [&] {
            LogprobScore s = endpoint.is_sim()
                                 ? sim_logprobs(sim_profile(endpoint.sim_path()), prefix,
                                                continuation)
                                 : http_logprobs(endpoint, prefix, continuation);
            nlohmann::json r;
            auto toks = nlohmann::json::array();
            for (const auto& t : s.tokens) toks.push_back({{"t", t.token}, {"lp", t.logprob}});
            r["tokens"] = toks;
            return r;
        });

        std::vector<TokenLogprob> toks;
        for (const auto& t : response.at("tokens"))
            toks.push_back(TokenLogprob{t.at("t").get<std::string>(), t.at("lp").get<double>()});
        return LogprobScore::from_tokens(std::move(toks));
    }

    std::vector<std::vector<float>> embed(const ModelEndpoint& endpoint,
                                          const std::vector<std::string>& texts) {
        if (texts.empty()) throw std::invalid_argument("embed: empty text list");

        nlohmann::json request;
        request["model"] = endpoint.model_name;
        request["texts"] = texts;

        nlohmann::json response = cached_dispatch("embed", endpoint, request, [&] {
            auto vectors = endpoint.is_sim()
                               ? sim_embed(sim_profile(endpoint.sim_path()), texts)
                               : http_embed(endpoint, texts);
            nlohmann::json r;
            r["vectors"] = vectors;
            return r;
        });
        return response.at("vectors").get<std::vector<std::vector<float>>>();
    }

    // Cache key of a canonical request; exposed so tests can assert key behavior.
    static std::string cache_key(const std::string& capability, const ModelEndpoint& endpoint,
                                 const nlohmann::json& request) {
        return detail::sha256_hex(capability + "\n" + endpoint.cache_id() + "\n" + request.dump());
    }

private:
    template <typename Dispatch>
    nlohmann::json cached_dispatch(const std::string& capability, const ModelEndpoint& endpoint,
                                   const nlohmann::json& request, Dispatch dispatch) {
        if (mode_ == CacheMode::live) return dispatch();

        const std::string key = cache_key(capability, endpoint, request);
        {
            std::lock_guard<std::mutex> lock(cache_mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return nlohmann::json::parse(it->second);
        }
        if (mode_ == CacheMode::replay)
            throw CacheMissError("replay cache miss for " + capability + " request, key " + key);

        nlohmann::json response = dispatch();
        std::lock_guard<std::mutex> lock(cache_mu_);
        auto [it, inserted] = cache_.emplace(key, response.dump());
        if (inserted) append_cache_entry(key, capability, endpoint, request, response);
        return response;
    }

    void load_cache() {
        std::ifstream in(cache_path_);
        if (!in) throw std::runtime_error("gateway: cannot open cache " + cache_path_);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error("gateway: malformed cache line " +
                                         std::to_string(line_no) + ": " + e.what());
            }
            cache_[j.at("key").get<std::string>()] = j.at("response").dump();
        }
    }

    void append_cache_entry(const std::string& key, const std::string& capability,
                            const ModelEndpoint& endpoint, const nlohmann::json& request,
                            const nlohmann::json& response) {
        // API keys never enter the request record.
        nlohmann::json entry;
        entry["key"] = key;
        entry["capability"] = capability;
        entry["endpoint"] = endpoint.cache_id();
        entry["request"] = request;
        entry["response"] = response;
        entry["created_at"] = static_cast<int64_t>(
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count());
        std::ofstream out(cache_path_, std::ios::app);
        if (!out) throw std::runtime_error("gateway: cannot append to cache " + cache_path_);
        out << entry.dump() << "\n";
    }

    const SimProfile& sim_profile(const std::string& path) {
        std::lock_guard<std::mutex> lock(sim_mu_);
        auto it = sim_profiles_.find(path);
        if (it == sim_profiles_.end())
            it = sim_profiles_.emplace(path, load_profile(path)).first;
        return it->second;
    }

    // ---- HTTP dispatch ----------------------------------------------------

    struct UrlParts {
        std::string origin;      // scheme://host[:port]
        std::string path_prefix; // possibly empty, no trailing slash
    };

    static UrlParts split_url(const std::string& base_url) {
        size_t scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos)
            throw TransportError("malformed base_url: " + base_url);
        size_t path_start = base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) return {base_url, ""};
        std::string prefix = base_url.substr(path_start);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        return {base_url.substr(0, path_start), prefix};
    }

    void rate_limit_wait(const ModelEndpoint& endpoint) {
        if (endpoint.rate_limit_per_min <= 0) return;
        auto interval = std::chrono::duration<double>(60.0 / endpoint.rate_limit_per_min);
        std::chrono::steady_clock::time_point wake;
        {
            std::lock_guard<std::mutex> lock(rate_mu_);
            auto now = std::chrono::steady_clock::now();
            auto& next = next_dispatch_[endpoint.cache_id()];
            if (next < now) next = now;
            wake = next;
            next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval);
        }
        std::this_thread::sleep_until(wake);
    }

    httplib::Result http_post(const ModelEndpoint& endpoint, const std::string& path,
                              const nlohmann::json& body) {
        auto parts = split_url(endpoint.base_url);
        httplib::Client client(parts.origin);
        client.set_connection_timeout(endpoint.timeout_s, 0);
        client.set_read_timeout(endpoint.timeout_s, 0);
        client.set_write_timeout(endpoint.timeout_s, 0);
        httplib::Headers headers;
        if (!endpoint.api_key.empty())
            headers.emplace("Authorization", "Bearer " + endpoint.api_key);
        return client.Post(parts.path_prefix + path, headers, body.dump(), "application/json");
    }

    // Retries transport failures and 429/5xx with linear backoff; other HTTP
    // errors fail immediately.
    nlohmann::json http_json_call(const ModelEndpoint& endpoint, const std::string& path,
                                  const nlohmann::json& body, const std::string& capability) {
        std::string last_error;
        for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
            rate_limit_wait(endpoint);
            auto res = http_post(endpoint, path, body);
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::exception& e) {
                    throw TransportError(capability + ": invalid JSON response: " +
                                         std::string(e.what()));
                }
            }
            if (res->status == 404 || res->status == 405)
                throw CapabilityError(endpoint.base_url + " does not support " + capability +
                                      " (" + path + " returned " + std::to_string(res->status) +
                                      ")");
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            throw TransportError(capability + ": HTTP " + std::to_string(res->status) + ": " +
                                 res->body);
        }
        throw TransportError(capability + " failed after " +
                             std::to_string(endpoint.max_retries + 1) + " attempts: " +
                             last_error);
    }

    std::string http_chat(const ModelEndpoint& endpoint, const nlohmann::json& request) {
        nlohmann::json body;
        body["model"] = request.at("model");
        body["messages"] = request.at("messages");
        body["temperature"] = request.at("temperature");
        body["max_tokens"] = request.at("max_tokens");
        nlohmann::json j = http_json_call(endpoint, "/chat/completions", body, "chat");
        try {
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw TransportError("chat: unexpected response shape: " + std::string(e.what()));
        }
    }

    // Completion-style call with echoed prompt and per-token logprobs; the
    // continuation's tokens are selected by text offset.
    LogprobScore http_logprobs(const ModelEndpoint& endpoint, const std::string& prefix,
                               const std::string& continuation) {
        nlohmann::json body;
        body["model"] = endpoint.model_name;
        body["prompt"] = prefix + continuation;
        body["max_tokens"] = 0;
        body["echo"] = true;
        body["logprobs"] = 0;
        body["temperature"] = 0.0;
        nlohmann::json j = http_json_call(endpoint, "/completions", body, "logprobs");
        try {
            const auto& lp = j.at("choices").at(0).at("logprobs");
            const auto& tokens = lp.at("tokens");
            const auto& token_logprobs = lp.at("token_logprobs");
            const auto& offsets = lp.at("text_offset");
            std::vector<TokenLogprob> toks;
            for (size_t i = 0; i < tokens.size(); ++i) {
                if (offsets.at(i).get<size_t>() < prefix.size()) continue;
                if (token_logprobs.at(i).is_null()) continue; // first-position logprob unavailable
                toks.push_back(TokenLogprob{tokens.at(i).get<std::string>(),
                                            token_logprobs.at(i).get<double>()});
            }
            if (toks.empty())
                throw TransportError("logprobs: server returned no continuation tokens");
            return LogprobScore::from_tokens(std::move(toks));
        } catch (const nlohmann::json::exception& e) {
            throw TransportError("logprobs: unexpected response shape: " + std::string(e.what()));
        }
    }

    std::vector<std::vector<float>> http_embed(const ModelEndpoint& endpoint,
                                               const std::vector<std::string>& texts) {
        nlohmann::json body;
        body["model"] = endpoint.model_name;
        body["input"] = texts;
        nlohmann::json j = http_json_call(endpoint, "/embeddings", body, "embed");
        try {
            std::vector<std::vector<float>> out(texts.size());
            for (const auto& item : j.at("data")) {
                size_t index = item.at("index").get<size_t>();
                auto vec = item.at("embedding").get<std::vector<float>>();
                double norm_sq = 0.0;
                for (float v : vec) norm_sq += static_cast<double>(v) * v;
                if (norm_sq > 0.0) {
                    double norm = std::sqrt(norm_sq);
                    for (float& v : vec) v = static_cast<float>(v / norm);
                } else if (!vec.empty()) {
                    vec[0] = 1.0f;
                }
                out.at(index) = std::move(vec);
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw TransportError("embed: unexpected response shape: " + std::string(e.what()));
        }
    }

    CacheMode mode_ = CacheMode::live;
    std::string cache_path_;
    std::unordered_map<std::string, std::string> cache_;
    std::mutex cache_mu_;
    std::map<std::string, SimProfile> sim_profiles_;
    std::mutex sim_mu_;
    std::map<std::string, std::chrono::steady_clock::time_point> next_dispatch_;
    std::mutex rate_mu_;
};

} // namespace lastingbench
