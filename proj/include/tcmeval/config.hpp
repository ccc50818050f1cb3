#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/dataset_tools.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/human_eval.hpp"
#include "tcmeval/judge_gateway.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

inline constexpr std::string_view kVersion = "0.1.0";

struct EmbeddingConfig {
    std::string endpoint;  // empty: offline hashed n-gram embedding
    std::string model;
    std::string api_key_env;
    bool operator==(const EmbeddingConfig&) const = default;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string token_env;        // comma-separated bearer tokens; empty disables auth
    std::string rater_salt_env;   // salt for rater identity hashes
    std::uint64_t snapshot_every = 500;
    bool operator==(const ServiceConfig&) const = default;
};

struct RunConfig {
    std::string data_dir = "tcmeval-data";
    std::string lexicon_path;
    std::vector<JudgeConfig> judges;
    DimensionWeights weights;
    double kto_true = 0.90;
    double kto_false = 0.60;
    double rejection = 8.5;
    std::size_t max_tokens = 512;
    std::size_t chunk_overlap = 0;
    std::size_t top_k = 3;
    bool strict_validation = false;
    EmbeddingConfig embedding;
    ServiceConfig service;

    KtoThresholds kto() const { return {kto_true, kto_false}; }
    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline bool looks_like_secret(std::string_view key) {
    const auto k = text::fold(key);
    auto ends_with = [&](std::string_view suffix) {
        return k.size() >= suffix.size() && k.compare(k.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with("_env")) return false;
    for (const char* word : {"api_key", "apikey", "secret", "password", "authorization", "bearer"}) {
        if (k.find(word) != std::string::npos) return true;
    }
    return k == "key" || k == "token" || k == "tokens" || ends_with("_key") || ends_with("_token");
}

class config_reader {
public:
    config_reader(const nlohmann::json& object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) throw config_error(where("") + ": expected an object");
        for (const auto& [key, value] : object_.items()) {
            if (looks_like_secret(key)) {
                throw config_error(where(key) + ": secrets are read from environment variables only");
            }
        }
    }

    template <typename T>
    void get(std::string_view key, T& out) {
        seen_.insert(std::string(key));
        if (!object_.contains(key)) return;
        const auto& v = object_.at(std::string(key));
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw config_error(where(key) + ": expected true or false");
                out = v.get<bool>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw config_error(where(key) + ": expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.get<long long>() < 0) throw config_error(where(key) + ": must not be negative");
                }
                out = v.get<T>();
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw config_error(where(key) + ": expected a number");
                out = v.get<T>();
            } else {
                if (!v.is_string()) throw config_error(where(key) + ": expected a string");
                out = v.get<std::string>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw config_error(where(key) + ": " + e.what());
        }
    }

    const nlohmann::json* child(std::string_view key) {
        seen_.insert(std::string(key));
        if (!object_.contains(key)) return nullptr;
        return &object_.at(std::string(key));
    }

    void finish() const {
        for (const auto& [key, value] : object_.items()) {
            if (!seen_.count(key)) throw config_error(where(key) + ": unknown field");
        }
    }

    std::string where(std::string_view key) const {
        if (path_.empty()) return std::string(key);
        if (key.empty()) return path_;
        return path_ + "." + std::string(key);
    }

private:
    const nlohmann::json& object_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw config_error(field + ": " + what);
}

} // namespace detail

inline JudgeConfig judge_config_from_json(const nlohmann::json& j, const std::string& path) {
    detail::config_reader r(j, path);
    JudgeConfig c;
    std::string mode = to_string(c.schema_mode);
    int max_tokens = 0;
    r.get("name", c.name);
    r.get("endpoint", c.endpoint);
    r.get("model", c.model);
    r.get("api_key_env", c.api_key_env);
    r.get("schema_mode", mode);
    r.get("max_retries", c.max_retries);
    r.get("max_in_flight", c.max_in_flight);
    r.get("timeout_seconds", c.timeout_seconds);
    r.get("temperature", c.temperature);
    if (j.contains("max_tokens")) {
        r.get("max_tokens", max_tokens);
        c.max_tokens = max_tokens;
    } else {
        r.child("max_tokens");
    }
    r.get("strict", c.strict);
    r.get("backoff_ms", c.backoff_ms);
    r.get("max_backoff_ms", c.max_backoff_ms);
    r.finish();
    try {
        c.schema_mode = schema_mode_from_string(mode);
    } catch (const config_error&) {
        throw config_error(r.where("schema_mode") + ": expected structured-output or prompt-embedded");
    }
    return c;
}

inline nlohmann::ordered_json to_json(const JudgeConfig& c) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["endpoint"] = c.endpoint;
    j["model"] = c.model;
    j["api_key_env"] = c.api_key_env;
    j["schema_mode"] = to_string(c.schema_mode);
    j["max_retries"] = c.max_retries;
    j["max_in_flight"] = c.max_in_flight;
    j["timeout_seconds"] = c.timeout_seconds;
    j["temperature"] = c.temperature;
    if (c.max_tokens) j["max_tokens"] = *c.max_tokens;
    j["strict"] = c.strict;
    j["backoff_ms"] = c.backoff_ms;
    j["max_backoff_ms"] = c.max_backoff_ms;
    return j;
}

inline void validate_config(const RunConfig& c) {
    using detail::require;
    require(c.kto_true > 0 && c.kto_true <= 1, "thresholds.kto_true", "must be within (0, 1]");
    require(c.kto_false >= 0 && c.kto_false < 1, "thresholds.kto_false", "must be within [0, 1)");
    require(c.kto_true > c.kto_false, "thresholds.kto_true", "must be greater than thresholds.kto_false");
    require(c.rejection >= 0 && c.rejection <= 10, "thresholds.rejection", "must be within [0, 10]");
    require(c.max_tokens >= 1, "chunk.max_tokens", "must be >= 1");
    require(c.chunk_overlap < c.max_tokens, "chunk.overlap", "must be smaller than chunk.max_tokens");
    require(c.top_k >= 1, "top_k", "must be >= 1");
    const DimensionWeights& w = c.weights;
    for (auto d : kDimensions) require(w.of(d) >= 0, "weights." + to_string(d), "must not be negative");
    require(w.sum() == 100, "weights", "must sum to 100, got " + std::to_string(w.sum()));
    require(c.service.port >= 0 && c.service.port <= 65535, "service.port", "must be within 0..65535");
    std::set<std::string> names;
    for (std::size_t i = 0; i < c.judges.size(); ++i) {
        const auto& j = c.judges[i];
        const auto at = "judges[" + std::to_string(i) + "]";
        require(!text::is_blank(j.name), at + ".name", "must not be empty");
        require(names.insert(j.name).second, at + ".name", "duplicate judge name '" + j.name + "'");
        require(text::starts_with(j.endpoint, "http://") || text::starts_with(j.endpoint, "https://"),
                at + ".endpoint", "must be an http or https URL");
        require(j.max_retries >= 0, at + ".max_retries", "must be >= 0");
        require(j.max_in_flight >= 1, at + ".max_in_flight", "must be >= 1");
        require(j.timeout_seconds > 0, at + ".timeout_seconds", "must be > 0");
        require(j.temperature >= 0, at + ".temperature", "must be >= 0");
        require(!j.max_tokens || *j.max_tokens >= 1, at + ".max_tokens", "must be >= 1");
        require(j.backoff_ms >= 0 && j.max_backoff_ms >= 0, at + ".backoff_ms", "must be >= 0");
    }
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::config_reader r(j, "");
    r.get("data_dir", c.data_dir);
    r.get("lexicon", c.lexicon_path);
    if (const auto* judges = r.child("judges")) {
        if (!judges->is_array()) throw config_error("judges: expected an array");
        for (std::size_t i = 0; i < judges->size(); ++i) {
            c.judges.push_back(judge_config_from_json(judges->at(i), "judges[" + std::to_string(i) + "]"));
        }
    }
    if (const auto* w = r.child("weights")) {
        detail::config_reader wr(*w, "weights");
        wr.get("similarity", c.weights.similarity);
        wr.get("philosophy", c.weights.philosophy);
        wr.get("safety", c.weights.safety);
        wr.get("completeness", c.weights.completeness);
        wr.get("fluency", c.weights.fluency);
        wr.finish();
    }
    if (const auto* t = r.child("thresholds")) {
        detail::config_reader tr(*t, "thresholds");
        tr.get("kto_true", c.kto_true);
        tr.get("kto_false", c.kto_false);
        tr.get("rejection", c.rejection);
        tr.finish();
    }
    if (const auto* ch = r.child("chunk")) {
        detail::config_reader cr(*ch, "chunk");
        cr.get("max_tokens", c.max_tokens);
        cr.get("overlap", c.chunk_overlap);
        cr.finish();
    }
    r.get("top_k", c.top_k);
    r.get("strict_validation", c.strict_validation);
    if (const auto* e = r.child("embedding")) {
        detail::config_reader er(*e, "embedding");
        er.get("endpoint", c.embedding.endpoint);
        er.get("model", c.embedding.model);
        er.get("api_key_env", c.embedding.api_key_env);
        er.finish();
    }
    if (const auto* s = r.child("service")) {
        detail::config_reader sr(*s, "service");
        sr.get("host", c.service.host);
        sr.get("port", c.service.port);
        sr.get("token_env", c.service.token_env);
        sr.get("rater_salt_env", c.service.rater_salt_env);
        sr.get("snapshot_every", c.service.snapshot_every);
        sr.finish();
    }
    r.finish();
    validate_config(c);
    return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["data_dir"] = c.data_dir;
    j["lexicon"] = c.lexicon_path;
    auto judges = nlohmann::ordered_json::array();
    for (const auto& judge : c.judges) judges.push_back(to_json(judge));
    j["judges"] = judges;
    nlohmann::ordered_json w;
    for (auto d : kDimensions) w[to_string(d)] = c.weights.of(d);
    j["weights"] = w;
    j["thresholds"] = {{"kto_true", c.kto_true}, {"kto_false", c.kto_false}, {"rejection", c.rejection}};
    j["chunk"] = {{"max_tokens", c.max_tokens}, {"overlap", c.chunk_overlap}};
    j["top_k"] = c.top_k;
    j["strict_validation"] = c.strict_validation;
    j["embedding"] = {{"endpoint", c.embedding.endpoint},
                      {"model", c.embedding.model},
                      {"api_key_env", c.embedding.api_key_env}};
    j["service"] = {{"host", c.service.host},
                    {"port", c.service.port},
                    {"token_env", c.service.token_env},
                    {"rater_salt_env", c.service.rater_salt_env},
                    {"snapshot_every", c.service.snapshot_every}};
    return j;
}

// JSON config text; blank text yields the defaults.
inline RunConfig parse_config(std::string_view content) {
    if (text::is_blank(content)) return RunConfig{};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("config: cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

} // namespace tcmeval
