#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "tcmeval/dataset_tools.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/judge_gateway.hpp"

namespace tcmeval {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // starts with '/'
};

inline SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw config_error("endpoint: '" + url + "' has no scheme");
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw config_error("endpoint: unsupported scheme '" + scheme + "'");
    }
    const auto path_at = url.find('/', scheme_end + 3);
    if (path_at == std::string::npos) return {url, "/"};
    return {url.substr(0, path_at), url.substr(path_at)};
}

// Secret from the environment variable named in the config; empty when unset.
inline std::string read_secret(const std::string& env_name) {
    if (env_name.empty()) return {};
    const char* value = std::getenv(env_name.c_str());
    return value ? std::string(value) : std::string();
}

// OpenAI-compatible chat-completions transport. A fresh client per request
// keeps it safe to share across worker threads.
class HttpChatTransport : public ChatTransport {
public:
    HttpReply post(const JudgeConfig& judge, const std::string& body) override {
        const auto url = split_url(judge.endpoint);
        httplib::Client client(url.origin);
        const auto timeout_us = static_cast<long long>(judge.timeout_seconds * 1e6);
        client.set_connection_timeout(std::chrono::microseconds(timeout_us));
        client.set_read_timeout(std::chrono::microseconds(timeout_us));
        client.set_write_timeout(std::chrono::microseconds(timeout_us));
        httplib::Headers headers;
        if (const auto key = read_secret(judge.api_key_env); !key.empty()) {
            headers.emplace("Authorization", "Bearer " + key);
        }
        auto res = client.Post(url.path, headers, body, "application/json");
        HttpReply reply;
        if (!res) {
            reply.error = httplib::to_string(res.error());
            return reply;
        }
        reply.status = res->status;
        reply.body = res->body;
        if (res->has_header("Retry-After")) {
            char* end = nullptr;
            const auto value = res->get_header_value("Retry-After");
            const double seconds = std::strtod(value.c_str(), &end);
            if (end != value.c_str() && seconds >= 0) reply.retry_after_seconds = seconds;
        }
        return reply;
    }
};

// OpenAI-compatible embeddings endpoint: {model, input: [...]} in,
// data[i].embedding out.
class HttpEmbedding : public EmbeddingProvider {
public:
    HttpEmbedding(std::string endpoint, std::string model, std::string api_key_env, double timeout_seconds = 60)
        : endpoint_(std::move(endpoint)), model_(std::move(model)), api_key_env_(std::move(api_key_env)),
          timeout_seconds_(timeout_seconds) {
        split_url(endpoint_);
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
        const auto url = split_url(endpoint_);
        httplib::Client client(url.origin);
        const auto timeout_us = static_cast<long long>(timeout_seconds_ * 1e6);
        client.set_connection_timeout(std::chrono::microseconds(timeout_us));
        client.set_read_timeout(std::chrono::microseconds(timeout_us));
        httplib::Headers headers;
        if (const auto key = read_secret(api_key_env_); !key.empty()) {
            headers.emplace("Authorization", "Bearer " + key);
        }
        const nlohmann::json body = {{"model", model_}, {"input", texts}};
        auto res = client.Post(url.path, headers, body.dump(), "application/json");
        if (!res) throw io_error("embedding request failed: " + httplib::to_string(res.error()));
        if (res->status != 200) throw io_error("embedding endpoint returned HTTP " + std::to_string(res->status));
        std::vector<std::vector<double>> out(texts.size());
        try {
            const auto j = nlohmann::json::parse(res->body);
            for (const auto& item : j.at("data")) {
                const auto index = item.value("index", std::size_t{0});
                if (index >= out.size()) throw parse_error("embedding index out of range");
                out[index] = item.at("embedding").get<std::vector<double>>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(std::string("malformed embedding reply: ") + e.what());
        }
        for (const auto& v : out) {
            if (v.empty()) throw parse_error("embedding reply is missing vectors");
        }
        return out;
    }

private:
    std::string endpoint_;
    std::string model_;
    std::string api_key_env_;
    double timeout_seconds_;
};

} // namespace tcmeval
