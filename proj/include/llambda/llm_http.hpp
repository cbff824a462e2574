#pragma once

// OpenAI-compatible HTTP backend for the LLM client port.

#include <chrono>
#include <cstdlib>
#include <string>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/llm_client.hpp"

namespace llambda::llm {

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string path;
};

inline Endpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("llm endpoint must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpLlmClient final : public LlmClient {
public:
    explicit HttpLlmClient(LlmConfig cfg, Sleeper sleeper = real_sleeper())
        : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)), endpoint_(parse_endpoint(cfg_.endpoint)) {
        cfg_.validate();
    }

    ChatExchange complete(const std::string& system, const std::string& user) const override {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw ExternalError("missing credentials: environment variable " + cfg_.api_key_env + " is not set", 0);
        }
        const std::string body = chat_request_body(cfg_, system, user).dump();
        const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

        httplib::Client client(endpoint_.origin);
        const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        const auto t0 = std::chrono::steady_clock::now();
        std::string last_error;
        const int max_attempts = cfg_.max_retries + 1;
        for (int attempt = 1; attempt <= max_attempts; ++attempt) {
            if (attempt > 1) sleeper_(backoff_delay(cfg_.backoff_base_ms, attempt - 1));
            auto res = client.Post(endpoint_.path, headers, body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw ExternalError("LLM endpoint returned HTTP " + std::to_string(res->status), attempt);
            }
            ChatExchange ex{system, user, parse_completion(res->body, attempt), 0.0, attempt};
            ex.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            return ex;
        }
        throw ExternalError("LLM request failed after " + std::to_string(max_attempts) +
                                " attempts (retries exhausted): " + last_error,
                            max_attempts);
    }

private:
    static std::string parse_completion(const std::string& body, int attempt) {
        try {
            const auto j = nlohmann::json::parse(body);
            const auto& content = j.at("choices").at(0).at("message").at("content");
            std::string text = content.get<std::string>();
            if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
                throw ExternalError("LLM returned an empty completion", attempt);
            }
            return text;
        } catch (const nlohmann::json::exception& e) {
            throw ExternalError(std::string("malformed completion response: ") + e.what(), attempt);
        }
    }

    LlmConfig cfg_;
    Sleeper sleeper_;
    Endpoint endpoint_;
};

} // namespace llambda::llm
