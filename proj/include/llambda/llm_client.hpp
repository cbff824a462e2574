#pragma once

// Chat-completion client port plus the offline backends (mock, fixture
// record/replay). The HTTP backend lives in llm_http.hpp.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/sha256.hpp"
#include "llambda/stream_io.hpp"

namespace llambda::llm {

struct LlmConfig {
    std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model = "llama-3.1-70b-instruct";
    std::string api_key_env = "LLM_API_KEY";
    double temperature = 0.0;
    int max_tokens = 256;
    int timeout_ms = 30000;
    int max_retries = 3;
    int backoff_base_ms = 500;

    void validate() const {
        if (timeout_ms <= 0) throw ConfigError("llm timeout_ms must be > 0");
        if (!(temperature >= 0.0)) throw ConfigError("llm temperature must be >= 0");
        if (max_retries < 0) throw ConfigError("llm max_retries must be >= 0");
        if (max_tokens <= 0) throw ConfigError("llm max_tokens must be > 0");
        if (backoff_base_ms < 0) throw ConfigError("llm backoff_base_ms must be >= 0");
    }
};

inline LlmConfig llm_config_from_json(const nlohmann::json& j, LlmConfig c = {}) {
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    return c;
}

struct ChatExchange {
    std::string system;
    std::string user;
    std::string response;
    double latency_ms = 0.0;
    int attempts = 0;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual ChatExchange complete(const std::string& system, const std::string& user) const = 0;
};

/// OpenAI-compatible request body. Carries no credentials.
inline nlohmann::json chat_request_body(const LlmConfig& cfg, const std::string& system, const std::string& user) {
    return {
        {"model", cfg.model},
        {"messages", {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}},
        {"temperature", cfg.temperature},
        {"max_tokens", cfg.max_tokens},
    };
}

/// Key under which a prompt pair is mocked, recorded and replayed.
inline std::string prompt_key(std::string_view system, std::string_view user) {
    std::string joined(system);
    joined.push_back('\x1f');
    joined.append(user);
    return sha256_hex(joined);
}

/// Action names parsed back out of runtime-prompt segment lines.
inline std::vector<std::string> runtime_actions(std::string_view user) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < user.size()) {
        std::size_t end = user.find('\n', pos);
        if (end == std::string_view::npos) end = user.size();
        const std::string_view line = user.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty() || line.front() != '[') continue;
        const auto close = line.find("] ");
        const auto conf = line.rfind(" (confidence");
        if (close == std::string_view::npos || conf == std::string_view::npos || conf <= close + 2) continue;
        out.emplace_back(line.substr(close + 2, conf - close - 2));
    }
    return out;
}

/// Deterministic stand-in: a canned caption keyed by the prompt's SHA-256
/// that narrates the runtime prompt's actions in order.
class MockLlmClient final : public LlmClient {
public:
    ChatExchange complete(const std::string& system, const std::string& user) const override {
        const std::string key = prompt_key(system, user);
        const auto actions = runtime_actions(user);
        std::string caption = "The person ";
        if (actions.empty()) {
            caption += "shows no recognizable activity";
        } else {
            caption += "is seen " + actions.front();
            for (std::size_t i = 1; i < actions.size(); ++i) caption += ", then " + actions[i];
        }
        caption += ". (ref " + key.substr(0, 12) + ")";
        return {system, user, caption, 0.0, 1};
    }
};

/// Writes a fixture {request, response} per exchange, named by prompt key.
class RecordingLlmClient final : public LlmClient {
public:
    RecordingLlmClient(std::shared_ptr<const LlmClient> inner, std::filesystem::path dir, LlmConfig cfg = {})
        : inner_(std::move(inner)), dir_(std::move(dir)), cfg_(std::move(cfg)) {}

    ChatExchange complete(const std::string& system, const std::string& user) const override {
        ChatExchange ex = inner_->complete(system, user);
        const nlohmann::json fixture = {
            {"request", chat_request_body(cfg_, system, user)},
            {"response", ex.response},
        };
        detail::write_json(dir_ / (prompt_key(system, user) + ".json"), fixture);
        return ex;
    }

private:
    std::shared_ptr<const LlmClient> inner_;
    std::filesystem::path dir_;
    LlmConfig cfg_;
};

/// Serves recorded fixtures without network access.
class ReplayLlmClient final : public LlmClient {
public:
    explicit ReplayLlmClient(std::filesystem::path dir) : dir_(std::move(dir)) {}

    ChatExchange complete(const std::string& system, const std::string& user) const override {
        const std::string key = prompt_key(system, user);
        const auto path = dir_ / (key + ".json");
        if (!std::filesystem::exists(path)) throw ExternalError("no recorded fixture for prompt " + key, 0);
        const auto fixture = detail::read_json(path);
        if (!fixture.contains("response") || !fixture["response"].is_string()) {
            throw ExternalError("malformed fixture " + path.string(), 1);
        }
        return {system, user, fixture["response"].get<std::string>(), 0.0, 1};
    }

private:
    std::filesystem::path dir_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Delay before retry number `retry` (1-based): base * 2^(retry-1).
inline std::chrono::milliseconds backoff_delay(int base_ms, int retry) {
    return std::chrono::milliseconds(static_cast<std::int64_t>(base_ms) << (retry - 1));
}

} // namespace llambda::llm
