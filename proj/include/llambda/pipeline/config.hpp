#pragma once

// End-to-end pipeline configuration (JSON). Every block is optional; absent
// keys keep their defaults. Relative paths resolve against the directory of
// the config file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/action_capture.hpp"
#include "llambda/captioner.hpp"
#include "llambda/error.hpp"
#include "llambda/fedsim.hpp"
#include "llambda/frame_filter.hpp"
#include "llambda/labeler/model_io.hpp"
#include "llambda/llm_client.hpp"
#include "llambda/stream_io.hpp"

namespace llambda {

inline const std::vector<std::string>& default_taxonomy() {
    static const std::vector<std::string> names = {
        "Sitting",
        "Other actions",
        "Standing",
        "Walking",
        "Eating/Medication",
        "Grooming/Hair styling",
        "Exercising",
        "Handling objects",
        "Interacting/Socializing",
        "Sleeping/Lying down",
        "Transitioning (Sit/Stand)",
        "Using mobile phone",
        "Drinking",
        "Cleaning",
        "Dressing/Undressing",
        "Rubbing/Washing hands",
    };
    return names;
}

inline caption::ConsistencyRules default_rules() {
    caption::ConsistencyRules r;
    r.add_incompatible("Sleeping/Lying down", "Walking");
    r.add_incompatible("Sleeping/Lying down", "Exercising");
    r.add_incompatible("Sitting", "Walking");
    r.add_incompatible("Sitting", "Exercising");
    return r;
}

inline void validate_taxonomy(std::span<const std::string> names) {
    if (names.empty()) throw ConfigError("taxonomy must not be empty");
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw ConfigError("taxonomy names must not be empty");
        if (!seen.insert(n).second) throw ConfigError("duplicate taxonomy name '" + n + "'");
    }
}

struct CaptureConfig {
    CoherenceConfig coherence;
    double threshold = 0.1;
    std::size_t background_frames = 15;
    CropSize crop;

    void validate() const {
        if (!(threshold > 0.0)) throw ConfigError("capture threshold must be > 0");
        if (background_frames < 1) throw ConfigError("capture background_frames must be >= 1");
        if (crop.width < 1 || crop.height < 1) throw ConfigError("capture crop size must be positive");
        if (coherence.epsilon && !(*coherence.epsilon > 0.0)) throw ConfigError("coherence epsilon must be > 0");
    }
};

enum class LlmMode { mock, replay, record, live };

inline LlmMode parse_llm_mode(const std::string& s) {
    if (s == "mock") return LlmMode::mock;
    if (s == "replay") return LlmMode::replay;
    if (s == "record") return LlmMode::record;
    if (s == "live") return LlmMode::live;
    throw ConfigError("unknown llm mode '" + s + "' (mock, replay, record, live)");
}

struct LlmSettings {
    LlmMode mode = LlmMode::mock;
    /// Backend whose answers are recorded in record mode.
    LlmMode record_backend = LlmMode::mock;
    std::filesystem::path fixtures = "fixtures";
    llm::LlmConfig client;
};

struct FederatedSettings {
    bool enabled = false;
    std::size_t clients = 5;
    double alpha = 0.5;
    fed::FedConfig rounds;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::optional<double> fps;
    std::optional<std::vector<std::string>> taxonomy;
    std::size_t topk = 3;
    double labeled_fraction = 0.25;
    FilterConfig filter;
    CaptureConfig capture;
    labeler::ContrastiveConfig labeler;
    FederatedSettings federated;
    caption::ConsistencyRules rules = default_rules();
    caption::PromptTemplates prompts;
    LlmSettings llm;

    void validate() const {
        filter.validate();
        capture.validate();
        labeler.validate();
        rules.validate();
        llm.client.validate();
        if (topk < 1) throw ConfigError("topk must be >= 1");
        if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
            throw ConfigError("labeled_fraction must lie in (0,1]");
        }
        if (fps && !(*fps > 0.0)) throw ConfigError("fps must be > 0");
        if (taxonomy) validate_taxonomy(*taxonomy);
        if (federated.enabled) {
            if (federated.clients < 1) throw ConfigError("federated clients must be >= 1");
            if (!(federated.alpha > 0.0)) throw ConfigError("federated alpha must be > 0");
            if (federated.rounds.local_epochs < 1) throw ConfigError("federated local_epochs must be >= 1");
        }
    }
};

inline FilterConfig filter_from_json(const nlohmann::json& j, FilterConfig c = {}) {
    c.window_size = j.value("window_size", c.window_size);
    c.sigma = j.value("sigma", c.sigma);
    c.min_significant = j.value("min_significant", c.min_significant);
    c.activity_floor = j.value("activity_floor", c.activity_floor);
    c.invert_rule = j.value("invert_rule", c.invert_rule);
    return c;
}

inline nlohmann::json to_json(const FilterConfig& c) {
    return {{"window_size", c.window_size},
            {"sigma", c.sigma},
            {"min_significant", c.min_significant},
            {"activity_floor", c.activity_floor},
            {"invert_rule", c.invert_rule}};
}

inline CaptureConfig capture_from_json(const nlohmann::json& j, CaptureConfig c = {}) {
    if (j.contains("epsilon") && !j["epsilon"].is_null()) c.coherence.epsilon = j["epsilon"].get<double>();
    c.coherence.min_confidence = j.value("min_confidence", c.coherence.min_confidence);
    c.coherence.min_track_length = j.value("min_track_length", c.coherence.min_track_length);
    c.threshold = j.value("threshold", c.threshold);
    c.background_frames = j.value("background_frames", c.background_frames);
    c.crop.height = j.value("crop_height", c.crop.height);
    c.crop.width = j.value("crop_width", c.crop.width);
    return c;
}

namespace detail {

inline std::string read_text(const std::filesystem::path& path) { return read_file(path); }

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace detail

/// `base` is the directory relative paths are resolved against.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
    PipelineConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        if (j.contains("fps") && !j["fps"].is_null()) c.fps = j["fps"].get<double>();
        if (j.contains("taxonomy") && !j["taxonomy"].is_null()) {
            c.taxonomy = j["taxonomy"].get<std::vector<std::string>>();
        }
        c.topk = j.value("topk", c.topk);
        c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
        if (j.contains("filter")) c.filter = filter_from_json(j["filter"]);
        if (j.contains("capture")) c.capture = capture_from_json(j["capture"]);
        if (j.contains("labeler")) c.labeler = labeler::contrastive_from_json(j["labeler"]);
        if (j.contains("federated")) {
            const auto& f = j["federated"];
            c.federated.enabled = f.value("enabled", true);
            c.federated.clients = f.value("clients", c.federated.clients);
            c.federated.alpha = f.value("alpha", c.federated.alpha);
            c.federated.rounds.rounds = f.value("rounds", c.federated.rounds.rounds);
            c.federated.rounds.local_epochs = f.value("local_epochs", c.federated.rounds.local_epochs);
            c.federated.rounds.bandwidth_mbps = f.value("bandwidth_mbps", c.federated.rounds.bandwidth_mbps);
            c.federated.rounds.parallel_clients = f.value("parallel_clients", c.federated.rounds.parallel_clients);
        }
        if (j.contains("rules")) {
            nlohmann::json r = j["rules"];
            if (!r.contains("incompatible")) r["incompatible"] = caption::to_json(default_rules())["incompatible"];
            c.rules = caption::rules_from_json(r);
        }
        if (j.contains("prompts")) {
            const auto& p = j["prompts"];
            if (p.contains("system_file")) c.prompts.system = detail::read_text(detail::resolve(base, p["system_file"]));
            if (p.contains("runtime_file")) {
                c.prompts.runtime = detail::read_text(detail::resolve(base, p["runtime_file"]));
            }
            c.prompts.system = p.value("system", c.prompts.system);
            c.prompts.runtime = p.value("runtime", c.prompts.runtime);
        }
        if (j.contains("llm")) {
            const auto& l = j["llm"];
            c.llm.mode = parse_llm_mode(l.value("mode", std::string("mock")));
            c.llm.record_backend = parse_llm_mode(l.value("record_backend", std::string("mock")));
            if (c.llm.record_backend != LlmMode::mock && c.llm.record_backend != LlmMode::live) {
                throw ConfigError("llm record_backend must be mock or live");
            }
            c.llm.fixtures = detail::resolve(base, l.value("fixtures", std::string("fixtures")));
            c.llm.client = llm::llm_config_from_json(l);
        } else {
            c.llm.fixtures = base / c.llm.fixtures;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return pipeline_config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

} // namespace llambda
