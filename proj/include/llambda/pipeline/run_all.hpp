#pragma once

// filter -> capture -> labeler (centralized or federated) -> pseudo-labels
// -> captions, over a dataset directory with labels.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/action_capture.hpp"
#include "llambda/captioner.hpp"
#include "llambda/error.hpp"
#include "llambda/fedsim.hpp"
#include "llambda/frame_filter.hpp"
#include "llambda/labeler/model_io.hpp"
#include "llambda/labeler/predict.hpp"
#include "llambda/labeler/train.hpp"
#include "llambda/llm_client.hpp"
#include "llambda/llm_http.hpp"
#include "llambda/pipeline/capture.hpp"
#include "llambda/pipeline/config.hpp"
#include "llambda/pipeline/lexical.hpp"
#include "llambda/pipeline/synthetic.hpp"
#include "llambda/stream_io.hpp"

namespace llambda::pipeline {

namespace fs = std::filesystem;

// --- pseudo-label records --------------------------------------------------------

inline nlohmann::json label_record_json(const std::string& source_id, const labeler::PseudoLabelRecord& rec,
                                        std::uint64_t timestamp_ms, std::span<const std::string> taxonomy) {
    nlohmann::json topk = nlohmann::json::array();
    for (const auto& cp : rec.topk) {
        topk.push_back({{"action", cp.cls < taxonomy.size() ? taxonomy[cp.cls] : std::to_string(cp.cls)},
                        {"class", cp.cls},
                        {"p", cp.p}});
    }
    return {{"source_id", source_id},
            {"frame_index", rec.frame_index},
            {"timestamp_ms", timestamp_ms},
            {"probs", rec.probs},
            {"topk", topk}};
}

/// labels.jsonl grouped by source_id, in order of first appearance.
struct LabelGroups {
    std::vector<std::string> order;
    std::map<std::string, std::vector<labeler::PseudoLabelRecord>> records;
};

inline LabelGroups parse_labels_jsonl(std::string_view text, std::size_t k) {
    LabelGroups g;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const std::string id = j.at("source_id").get<std::string>();
            labeler::PseudoLabelRecord rec;
            rec.frame_index = j.at("frame_index").get<std::size_t>();
            rec.probs = j.at("probs").get<std::vector<double>>();
            rec.topk = labeler::top_k(rec.probs, k);
            if (!g.records.count(id)) g.order.push_back(id);
            g.records[id].push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("labels.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return g;
}

// --- captions ----------------------------------------------------------------------

inline std::shared_ptr<const llm::LlmClient> make_llm_client(const LlmSettings& s) {
    auto backend = [&](LlmMode m) -> std::shared_ptr<const llm::LlmClient> {
        if (m == LlmMode::live) return std::make_shared<llm::HttpLlmClient>(s.client);
        return std::make_shared<llm::MockLlmClient>();
    };
    switch (s.mode) {
    case LlmMode::mock: return backend(LlmMode::mock);
    case LlmMode::live: return backend(LlmMode::live);
    case LlmMode::replay: return std::make_shared<llm::ReplayLlmClient>(s.fixtures);
    case LlmMode::record:
        return std::make_shared<llm::RecordingLlmClient>(backend(s.record_backend), s.fixtures, s.client);
    }
    throw ConfigError("unknown llm mode");
}

struct ClipCaption {
    std::vector<caption::ActionSegment> segments;
    caption::Prompts prompts;
    caption::Caption caption;
    /// No frame reached p_min, so segments were built from all frames.
    bool low_confidence = false;
};

inline ClipCaption caption_clip(std::span<const labeler::PseudoLabelRecord> records,
                                std::span<const std::string> taxonomy, std::size_t k,
                                const caption::ConsistencyRules& rules, double fps,
                                const caption::PromptTemplates& templates, const llm::LlmClient& client) {
    ClipCaption out;
    auto states = caption::make_states(records, taxonomy, k, rules.p_min);
    states = caption::temporal_filter(std::move(states), rules);
    out.segments = caption::segment(states);
    if (out.segments.empty()) {
        out.low_confidence = true;
        for (auto& s : states) s.uncertain = false;
        out.segments = caption::segment(states);
    }
    out.prompts = caption::build_prompt(out.segments, taxonomy, fps, templates);
    out.caption = caption::generate_caption(out.prompts, client);
    return out;
}

// --- run-all -------------------------------------------------------------------------

struct ClipState {
    synth::DatasetEntry entry;
    FrameStream stream;
    std::vector<Interval> segments;
    std::vector<SegmentCrops> captures;
    bool labeled_pool = false;
    std::vector<labeler::PseudoLabelRecord> records;
};

inline std::string reference_caption(const std::string& action) { return "The person is seen " + action + "."; }

class StageClock {
public:
    void lap(const std::string& stage) {
        const auto now = std::chrono::steady_clock::now();
        timings_[stage] = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
    }
    const nlohmann::json& json() const { return timings_; }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
    nlohmann::json timings_ = nlohmann::json::object();
};

namespace detail {

inline nlohmann::json run_all_stages(const PipelineConfig& cfg, const fs::path& dataset, const fs::path& out,
                                     std::shared_ptr<const llm::LlmClient> client, std::string& stage) {
    stage = "config";
    cfg.validate();
    stage = "load";
    StageClock clock;
    const synth::DatasetIndex index = synth::read_dataset_index(dataset);
    const std::vector<std::string> taxonomy =
        cfg.taxonomy ? *cfg.taxonomy : (index.taxonomy.empty() ? default_taxonomy() : index.taxonomy);
    validate_taxonomy(taxonomy);
    const double fps = cfg.fps ? *cfg.fps : index.fps;
    const std::size_t num_classes = taxonomy.size();
    const std::size_t k = std::min(cfg.topk, num_classes);

    std::vector<ClipState> clips;
    for (const auto& e : index.clips) {
        if (e.label && *e.label >= num_classes) throw StageError("clip label outside the taxonomy: " + e.rel);
        clips.push_back({e, load_stream(e.dir), {}, {}, false, {}});
    }
    clock.lap("load");

    // filter
    stage = "filter";
    nlohmann::json per_kind = nlohmann::json::object();
    std::size_t retained_clips = 0, retained_frames = 0, total_frames = 0;
    for (auto& c : clips) {
        total_frames += c.stream.size();
        c.segments = filter_stream(c.stream, cfg.filter).segments;
        const std::string kind(synth::to_string(c.entry.kind));
        auto& pk = per_kind[kind];
        if (pk.is_null()) pk = {{"clips", 0}, {"retained", 0}};
        pk["clips"] = pk["clips"].get<std::size_t>() + 1;
        if (!c.segments.empty()) {
            ++retained_clips;
            pk["retained"] = pk["retained"].get<std::size_t>() + 1;
        }
        for (const auto& s : c.segments) retained_frames += s.length();
    }
    nlohmann::json report;
    report["seed"] = cfg.seed;
    report["taxonomy"] = taxonomy;
    report["filter"] = {{"config", to_json(cfg.filter)},
                        {"clips", clips.size()},
                        {"retained_clips", retained_clips},
                        {"frames", total_frames},
                        {"retained_frames", retained_frames},
                        {"by_kind", per_kind}};
    clock.lap("filter");

    // capture
    stage = "capture";
    std::size_t crop_count = 0, captured_segments = 0;
    for (auto& c : clips) {
        if (c.segments.empty()) continue;
        c.captures = capture_segments(c.stream, c.segments, cfg.capture);
        for (const auto& sc : c.captures) crop_count += sc.crops.size();
        captured_segments += c.captures.size();
    }
    report["capture"] = {{"segments", captured_segments}, {"crops", crop_count}};
    clock.lap("capture");

    fs::create_directories(out);
    if (crop_count == 0) {
        report["labeler"] = {{"skipped", "no retained frames with a coherent track"}};
        report["caption"] = {{"captions", 0}};
        llambda::detail::write_file(out / "labels.jsonl", "");
        llambda::detail::write_file(out / "captions.jsonl", "");
        report["timings"] = clock.json();
        llambda::detail::write_json(out / "report.json", report);
        return report;
    }

    // labeled pool: a seeded fraction of the captured clips of each class
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            if (clips[i].entry.label == cls && !clips[i].captures.empty()) ids.push_back(i);
        }
        if (ids.empty()) continue;
        Rng rng(derive_seed(cfg.seed, 0x1ABE1, cls));
        rng.shuffle(std::span<std::size_t>(ids));
        const auto take = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(cfg.labeled_fraction * static_cast<double>(ids.size()))));
        for (std::size_t t = 0; t < std::min(take, ids.size()); ++t) clips[ids[t]].labeled_pool = true;
    }
    std::vector<labeler::Sample> labeled, unlabeled;
    for (const auto& c : clips) {
        for (const auto& sc : c.captures) {
            for (const auto& f : sc.crops.frames) {
                if (c.labeled_pool) {
                    labeled.push_back({f.image, c.entry.label});
                } else {
                    unlabeled.push_back({f.image, std::nullopt});
                }
            }
        }
    }

    // labeler
    stage = "labeler";
    labeler::EmbeddingNetwork model;
    nlohmann::json lab = {{"labeled_samples", labeled.size()}, {"unlabeled_samples", unlabeled.size()}};
    if (cfg.federated.enabled) {
        labeler::require_all_classes(labeled, num_classes);
        std::vector<labeler::Sample> pool = labeled;
        pool.insert(pool.end(), unlabeled.begin(), unlabeled.end());
        std::vector<std::size_t> groups;
        for (const auto& s : pool) groups.push_back(s.label ? *s.label : num_classes);
        const auto parts = fed::dirichlet_partition(groups, cfg.federated.clients, cfg.federated.alpha, cfg.seed);
        fed::FedResult res = fed::run_rounds(pool, parts, num_classes, cfg.labeler, cfg.federated.rounds, cfg.seed);
        model = std::move(res.model);
        llambda::detail::write_file(out / "fed_timing.csv", fed::timings_csv(res.timings));
        lab["mode"] = "federated";
        lab["clients"] = cfg.federated.clients;
        lab["rounds"] = cfg.federated.rounds.rounds;
    } else {
        labeler::TrainResult res = labeler::train(labeled, unlabeled, num_classes, cfg.labeler, cfg.seed);
        model = std::move(res.model);
        lab["mode"] = "centralized";
        lab["final_loss"] = res.history.empty() ? 0.0 : res.history.back().mean_loss;
    }
    lab["train_accuracy"] = labeler::accuracy(model, labeled);
    labeler::save_model(out / "model.bin", {model, taxonomy, cfg.seed, cfg.labeler});
    clock.lap("labeler");

    // pseudo-labels
    stage = "pseudo-label";
    std::string labels_jsonl;
    std::size_t eval_total = 0, eval_correct = 0;
    for (auto& c : clips) {
        for (const auto& sc : c.captures) {
            for (std::size_t i = 0; i < sc.crops.size(); ++i) {
                auto rec = labeler::predict(model, sc.crops.frames[i].image, sc.frame_indices[i], k);
                labels_jsonl += label_record_json(c.stream.source_id, rec, sc.crops.frames[i].timestamp_ms, taxonomy)
                                    .dump() +
                                "\n";
                if (c.entry.label && !c.labeled_pool) {
                    ++eval_total;
                    if (rec.topk.front().cls == *c.entry.label) ++eval_correct;
                }
                c.records.push_back(std::move(rec));
            }
        }
    }
    llambda::detail::write_file(out / "labels.jsonl", labels_jsonl);
    lab["pseudo_label_accuracy"] =
        eval_total ? static_cast<double>(eval_correct) / static_cast<double>(eval_total) : 0.0;
    lab["pseudo_label_frames"] = eval_total;
    report["labeler"] = lab;
    clock.lap("pseudo_label");

    // captions
    stage = "caption";
    if (!client) client = make_llm_client(cfg.llm);
    std::string captions_jsonl;
    nlohmann::json caption_rows = nlohmann::json::array();
    std::size_t uncaptioned = 0;
    double f1_sum = 0.0;
    std::size_t f1_count = 0;
    for (const auto& c : clips) {
        if (c.segments.empty()) continue;
        if (c.records.empty()) {
            ++uncaptioned;
            continue;
        }
        const ClipCaption cc = caption_clip(c.records, taxonomy, k, cfg.rules, fps, cfg.prompts, *client);
        captions_jsonl += caption::caption_record(c.stream.source_id, cc.caption, cc.segments, cc.prompts).dump() + "\n";
        nlohmann::json row = {{"source_id", c.stream.source_id},
                              {"caption", cc.caption.text},
                              {"prompt_sha256", cc.prompts.sha256()},
                              {"segments", cc.segments.size()},
                              {"low_confidence", cc.low_confidence}};
        if (c.entry.label) {
            const double f1 = lexical_f1(cc.caption.text, reference_caption(taxonomy[*c.entry.label]));
            row["lexical_f1"] = f1;
            f1_sum += f1;
            ++f1_count;
        }
        caption_rows.push_back(std::move(row));
    }
    llambda::detail::write_file(out / "captions.jsonl", captions_jsonl);
    report["caption"] = {{"captions", caption_rows.size()},
                         {"uncaptioned_retained_clips", uncaptioned},
                         {"mean_lexical_f1", f1_count ? f1_sum / static_cast<double>(f1_count) : 0.0},
                         {"clips", caption_rows}};
    clock.lap("caption");

    report["timings"] = clock.json();
    llambda::detail::write_json(out / "report.json", report);
    return report;
}

} // namespace detail

/// Runs the whole pipeline and writes labels.jsonl, captions.jsonl,
/// model.bin and report.json to `out`. Wall-clock timings are kept under
/// the report's "timings" key; everything else is a deterministic function
/// of the dataset, config and LLM responses. Errors name the failing stage.
inline nlohmann::json run_all(const PipelineConfig& cfg, const fs::path& dataset, const fs::path& out,
                              std::shared_ptr<const llm::LlmClient> client = nullptr) {
    std::string stage;
    try {
        return detail::run_all_stages(cfg, dataset, out, std::move(client), stage);
    } catch (const ConfigError& e) {
        throw ConfigError(stage + ": " + e.what());
    } catch (const ExternalError& e) {
        throw ExternalError(stage + ": " + e.what(), e.attempts());
    } catch (const IoError& e) {
        throw IoError(stage + ": " + e.what());
    } catch (const StageError& e) {
        throw StageError(stage + ": " + e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError(stage + ": " + e.what());
    }
}

/// The report without wall-clock fields, serialized.
inline std::string deterministic_report(nlohmann::json report) {
    report.erase("timings");
    return report.dump(2);
}

} // namespace llambda::pipeline
