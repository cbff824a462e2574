#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "llambda/llambda.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace llambda;

namespace {

template <class T, class U>
void override_with(const std::optional<T>& flag, U& target) {
    if (flag) target = *flag;
}

PipelineConfig config_or_default(const std::optional<std::string>& path) {
    return path ? load_pipeline_config(*path) : PipelineConfig{};
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<std::string> read_taxonomy_file(const fs::path& path) {
    json j = llambda::detail::read_json(path);
    try {
        if (j.is_object()) j = j.at("taxonomy");
        auto names = j.get<std::vector<std::string>>();
        validate_taxonomy(names);
        return names;
    } catch (const json::exception& e) {
        throw ConfigError("taxonomy file " + path.string() + ": " + e.what());
    }
}

/// --taxonomy file, then --classes, then the config, then a dataset's
/// labels.json, then the default taxonomy.
std::vector<std::string> resolve_taxonomy(const std::optional<std::string>& file,
                                          const std::vector<std::string>& classes, const PipelineConfig& cfg,
                                          const std::optional<fs::path>& dataset) {
    if (file) return read_taxonomy_file(*file);
    if (!classes.empty()) {
        validate_taxonomy(classes);
        return classes;
    }
    if (cfg.taxonomy) return *cfg.taxonomy;
    if (dataset && fs::exists(*dataset / "labels.json")) {
        auto names = synth::read_dataset_index(*dataset).taxonomy;
        if (!names.empty()) return names;
    }
    return default_taxonomy();
}

std::vector<Interval> read_segments(const fs::path& path) {
    json j = llambda::detail::read_json(path);
    try {
        if (j.is_object()) j = j.at("segments");
        std::vector<Interval> out;
        for (const auto& s : j) out.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()});
        return out;
    } catch (const json::exception& e) {
        throw IoError("segments file " + path.string() + ": " + e.what());
    }
}

void split_samples(const std::vector<pipeline::CropSet>& sets, std::size_t num_classes,
                   std::vector<labeler::Sample>& labeled, std::vector<labeler::Sample>& unlabeled) {
    for (const auto& s : sets) {
        if (s.label && *s.label >= num_classes) {
            throw ConfigError("crop set " + s.source_id + " has label " + std::to_string(*s.label) +
                              " outside the taxonomy");
        }
        for (const auto& f : s.crops.frames) (s.label ? labeled : unlabeled).push_back({f.image, s.label});
    }
}

// --- subcommands -------------------------------------------------------------

struct GenSynthArgs {
    std::string out;
    synth::SyntheticSpec spec;
    double fps = 10.0;
};

void gen_synth(const GenSynthArgs& a) {
    if (!(a.fps > 0.0)) throw ConfigError("fps must be > 0");
    synth::SyntheticSpec spec = a.spec;
    spec.frame_period_ms = static_cast<std::uint64_t>(std::llround(1000.0 / a.fps));
    if (spec.frame_period_ms == 0) throw ConfigError("fps too high for millisecond timestamps");
    const auto ds = synth::generate(spec);
    synth::write_dataset(ds, a.out, a.fps);
    print_json({{"out", a.out}, {"clips", ds.clips.size()}, {"taxonomy", ds.taxonomy}});
}

struct FilterArgs {
    std::string in, out;
    std::optional<std::string> config;
    std::optional<std::size_t> window, min_significant;
    std::optional<double> sigma, activity_floor;
    bool invert_rule = false, debug = false;
};

void filter_cmd(const FilterArgs& a) {
    FilterConfig fc = config_or_default(a.config).filter;
    override_with(a.window, fc.window_size);
    override_with(a.sigma, fc.sigma);
    override_with(a.min_significant, fc.min_significant);
    override_with(a.activity_floor, fc.activity_floor);
    if (a.invert_rule) fc.invert_rule = true;
    fc.validate();
    const FrameStream stream = load_stream(a.in);
    const auto res = filter_stream(stream, fc);
    json segs = json::array();
    for (const auto& s : res.segments) segs.push_back({{"start", s.start}, {"end", s.end}});
    json out = {{"source_id", stream.source_id}, {"segments", segs}};
    if (a.debug) {
        json wins = json::array();
        for (const auto& w : res.windows) {
            wins.push_back({{"start", w.start},
                            {"diffs", w.diffs},
                            {"d_max", w.d_max},
                            {"scores", w.scores},
                            {"decision_sum", w.decision_sum},
                            {"mean_diff", w.mean_diff},
                            {"retained", w.retained}});
        }
        out["windows"] = wins;
    }
    llambda::detail::write_json(a.out, out);
    std::cout << res.segments.size() << " segment(s), " << res.windows.size() << " window(s)\n";
}

struct CaptureArgs {
    std::string in, segments, out;
    std::optional<std::string> boxes, config;
    std::optional<double> epsilon, threshold, min_confidence;
    std::optional<std::size_t> label;
};

void capture_cmd(const CaptureArgs& a) {
    CaptureConfig cc = config_or_default(a.config).capture;
    if (a.epsilon) cc.coherence.epsilon = *a.epsilon;
    override_with(a.threshold, cc.threshold);
    override_with(a.min_confidence, cc.coherence.min_confidence);
    cc.validate();
    const FrameStream stream = load_stream(a.in);
    const auto segments = read_segments(a.segments);
    std::optional<PrecomputedDetector> boxes;
    if (a.boxes) boxes.emplace(parse_boxes_jsonl(llambda::detail::read_file(*a.boxes)));
    pipeline::CropSet set{stream.source_id, a.label, {}, {}};
    set.crops.source_id = stream.source_id;
    for (const auto& sc : pipeline::capture_segments(stream, segments, cc, boxes ? &*boxes : nullptr)) {
        set.crops.frames.insert(set.crops.frames.end(), sc.crops.frames.begin(), sc.crops.frames.end());
        set.frame_indices.insert(set.frame_indices.end(), sc.frame_indices.begin(), sc.frame_indices.end());
    }
    pipeline::write_crop_set(set, a.out);
    std::cout << set.crops.size() << " crop(s) from " << segments.size() << " segment(s)\n";
}

struct TrainArgs {
    std::string labeled, out;
    std::optional<std::string> unlabeled, taxonomy, config;
    std::vector<std::string> classes;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<double> lambda, tau, lr, same_class_weight;
    std::optional<std::uint64_t> seed;
    bool standard_denominator = false;
};

labeler::ContrastiveConfig contrastive_overrides(const TrainArgs& a, labeler::ContrastiveConfig c) {
    override_with(a.epochs, c.epochs);
    override_with(a.batch_size, c.batch_size);
    override_with(a.lambda, c.lambda);
    override_with(a.tau, c.tau);
    override_with(a.lr, c.learning_rate);
    override_with(a.same_class_weight, c.same_class_negative_weight);
    if (a.standard_denominator) c.standard_denominator = true;
    c.validate();
    return c;
}

void train_cmd(const TrainArgs& a) {
    PipelineConfig cfg = config_or_default(a.config);
    override_with(a.seed, cfg.seed);
    const auto lc = contrastive_overrides(a, cfg.labeler);
    const auto taxonomy = resolve_taxonomy(a.taxonomy, a.classes, cfg, fs::path(a.labeled));
    std::vector<labeler::Sample> labeled, unlabeled;
    split_samples(pipeline::load_crop_sets(a.labeled, cfg.filter, cfg.capture), taxonomy.size(), labeled, unlabeled);
    if (a.unlabeled) {
        for (const auto& s : pipeline::load_crop_sets(*a.unlabeled, cfg.filter, cfg.capture)) {
            for (const auto& f : s.crops.frames) unlabeled.push_back({f.image, std::nullopt});
        }
    }
    const auto res = labeler::train(labeled, unlabeled, taxonomy.size(), lc, cfg.seed);
    labeler::save_model(a.out, {res.model, taxonomy, cfg.seed, lc});
    print_json({{"model", a.out},
                {"labeled_samples", labeled.size()},
                {"unlabeled_samples", unlabeled.size()},
                {"epochs", lc.epochs},
                {"final_loss", res.history.empty() ? 0.0 : res.history.back().mean_loss},
                {"train_accuracy", labeler::accuracy(res.model, labeled)}});
}

struct FedArgs {
    TrainArgs train;
    std::string data;
    std::optional<std::size_t> clients, rounds, local_epochs;
    std::optional<double> alpha;
    std::optional<std::string> timing;
    bool parallel = false;
};

void fed_cmd(const FedArgs& a) {
    PipelineConfig cfg = config_or_default(a.train.config);
    override_with(a.train.seed, cfg.seed);
    const auto lc = contrastive_overrides(a.train, cfg.labeler);
    auto fs_cfg = cfg.federated;
    override_with(a.clients, fs_cfg.clients);
    override_with(a.alpha, fs_cfg.alpha);
    override_with(a.rounds, fs_cfg.rounds.rounds);
    override_with(a.local_epochs, fs_cfg.rounds.local_epochs);
    if (a.parallel) fs_cfg.rounds.parallel_clients = true;
    if (fs_cfg.clients < 1) throw ConfigError("clients must be >= 1");
    if (!(fs_cfg.alpha > 0.0)) throw ConfigError("alpha must be > 0");
    if (fs_cfg.rounds.local_epochs < 1) throw ConfigError("local-epochs must be >= 1");

    const auto taxonomy = resolve_taxonomy(a.train.taxonomy, a.train.classes, cfg, fs::path(a.data));
    const std::size_t c = taxonomy.size();
    std::vector<labeler::Sample> labeled, unlabeled;
    split_samples(pipeline::load_crop_sets(a.data, cfg.filter, cfg.capture), c, labeled, unlabeled);
    labeler::require_all_classes(labeled, c);
    std::vector<labeler::Sample> pool = labeled;
    pool.insert(pool.end(), unlabeled.begin(), unlabeled.end());
    std::vector<std::size_t> groups;
    for (const auto& s : pool) groups.push_back(s.label ? *s.label : c);
    const auto parts = fed::dirichlet_partition(groups, fs_cfg.clients, fs_cfg.alpha, cfg.seed);
    const auto res = fed::run_rounds(pool, parts, c, lc, fs_cfg.rounds, cfg.seed);
    labeler::save_model(a.train.out, {res.model, taxonomy, cfg.seed, lc});
    if (a.timing) llambda::detail::write_file(*a.timing, fed::timings_csv(res.timings));
    json sizes = json::array();
    for (const auto& p : parts) sizes.push_back(p.indices.size());
    print_json({{"model", a.train.out},
                {"clients", fs_cfg.clients},
                {"rounds", fs_cfg.rounds.rounds},
                {"client_sizes", sizes},
                {"train_accuracy", labeler::accuracy(res.model, labeled)}});
}

struct PseudoArgs {
    std::string model, in, out;
    std::size_t topk = 3;
    std::optional<std::string> config;
};

void pseudo_cmd(const PseudoArgs& a) {
    if (a.topk < 1) throw ConfigError("topk must be >= 1");
    const PipelineConfig cfg = config_or_default(a.config);
    const auto m = labeler::load_model(a.model);
    std::vector<std::string> taxonomy = m.taxonomy;
    if (taxonomy.size() != m.network.num_classes()) {
        taxonomy.clear();
        for (std::size_t i = 0; i < m.network.num_classes(); ++i) taxonomy.push_back(std::to_string(i));
    }
    std::string lines;
    std::size_t n = 0;
    for (const auto& set : pipeline::load_crop_sets(a.in, cfg.filter, cfg.capture)) {
        for (std::size_t i = 0; i < set.crops.size(); ++i) {
            const auto& f = set.crops.frames[i];
            const auto rec = labeler::predict(m.network, f.image, set.frame_indices[i], a.topk);
            lines += pipeline::label_record_json(set.source_id, rec, f.timestamp_ms, taxonomy).dump() + "\n";
            ++n;
        }
    }
    llambda::detail::write_file(a.out, lines);
    std::cout << n << " pseudo-label(s) written to " << a.out << "\n";
}

struct LlmArgs {
    std::optional<std::string> llm, fixtures, record_backend;
};

void apply_llm_args(const LlmArgs& a, PipelineConfig& cfg) {
    if (a.llm) cfg.llm.mode = parse_llm_mode(*a.llm);
    if (a.fixtures) cfg.llm.fixtures = *a.fixtures;
    if (a.record_backend) {
        cfg.llm.record_backend = parse_llm_mode(*a.record_backend);
        if (cfg.llm.record_backend != LlmMode::mock && cfg.llm.record_backend != LlmMode::live) {
            throw ConfigError("record-backend must be mock or live");
        }
    }
}

struct CaptionArgs {
    std::string labels, out;
    std::optional<std::string> model, taxonomy, rules, system_template, runtime_template, config;
    std::optional<std::size_t> topk;
    std::optional<double> fps;
    LlmArgs llm;
};

void caption_cmd(const CaptionArgs& a) {
    PipelineConfig cfg = config_or_default(a.config);
    apply_llm_args(a.llm, cfg);
    override_with(a.topk, cfg.topk);
    if (cfg.topk < 1) throw ConfigError("topk must be >= 1");
    if (a.fps) cfg.fps = *a.fps;
    if (cfg.fps && !(*cfg.fps > 0.0)) throw ConfigError("fps must be > 0");
    if (a.rules) cfg.rules = caption::rules_from_json(llambda::detail::read_json(*a.rules));
    if (a.system_template) cfg.prompts.system = llambda::detail::read_file(*a.system_template);
    if (a.runtime_template) cfg.prompts.runtime = llambda::detail::read_file(*a.runtime_template);

    std::vector<std::string> taxonomy;
    if (a.model) {
        taxonomy = labeler::load_model(*a.model).taxonomy;
        validate_taxonomy(taxonomy);
    } else {
        taxonomy = resolve_taxonomy(a.taxonomy, {}, cfg, std::nullopt);
    }
    const auto groups = pipeline::parse_labels_jsonl(llambda::detail::read_file(a.labels), cfg.topk);
    const auto client = pipeline::make_llm_client(cfg.llm);
    std::string lines;
    for (const auto& id : groups.order) {
        const auto& recs = groups.records.at(id);
        for (const auto& r : recs) {
            if (r.probs.size() != taxonomy.size()) {
                throw StageError("labels for " + id + " have " + std::to_string(r.probs.size()) +
                                 " classes, taxonomy has " + std::to_string(taxonomy.size()));
            }
        }
        const auto cc = pipeline::caption_clip(recs, taxonomy, std::min(cfg.topk, taxonomy.size()), cfg.rules,
                                               cfg.fps.value_or(10.0), cfg.prompts, *client);
        lines += caption::caption_record(id, cc.caption, cc.segments, cc.prompts).dump() + "\n";
        std::cout << id << ": " << cc.caption.text << "\n";
    }
    llambda::detail::write_file(a.out, lines);
}

struct RunAllArgs {
    std::string data, out;
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    bool federated = false;
    LlmArgs llm;
};

void run_all_cmd(const RunAllArgs& a) {
    PipelineConfig cfg = config_or_default(a.config);
    override_with(a.seed, cfg.seed);
    override_with(a.epochs, cfg.labeler.epochs);
    if (a.federated) cfg.federated.enabled = true;
    apply_llm_args(a.llm, cfg);
    const json report = pipeline::run_all(cfg, a.data, a.out);
    json summary = {{"out", a.out},
                    {"retained_clips", report["filter"]["retained_clips"]},
                    {"crops", report["capture"]["crops"]},
                    {"captions", report["caption"]["captions"]}};
    if (report["labeler"].contains("train_accuracy")) summary["train_accuracy"] = report["labeler"]["train_accuracy"];
    print_json(summary);
}

struct LexicalArgs {
    std::optional<std::string> candidate, reference, captions, data;
};

void lexical_cmd(const LexicalArgs& a) {
    if (a.candidate && a.reference) {
        print_json({{"f1", lexical_f1(*a.candidate, *a.reference)}});
        return;
    }
    if (!a.captions || !a.data) throw ConfigError("give --candidate and --reference, or --captions and --data");
    const auto index = synth::read_dataset_index(*a.data);
    std::map<std::string, std::size_t> label_of;
    for (const auto& e : index.clips) {
        if (e.label) label_of[fs::path(e.rel).filename().string()] = *e.label;
    }
    const std::string text = llambda::detail::read_file(*a.captions);
    json rows = json::array();
    double sum = 0.0;
    std::size_t line_no = 0;
    for (std::size_t pos = 0; pos < text.size();) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            const std::string id = j.at("source_id").get<std::string>();
            const auto it = label_of.find(id);
            if (it == label_of.end() || it->second >= index.taxonomy.size()) continue;
            const double f1 = lexical_f1(j.at("caption").get<std::string>(),
                                         pipeline::reference_caption(index.taxonomy[it->second]));
            rows.push_back({{"source_id", id}, {"f1", f1}});
            sum += f1;
        } catch (const json::exception& e) {
            throw IoError("captions line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    print_json({{"clips", rows.size()}, {"mean_f1", rows.empty() ? 0.0 : sum / static_cast<double>(rows.size())},
                {"per_clip", rows}});
}

struct LoraMergeArgs {
    std::string base, adapter, out;
};

void lora_merge_cmd(const LoraMergeArgs& a) {
    const auto w = lora::load_matrix(a.base);
    const auto ad = lora::load_adapter(a.adapter);
    lora::save_matrix(a.out, lora::merge(w, ad));
    std::cout << "merged " << w.rows() << "x" << w.cols() << " rank " << ad.rank() << " -> " << a.out << "\n";
}

struct LoraBudgetArgs {
    std::uint64_t d = 0, r = lora::kDefaultRank;
    std::optional<std::uint64_t> d_in;
};

void lora_budget_cmd(const LoraBudgetArgs& a) {
    const auto b = lora::param_budget(a.d, a.d_in.value_or(a.d), a.r);
    print_json({{"d_out", a.d},
                {"d_in", a.d_in.value_or(a.d)},
                {"r", a.r},
                {"adapter_params", b.adapter_params},
                {"full_params", b.full_params},
                {"ratio", b.ratio},
                {"percent", 100.0 * b.ratio}});
}

struct LoraInitArgs {
    std::size_t d_out = 0, d_in = 0, r = lora::kDefaultRank;
    std::uint64_t seed = 0;
    double alpha = 1.0;
    std::string out;
    std::optional<std::string> base_out;
};

void lora_init_cmd(const LoraInitArgs& a) {
    lora::save_adapter(a.out, lora::init_adapter(a.d_out, a.d_in, a.r, a.seed, a.alpha));
    if (a.base_out) {
        if (a.d_out != a.d_in) throw ConfigError("--base-out writes an identity matrix and needs d-out == d-in");
        lora::save_matrix(*a.base_out, lora::Matrix::identity(a.d_out));
    }
    std::cout << "adapter " << a.d_out << "x" << a.d_in << " rank " << a.r << " -> " << a.out << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-resolution activity captioning pipeline"};
    app.require_subcommand(1);
    std::vector<std::pair<CLI::App*, std::function<void()>>> commands;

    GenSynthArgs gs;
    auto* c_gen = app.add_subcommand("gen-synth", "Generate the synthetic dataset");
    c_gen->add_option("--out", gs.out, "Output dataset directory")->required();
    c_gen->add_option("--seed", gs.spec.seed);
    c_gen->add_option("--classes", gs.spec.num_classes, "Motion classes (3 or 4)");
    c_gen->add_option("--clips-per-class", gs.spec.clips_per_class);
    c_gen->add_option("--noise-clips", gs.spec.noise_clips);
    c_gen->add_option("--static-clips", gs.spec.static_clips);
    c_gen->add_option("--frames", gs.spec.frames_per_clip, "Frames per clip");
    c_gen->add_option("--size", gs.spec.width, "Frame side in pixels")->each([&](const std::string& v) {
        gs.spec.height = std::stoul(v);
    });
    c_gen->add_option("--fps", gs.fps);
    commands.emplace_back(c_gen, [&] { gen_synth(gs); });

    FilterArgs fa;
    auto* c_filter = app.add_subcommand("filter", "Retain behavior-relevant frame windows of one stream");
    c_filter->add_option("--in", fa.in, "Frame container directory")->required();
    c_filter->add_option("--out", fa.out, "segments.json")->required();
    c_filter->add_option("--window", fa.window);
    c_filter->add_option("--sigma", fa.sigma);
    c_filter->add_option("--min-significant", fa.min_significant);
    c_filter->add_option("--activity-floor", fa.activity_floor);
    c_filter->add_flag("--invert-rule", fa.invert_rule, "Drop windows with >= N significant changes instead");
    c_filter->add_flag("--debug", fa.debug, "Include per-window diagnostics");
    c_filter->add_option("--config", fa.config);
    commands.emplace_back(c_filter, [&] { filter_cmd(fa); });

    CaptureArgs ca;
    auto* c_capture = app.add_subcommand("capture", "Track and crop the person in retained segments");
    c_capture->add_option("--in", ca.in, "Frame container directory")->required();
    c_capture->add_option("--segments", ca.segments, "segments.json from filter")->required();
    c_capture->add_option("--out", ca.out, "Crop set directory")->required();
    c_capture->add_option("--boxes", ca.boxes, "boxes.jsonl from an external detector");
    c_capture->add_option("--epsilon", ca.epsilon, "Coherence bound in pixels");
    c_capture->add_option("--threshold", ca.threshold, "Blob detector threshold");
    c_capture->add_option("--min-confidence", ca.min_confidence);
    c_capture->add_option("--label", ca.label, "Class index stored with the crops");
    c_capture->add_option("--config", ca.config);
    commands.emplace_back(c_capture, [&] { capture_cmd(ca); });

    auto add_train_options = [](CLI::App* c, TrainArgs& t) {
        c->add_option("--out", t.out, "model.bin")->required();
        c->add_option("--taxonomy", t.taxonomy, "JSON list of class names");
        c->add_option("--classes", t.classes, "Class names");
        c->add_option("--epochs", t.epochs);
        c->add_option("--lambda", t.lambda, "Contrastive weight");
        c->add_option("--tau", t.tau);
        c->add_option("--lr", t.lr);
        c->add_option("--batch-size", t.batch_size);
        c->add_option("--seed", t.seed);
        c->add_option("--same-class-weight", t.same_class_weight);
        c->add_flag("--standard-denominator", t.standard_denominator);
        c->add_option("--config", t.config);
    };

    TrainArgs ta;
    auto* c_train = app.add_subcommand("train-labeler", "Train the contrastive labeler");
    c_train->add_option("--labeled", ta.labeled, "Crop sets or dataset directory")->required();
    c_train->add_option("--unlabeled", ta.unlabeled);
    add_train_options(c_train, ta);
    commands.emplace_back(c_train, [&] { train_cmd(ta); });

    FedArgs fda;
    auto* c_fed = app.add_subcommand("fed-sim", "Federated training with FedAvg");
    c_fed->add_option("--data", fda.data, "Crop sets or dataset directory")->required();
    c_fed->add_option("--clients", fda.clients);
    c_fed->add_option("--alpha", fda.alpha, "Dirichlet concentration");
    c_fed->add_option("--rounds", fda.rounds);
    c_fed->add_option("--local-epochs", fda.local_epochs);
    c_fed->add_option("--timing", fda.timing, "timings.csv");
    c_fed->add_flag("--parallel", fda.parallel, "Train the clients of a round concurrently");
    add_train_options(c_fed, fda.train);
    commands.emplace_back(c_fed, [&] { fed_cmd(fda); });

    PseudoArgs pa;
    auto* c_pseudo = app.add_subcommand("pseudo-label", "Label crops with a trained model");
    c_pseudo->add_option("--model", pa.model)->required();
    c_pseudo->add_option("--in", pa.in, "Crop sets or dataset directory")->required();
    c_pseudo->add_option("--out", pa.out, "labels.jsonl")->required();
    c_pseudo->add_option("--topk", pa.topk);
    c_pseudo->add_option("--config", pa.config);
    commands.emplace_back(c_pseudo, [&] { pseudo_cmd(pa); });

    auto add_llm_options = [](CLI::App* c, LlmArgs& l) {
        c->add_option("--llm", l.llm, "mock, replay, record or live");
        c->add_option("--fixtures", l.fixtures, "Fixture directory for replay and record");
        c->add_option("--record-backend", l.record_backend, "mock or live");
    };

    CaptionArgs cpa;
    auto* c_caption = app.add_subcommand("caption", "Caption clips from pseudo-labels");
    c_caption->add_option("--labels", cpa.labels, "labels.jsonl")->required();
    c_caption->add_option("--out", cpa.out, "captions.jsonl")->required();
    c_caption->add_option("--model", cpa.model, "Take the taxonomy from this model");
    c_caption->add_option("--taxonomy", cpa.taxonomy);
    c_caption->add_option("--rules", cpa.rules, "Consistency rules JSON");
    c_caption->add_option("--topk", cpa.topk);
    c_caption->add_option("--fps", cpa.fps);
    c_caption->add_option("--system-template", cpa.system_template);
    c_caption->add_option("--runtime-template", cpa.runtime_template);
    c_caption->add_option("--config", cpa.config);
    add_llm_options(c_caption, cpa.llm);
    commands.emplace_back(c_caption, [&] { caption_cmd(cpa); });

    LoraMergeArgs lma;
    auto* c_merge = app.add_subcommand("lora-merge", "Fold an adapter into its base matrix");
    c_merge->add_option("--base", lma.base)->required();
    c_merge->add_option("--adapter", lma.adapter)->required();
    c_merge->add_option("--out", lma.out)->required();
    commands.emplace_back(c_merge, [&] { lora_merge_cmd(lma); });

    LoraBudgetArgs lba;
    auto* c_budget = app.add_subcommand("lora-budget", "Trainable parameter count of a rank-r adapter");
    c_budget->add_option("--d", lba.d, "Output dimension (and input, unless --d-in)")->required();
    c_budget->add_option("--r", lba.r);
    c_budget->add_option("--d-in", lba.d_in);
    commands.emplace_back(c_budget, [&] { lora_budget_cmd(lba); });

    LoraInitArgs lia;
    auto* c_init = app.add_subcommand("lora-init", "Write a freshly initialized adapter");
    c_init->add_option("--d-out", lia.d_out)->required();
    c_init->add_option("--d-in", lia.d_in)->required();
    c_init->add_option("--r", lia.r);
    c_init->add_option("--seed", lia.seed);
    c_init->add_option("--alpha", lia.alpha);
    c_init->add_option("--out", lia.out)->required();
    c_init->add_option("--base-out", lia.base_out, "Also write an identity base matrix");
    commands.emplace_back(c_init, [&] { lora_init_cmd(lia); });

    RunAllArgs ra;
    auto* c_run = app.add_subcommand("run-all", "Run every stage on a dataset");
    c_run->add_option("--data", ra.data, "Dataset directory with labels.json")->required();
    c_run->add_option("--out", ra.out)->required();
    c_run->add_option("--config", ra.config);
    c_run->add_option("--seed", ra.seed);
    c_run->add_option("--epochs", ra.epochs);
    c_run->add_flag("--federated", ra.federated);
    add_llm_options(c_run, ra.llm);
    commands.emplace_back(c_run, [&] { run_all_cmd(ra); });

    LexicalArgs la;
    auto* c_lex = app.add_subcommand("eval-lexical", "Token-overlap F1 of captions");
    c_lex->add_option("--candidate", la.candidate);
    c_lex->add_option("--reference", la.reference);
    c_lex->add_option("--captions", la.captions, "captions.jsonl");
    c_lex->add_option("--data", la.data, "Dataset whose labels give the references");
    commands.emplace_back(c_lex, [&] { lexical_cmd(la); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        for (auto& [sub, run] : commands) {
            if (sub->parsed()) run();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ExternalError& e) {
        std::cerr << "external service error: " << e.what() << " (attempts: " << e.attempts() << ")\n";
        return 4;
    } catch (const StageError& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
