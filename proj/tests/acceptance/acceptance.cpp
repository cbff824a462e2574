// Acceptance checks: one PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "llambda/llambda.hpp"

using namespace llambda;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("llambda_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------- 1

Outcome filter_separation() {
    const auto t0 = Clock::now();
    const synth::SyntheticSpec spec;
    const FilterConfig cfg; // sigma 0.5, N = 2
    struct Row {
        synth::WindowKind kind;
        std::size_t count;
        std::size_t kept = 0;
    };
    std::vector<Row> rows{{synth::WindowKind::motion, 100}, {synth::WindowKind::noise, 50}, {synth::WindowKind::still, 50}};
    std::uint64_t id = 0;
    for (auto& r : rows) {
        for (std::size_t i = 0; i < r.count; ++i, ++id) {
            Rng rng(derive_seed(1, 0xBE7C, id));
            const auto win = synth::make_benchmark_window(r.kind, cfg.window_size, spec, rng);
            r.kept += score_window(win.frames, cfg).retained;
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = rows[0].kept * 100 >= 95 * rows[0].count && rows[1].kept == 0 && rows[2].kept == 0 && secs < 5;
    return {pass, "motion " + std::to_string(rows[0].kept) + "/100, noise " + std::to_string(rows[1].kept) +
                      "/50, static " + std::to_string(rows[2].kept) + "/50 retained; " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 2

std::vector<Frame> random_window(Rng& rng, std::size_t w) {
    std::vector<Frame> frames;
    Image img(8, 8);
    for (double& v : img.pixels()) v = rng.uniform();
    for (std::size_t t = 0; t < w; ++t) {
        // occasional large changes, otherwise small jitter of random size
        const double amount = rng.bernoulli(0.3) ? rng.uniform(0.1, 0.5) : rng.uniform(0.0, 0.05);
        for (double& v : img.pixels()) v = std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0);
        frames.push_back({img, t * 100, Modality::synthetic, 65535});
    }
    return frames;
}

Outcome filter_invariances() {
    Rng rng(2);
    std::size_t scale_violations = 0, sigma_violations = 0, n_violations = 0;
    const std::vector<double> sigmas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    for (int t = 0; t < 1000; ++t) {
        FilterConfig base;
        base.activity_floor = 0.0;
        const auto frames = random_window(rng, base.window_size);
        const auto w = score_window(frames, base);
        for (double c : {0.1, 1.0, 10.0}) {
            std::vector<double> scaled = w.diffs;
            for (double& v : scaled) v *= c;
            const auto s = score_diffs(scaled, base.sigma);
            if (s.scores != w.scores || s.decision_sum != w.decision_sum) ++scale_violations;
        }
        // raising sigma can only clear scores and drop windows
        std::vector<int> prev_scores(w.diffs.size(), 1);
        bool prev_kept = true;
        for (double sigma : sigmas) {
            FilterConfig c = base;
            c.sigma = sigma;
            const auto s = score_window(frames, c);
            for (std::size_t i = 0; i < s.scores.size(); ++i) {
                if (s.scores[i] > prev_scores[i]) ++sigma_violations;
            }
            if (s.retained && !prev_kept) ++sigma_violations;
            prev_scores = s.scores;
            prev_kept = s.retained;
        }
        // raising N can only drop windows
        prev_kept = true;
        for (std::size_t n = 1; n < base.window_size; ++n) {
            FilterConfig c = base;
            c.min_significant = n;
            const bool kept = score_window(frames, c).retained;
            if (kept && !prev_kept) ++n_violations;
            prev_kept = kept;
        }
    }
    const bool pass = scale_violations == 0 && sigma_violations == 0 && n_violations == 0;
    return {pass, "1000 windows; scale violations " + std::to_string(scale_violations) + ", sigma " +
                      std::to_string(sigma_violations) + ", N " + std::to_string(n_violations)};
}

// ---------------------------------------------------------------- 3

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    double worst_nt = 0.0, worst_batch = 0.0;
    Rng rng(3);
    for (bool standard : {false, true}) {
        for (bool labels : {false, true}) {
            for (double same_w : {0.0, 0.5}) {
                worst_nt = std::max(worst_nt, oracle::ntxent_gradient_error(rng, {0.5, same_w, standard}, 6, 8, 100,
                                                                            labels));
            }
        }
    }
    auto net = labeler::EmbeddingNetwork::initialized(3, 3);
    std::vector<Image> a, p;
    for (int i = 0; i < 6; ++i) {
        Image x(32, 32), y(32, 32);
        for (double& v : x.pixels()) v = rng.uniform();
        for (double& v : y.pixels()) v = rng.uniform();
        a.push_back(std::move(x));
        p.push_back(std::move(y));
    }
    const std::vector<std::optional<std::size_t>> labels{0, 1, std::nullopt, 2, 0, std::nullopt};
    for (double lambda : {0.0, 0.5, 1.0}) {
        for (bool standard : {false, true}) {
            labeler::ContrastiveConfig cfg;
            cfg.lambda = lambda;
            cfg.standard_denominator = standard;
            worst_batch = std::max(worst_batch, oracle::batch_gradient_error(rng, net, a, p, labels, cfg, 100));
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = worst_nt <= 1e-4 && worst_batch <= 1e-4 && secs < 30;
    return {pass, "max rel err contrastive " + fmt(worst_nt) + ", combined loss " + fmt(worst_batch) + "; " +
                      fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 4

Outcome ntxent_oracle() {
    double worst = 0.0;
    std::size_t batches = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed(seed, 0x0AC1E));
        for (std::size_t n = 2; n <= 8; ++n) {
            const std::size_t dim = 2 + rng.uniform_index(15);
            const auto a = oracle::random_embeddings(rng, n, dim);
            const auto p = oracle::random_embeddings(rng, n, dim);
            std::vector<std::optional<std::size_t>> labels;
            for (std::size_t i = 0; i < n; ++i) {
                labels.push_back(rng.bernoulli(0.3) ? std::nullopt : std::optional<std::size_t>(rng.uniform_index(3)));
            }
            const double tau = rng.uniform(0.1, 1.0);
            for (double same_w : {0.0, 0.3, 1.0}) {
                for (bool standard : {false, true}) {
                    const double got = labeler::ntxent_loss(a, p, labels, {tau, same_w, standard}).loss;
                    const double want = oracle::ntxent(a, p, labels, tau, same_w, standard);
                    worst = std::max(worst, std::abs(got - want));
                    ++batches;
                }
            }
        }
    }
    return {worst <= 1e-9, std::to_string(batches) + " batches, max |diff| " + fmt(worst)};
}

// ---------------------------------------------------------------- 5

const std::vector<labeler::Sample>& separable_set() {
    static const auto data = pipeline::labeled_crops(synth::generate(synth::SyntheticSpec{}));
    return data;
}

Outcome labeler_learning() {
    const auto t0 = Clock::now();
    const auto& data = separable_set();
    labeler::ContrastiveConfig cfg;
    cfg.lambda = 0.5;
    const std::uint64_t seed = 0;
    auto net = labeler::EmbeddingNetwork::initialized(3, seed);
    double acc = 0.0;
    std::size_t epochs = 0;
    while (epochs < 200 && acc < 0.9) {
        labeler::train_epochs(net, data, cfg, seed, epochs, 1);
        ++epochs;
        acc = labeler::accuracy(net, data);
    }
    cfg.epochs = epochs;
    const auto again = labeler::train(data, {}, 3, cfg, seed);
    const bool identical = again.model == net;
    const double secs = seconds_since(t0);
    const bool pass = acc >= 0.9 && identical && secs < 120;
    return {pass, "accuracy " + fmt(acc) + " after " + std::to_string(epochs) + " epochs on " +
                      std::to_string(data.size()) + " crops; rerun " + (identical ? "bit-identical" : "DIFFERS") +
                      "; " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 6

Outcome fedavg_algebra() {
    Rng rng(6);
    double worst_mean = 0.0, worst_affine = 0.0;
    std::size_t hull_violations = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t k = 1 + rng.uniform_index(8), dim = 1 + rng.uniform_index(16);
        std::vector<std::vector<double>> w(k, std::vector<double>(dim));
        std::vector<std::size_t> n(k);
        for (std::size_t i = 0; i < k; ++i) {
            n[i] = 1 + rng.uniform_index(1000);
            for (double& v : w[i]) v = rng.normal(0.0, 5.0);
        }
        const auto avg = fed::fedavg(w, n);
        const auto ref = oracle::weighted_mean(w, n);
        const double a = rng.uniform(-4.0, 4.0), b = rng.uniform(-4.0, 4.0);
        auto moved = w;
        for (auto& wi : moved) {
            for (double& v : wi) v = a * v + b;
        }
        const auto moved_avg = fed::fedavg(moved, n);
        for (std::size_t d = 0; d < dim; ++d) {
            worst_mean = std::max(worst_mean, std::abs(avg[d] - ref[d]) / std::max(1.0, std::abs(ref[d])));
            const double expect = a * avg[d] + b;
            worst_affine = std::max(worst_affine, std::abs(moved_avg[d] - expect) / std::max(1.0, std::abs(expect)));
            double lo = w[0][d], hi = w[0][d];
            for (const auto& wi : w) {
                lo = std::min(lo, wi[d]);
                hi = std::max(hi, wi[d]);
            }
            hull_violations += avg[d] < lo || avg[d] > hi;
        }
    }

    // one client holding everything is centralized training
    const auto& full = separable_set();
    std::vector<labeler::Sample> data;
    for (std::size_t i = 0; i < full.size(); i += 4) data.push_back(full[i]);
    labeler::ContrastiveConfig cfg;
    cfg.epochs = 6;
    fed::ClientPartition all{0, std::vector<std::size_t>(data.size())};
    std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
    fed::FedConfig fc;
    fc.rounds = 3;
    fc.local_epochs = 2;
    const std::vector<fed::ClientPartition> parts{all};
    const bool degenerate = fed::run_rounds(data, parts, 3, cfg, fc, 17).model == labeler::train(data, {}, 3, cfg, 17).model;

    const bool pass = worst_mean <= 1e-12 && worst_affine <= 1e-12 && hull_violations == 0 && degenerate;
    return {pass, "1000 instances; mean err " + fmt(worst_mean) + ", affine err " + fmt(worst_affine) +
                      ", hull violations " + std::to_string(hull_violations) + "; 1-client run " +
                      (degenerate ? "bit-equal to centralized" : "DIFFERS from centralized")};
}

// ---------------------------------------------------------------- 7

Outcome federated_utility() {
    const auto t0 = Clock::now();
    const auto& train_set = separable_set();
    synth::SyntheticSpec test_spec;
    test_spec.seed = 1;
    const auto test_set = pipeline::labeled_crops(synth::generate(test_spec));

    labeler::ContrastiveConfig cfg;
    fed::FedConfig fc;
    fc.rounds = 20;
    fc.local_epochs = 1;
    cfg.epochs = fc.rounds * fc.local_epochs;
    const std::uint64_t seed = 7;

    const auto central = labeler::train(train_set, {}, 3, cfg, seed);
    const double central_acc = labeler::accuracy(central.model, test_set);

    std::vector<std::size_t> labels;
    for (const auto& s : train_set) labels.push_back(*s.label);
    const auto parts = fed::dirichlet_partition(labels, 4, 1.0, seed);
    const auto fed_res = fed::run_rounds(train_set, parts, 3, cfg, fc, seed);
    const double fed_acc = labeler::accuracy(fed_res.model, test_set);

    std::string sizes;
    for (const auto& p : parts) sizes += (sizes.empty() ? "" : "/") + std::to_string(p.size());
    const double secs = seconds_since(t0);
    const bool pass = fed_acc >= 0.8 * central_acc && secs < 300;
    return {pass, "held-out accuracy federated " + fmt(fed_acc) + " vs centralized " + fmt(central_acc) + " (ratio " +
                      fmt(central_acc > 0 ? fed_acc / central_acc : 0.0) + "); client sizes " + sizes + "; " +
                      fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 8

using caption::FrameState;

std::vector<FrameState> random_states(Rng& rng) {
    static const std::vector<std::string> actions{"A", "B", "C", "D"};
    const std::size_t n = 1 + rng.uniform_index(40);
    const std::size_t k = 1 + rng.uniform_index(3);
    std::vector<FrameState> out;
    std::size_t cur = rng.uniform_index(4);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.bernoulli(0.4)) cur = rng.uniform_index(4);
        FrameState s;
        s.frame_index = i;
        std::vector<std::size_t> order{0, 1, 2, 3};
        std::swap(order[0], order[cur]);
        double p = rng.uniform(0.3, 1.0);
        for (std::size_t j = 0; j < k; ++j) {
            s.topk.push_back({actions[order[j]], p});
            p *= rng.uniform(0.2, 1.0);
        }
        s.uncertain = rng.bernoulli(0.1);
        out.push_back(std::move(s));
    }
    return out;
}

Outcome captioner_rules() {
    // running, running, running, sleeping, running, running, running
    std::vector<FrameState> seq;
    for (std::size_t i = 0; i < 7; ++i) seq.push_back({i, {{i == 3 ? "Sleeping" : "Running", 0.9}}, false});
    caption::ConsistencyRules rules;
    rules.add_incompatible("Running", "Sleeping");
    const auto fixed = caption::temporal_filter(seq, rules);
    bool singleton = true;
    for (std::size_t i = 0; i < 7; ++i) {
        singleton = singleton && fixed[i].top_action() == "Running";
        if (i != 3) singleton = singleton && fixed[i] == seq[i];
    }
    singleton = singleton && std::abs(fixed[3].top_prob() - 0.9) < 1e-12;

    Rng rng(8);
    caption::ConsistencyRules prop_rules;
    prop_rules.add_incompatible("A", "B");
    prop_rules.add_incompatible("C", "D");
    std::size_t idem = 0, new_labels = 0, runs_touched = 0, round_trip = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto in = random_states(rng);
        const auto out = caption::temporal_filter(in, prop_rules);
        idem += caption::temporal_filter(out, prop_rules) != out;
        std::set<std::string> seen;
        for (const auto& s : in) {
            for (const auto& e : s.topk) seen.insert(e.action);
        }
        for (const auto& s : out) {
            for (const auto& e : s.topk) new_labels += !seen.count(e.action);
        }
        // maximal runs of >= 2 certain frames keep their states
        std::vector<std::size_t> run;
        auto flush = [&] {
            if (run.size() >= 2) {
                for (std::size_t i : run) runs_touched += !(out[i] == in[i]);
            }
            run.clear();
        };
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i].uncertain) continue;
            if (!run.empty() && in[run.back()].top_action() != in[i].top_action()) flush();
            run.push_back(i);
        }
        flush();
        const auto back = caption::expand(caption::segment(out), out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const std::optional<std::string> want =
                out[i].uncertain ? std::nullopt : std::optional<std::string>(out[i].top_action());
            round_trip += back[i] != want;
        }
    }
    const bool pass = singleton && idem == 0 && new_labels == 0 && runs_touched == 0 && round_trip == 0;
    return {pass, std::string("singleton ") + (singleton ? "corrected" : "NOT corrected") +
                      "; 10000 sequences: idempotence failures " + std::to_string(idem) + ", new labels " +
                      std::to_string(new_labels) + ", changed run members " + std::to_string(runs_touched) +
                      ", round-trip mismatches " + std::to_string(round_trip)};
}

// ---------------------------------------------------------------- 9

Outcome topk_plumbing() {
    const auto& tax = default_taxonomy();
    Rng rng(9);
    std::size_t bad_states = 0, bad_lines = 0, lines = 0;
    for (std::size_t k : {1u, 3u, 5u}) {
        for (int t = 0; t < 50; ++t) {
            std::vector<labeler::PseudoLabelRecord> recs;
            const std::size_t n = 5 + rng.uniform_index(30);
            std::size_t cur = rng.uniform_index(tax.size());
            for (std::size_t i = 0; i < n; ++i) {
                if (rng.bernoulli(0.1)) cur = rng.uniform_index(tax.size());
                std::vector<double> logits(tax.size());
                for (double& v : logits) v = rng.normal();
                logits[cur] += 4.0;
                recs.push_back(labeler::record_from_logits(i, logits, tax.size()));
            }
            const auto states = caption::make_states(recs, tax, k, 0.4);
            for (const auto& s : states) {
                if (!s.uncertain && s.topk.size() != k) ++bad_states;
            }
            const auto segs = caption::segment(states);
            if (segs.empty()) continue;
            const auto prompts = caption::build_prompt(segs, tax, 10.0);
            std::istringstream in(prompts.runtime);
            for (std::string line; std::getline(in, line);) {
                const auto pos = line.find("candidates:");
                if (pos == std::string::npos) continue;
                ++lines;
                std::size_t named = 0;
                for (const auto& name : tax) {
                    for (auto at = line.find(name + " ("); at != std::string::npos; at = line.find(name + " (", at + 1)) {
                        // whole names only
                        if (at == pos + 12 || line.compare(at - 2, 2, ", ") == 0) ++named;
                    }
                }
                bad_lines += named != k;
            }
        }
    }
    const bool default_k = PipelineConfig{}.topk == 3;
    const bool pass = bad_states == 0 && bad_lines == 0 && lines > 0 && default_k;
    return {pass, "k in {1,3,5}: " + std::to_string(bad_states) + " states and " + std::to_string(bad_lines) + "/" +
                      std::to_string(lines) + " candidate lines with the wrong count; default k = " +
                      std::to_string(PipelineConfig{}.topk)};
}

// ---------------------------------------------------------------- 10

Outcome lora_checks() {
    Rng rng(10);
    double worst = 0.0;
    bool identity = true;
    for (std::size_t d : {2u, 8u, 32u, 64u, 128u, 256u}) {
        const std::size_t r = std::min<std::size_t>(8, d - 1);
        lora::Matrix w(d, d);
        for (double& v : w.data()) v = rng.normal();
        auto ad = lora::init_adapter(d, r, rng.next_u64());
        identity = identity && lora::merge(w, ad) == w;
        std::vector<double> x(d);
        for (double& v : x) v = rng.normal();
        identity = identity && lora::forward(w, ad, x) == lora::matvec(w, x);
        for (double& v : ad.b.data()) v = rng.normal();
        const auto merged = lora::merge(w, ad);
        for (int t = 0; t < 20; ++t) {
            for (double& v : x) v = rng.normal();
            const auto y1 = lora::matvec(merged, x), y2 = lora::forward(w, ad, x);
            for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(y1[i] - y2[i]));
        }
    }
    const auto b = lora::param_budget(4096, 8);
    const bool ratio_ok = b.ratio == 0.00390625 && 100.0 * b.ratio == 0.390625 && b.ratio < 0.03;
    const bool pass = worst <= 1e-10 && identity && ratio_ok;
    return {pass, "max |merged - forward| " + fmt(worst) + " up to d=256; B=0 identity " +
                      (identity ? "exact" : "BROKEN") + "; d=4096 r=8 ratio " + fmt(100.0 * b.ratio, 7) + "%"};
}

// ---------------------------------------------------------------- 11

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LLAMBDA_CLI_PATH) + " " + args + " >/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end() {
    const auto dir = scratch("e2e");
    const std::string d = dir.string();
    if (run_cli("gen-synth --out " + d + "/ds") != 0) return {false, "gen-synth failed"};
    if (run_cli("run-all --data " + d + "/ds --out " + d + "/record --llm record --fixtures " + d + "/fixtures") != 0) {
        return {false, "recording run failed"};
    }
    double worst_secs = 0.0;
    for (const char* name : {"replay1", "replay2"}) {
        const auto t0 = Clock::now();
        const int rc = run_cli("run-all --data " + d + "/ds --out " + d + "/" + name + " --llm replay --fixtures " + d +
                               "/fixtures");
        worst_secs = std::max(worst_secs, seconds_since(t0));
        if (rc != 0) return {false, std::string(name) + " exited with " + std::to_string(rc)};
    }
    const auto r1 = llambda::detail::read_json(dir / "replay1" / "report.json");
    const auto r2 = llambda::detail::read_json(dir / "replay2" / "report.json");
    bool same = pipeline::deterministic_report(r1) == pipeline::deterministic_report(r2);
    for (const char* f : {"labels.jsonl", "captions.jsonl", "model.bin"}) {
        same = same && llambda::detail::read_file(dir / "replay1" / f) == llambda::detail::read_file(dir / "replay2" / f);
    }
    const auto retained = r1["filter"]["retained_clips"].get<std::size_t>();
    const auto captions = r1["caption"]["captions"].get<std::size_t>();
    std::size_t captioned = 0;
    for (const auto& row : r1["caption"]["clips"]) captioned += !row["caption"].get<std::string>().empty();
    const bool pass = retained > 0 && captions == retained && captioned == retained && same && worst_secs < 300;
    return {pass, std::to_string(captioned) + " captions for " + std::to_string(retained) + " retained clips; replays " +
                      (same ? "byte-identical" : "DIFFER") + " (excluding timings); slowest run " + fmt(worst_secs) +
                      " s"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 filter separation", filter_separation},
        {"2 filter invariances", filter_invariances},
        {"3 gradient correctness", gradient_correctness},
        {"4 NT-Xent oracle equivalence", ntxent_oracle},
        {"5 labeler learning", labeler_learning},
        {"6 FedAvg algebra", fedavg_algebra},
        {"7 federated utility", federated_utility},
        {"8 captioner rules", captioner_rules},
        {"9 top-k plumbing", topk_plumbing},
        {"10 LoRA", lora_checks},
        {"11 end-to-end", end_to_end},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
