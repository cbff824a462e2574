#pragma once

// Turns frame-level pseudo labels into a consistency-checked action summary
// and the system/runtime prompt pair for the caption LLM.
//
// Spatial check: each frame keeps its top-k (action, probability) pairs and
// is flagged uncertain when the top probability is below p_min.
// Temporal check: isolated top-1 labels are corrected by two rules, applied
// until nothing changes:
//   1. a singleton run whose label is incompatible with an enclosing context
//      run of length >= min_run takes the context label;
//   2. any remaining singleton takes the mode of its m-frame neighbourhood
//      when that mode covers at least ceil(m/2) frames.
// Uncertain frames are skipped when forming runs. Runs of length >= 2 are
// never modified.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/labeler/predict.hpp"
#include "llambda/llm_client.hpp"
#include "llambda/sha256.hpp"

namespace llambda::caption {

struct ActionProb {
    std::string action;
    double p = 0.0;

    friend bool operator==(const ActionProb&, const ActionProb&) = default;
};

struct FrameState {
    std::size_t frame_index = 0;
    std::vector<ActionProb> topk;
    bool uncertain = false;

    const std::string& top_action() const { return topk.front().action; }
    double top_prob() const { return topk.front().p; }

    friend bool operator==(const FrameState&, const FrameState&) = default;
};

struct ConsistencyRules {
    std::size_t min_run = 4;
    std::size_t window = 5;
    std::set<std::pair<std::string, std::string>> incompatible;
    double p_min = 0.4;

    void add_incompatible(const std::string& a, const std::string& b) {
        incompatible.insert(a < b ? std::pair{a, b} : std::pair{b, a});
    }

    bool is_incompatible(const std::string& a, const std::string& b) const {
        return incompatible.count(a < b ? std::pair{a, b} : std::pair{b, a}) > 0;
    }

    void validate() const {
        if (window % 2 == 0) throw ConfigError("smoothing window must be odd");
        if (min_run < 2) throw ConfigError("min_run must be >= 2");
        if (!(p_min >= 0.0 && p_min <= 1.0)) throw ConfigError("p_min must lie in [0,1]");
    }
};

/// Rules file: {"min_run": L, "window": m, "incompatible": [[a, b], ...], "p_min": p}.
inline ConsistencyRules rules_from_json(const nlohmann::json& j) {
    ConsistencyRules r;
    r.min_run = j.value("min_run", r.min_run);
    r.window = j.value("window", r.window);
    r.p_min = j.value("p_min", r.p_min);
    for (const auto& pair : j.value("incompatible", nlohmann::json::array())) {
        if (!pair.is_array() || pair.size() != 2) throw ConfigError("incompatible entries must be [a, b] pairs");
        r.add_incompatible(pair[0].get<std::string>(), pair[1].get<std::string>());
    }
    r.validate();
    return r;
}

inline nlohmann::json to_json(const ConsistencyRules& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [a, b] : r.incompatible) pairs.push_back({a, b});
    return {{"min_run", r.min_run}, {"window", r.window}, {"incompatible", pairs}, {"p_min", r.p_min}};
}

// --- intra-distribution check ------------------------------------------------

inline std::vector<FrameState> make_states(std::span<const labeler::PseudoLabelRecord> records,
                                           std::span<const std::string> taxonomy, std::size_t k, double p_min) {
    if (records.empty()) throw StageError("make_states: no pseudo-label records");
    if (k < 1) throw ConfigError("make_states: k must be >= 1");
    std::vector<FrameState> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        if (k > rec.probs.size()) throw ConfigError("make_states: k exceeds the number of classes");
        if (rec.probs.size() != taxonomy.size()) throw StageError("make_states: record/taxonomy size mismatch");
        FrameState s;
        s.frame_index = rec.frame_index;
        for (const auto& cp : labeler::top_k(rec.probs, k)) s.topk.push_back({taxonomy[cp.cls], cp.p});
        s.uncertain = s.top_prob() < p_min;
        out.push_back(std::move(s));
    }
    return out;
}

// --- inter-distribution check -----------------------------------------------

namespace detail {

struct Run {
    std::size_t begin; // positions into the certain-frame list
    std::size_t end;
    std::string action;

    std::size_t length() const { return end - begin; }
};

inline std::vector<Run> runs_of(const std::vector<FrameState>& states, const std::vector<std::size_t>& certain) {
    std::vector<Run> runs;
    for (std::size_t i = 0; i < certain.size(); ++i) {
        const std::string& a = states[certain[i]].top_action();
        if (!runs.empty() && runs.back().action == a) {
            runs.back().end = i + 1;
        } else {
            runs.push_back({i, i + 1, a});
        }
    }
    return runs;
}

/// Puts `action` at the top with probability `p`; other candidates keep
/// their order with probabilities capped at `p` so the list stays sorted.
inline void relabel(FrameState& s, const std::string& action, double p) {
    std::vector<ActionProb> next{{action, p}};
    for (const auto& e : s.topk) {
        if (e.action != action) next.push_back({e.action, std::min(e.p, p)});
    }
    next.resize(s.topk.size());
    s.topk = std::move(next);
}

inline double mean_top_prob(const std::vector<FrameState>& states, const std::vector<std::size_t>& certain,
                            std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += states[certain[i]].top_prob();
    return sum / static_cast<double>(end - begin);
}

struct Change {
    std::size_t state;
    std::string action;
    double p;
};

inline bool apply_changes(std::vector<FrameState>& states, const std::vector<Change>& changes) {
    bool changed = false;
    for (const auto& c : changes) {
        if (states[c.state].top_action() == c.action) continue;
        relabel(states[c.state], c.action, c.p);
        changed = true;
    }
    return changed;
}

inline bool incompatibility_pass(std::vector<FrameState>& states, const std::vector<std::size_t>& certain,
                                 const ConsistencyRules& rules) {
    const auto runs = runs_of(states, certain);
    std::vector<Change> changes;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        if (runs[r].length() != 1) continue;
        const std::string& label = runs[r].action;
        const Run* left = r > 0 ? &runs[r - 1] : nullptr;
        const Run* right = r + 1 < runs.size() ? &runs[r + 1] : nullptr;

        std::optional<Change> best;
        std::size_t best_len = 0;
        auto consider = [&](const std::string& ctx, std::size_t len, double mean) {
            if (len >= rules.min_run && rules.is_incompatible(label, ctx) && len > best_len) {
                best = Change{certain[runs[r].begin], ctx, mean};
                best_len = len;
            }
        };
        if (left && right && left->action == right->action) {
            // the singleton is enclosed by one context label on both sides
            const double mean = (mean_top_prob(states, certain, left->begin, left->end) * left->length() +
                                 mean_top_prob(states, certain, right->begin, right->end) * right->length()) /
                                static_cast<double>(left->length() + right->length());
            consider(left->action, left->length() + right->length(), mean);
        } else {
            if (left) consider(left->action, left->length(), mean_top_prob(states, certain, left->begin, left->end));
            if (right) {
                consider(right->action, right->length(), mean_top_prob(states, certain, right->begin, right->end));
            }
        }
        if (best) changes.push_back(*best);
    }
    return apply_changes(states, changes);
}

inline bool mode_pass(std::vector<FrameState>& states, const std::vector<std::size_t>& certain,
                      const ConsistencyRules& rules) {
    const auto runs = runs_of(states, certain);
    const std::size_t n = certain.size();
    const std::size_t m = rules.window;
    const std::size_t need = (m + 1) / 2;
    std::vector<Change> changes;
    for (const Run& run : runs) {
        if (run.length() != 1) continue;
        const std::size_t pos = run.begin;
        // full-length window shifted inward at the sequence ends
        std::size_t lo = pos >= m / 2 ? pos - m / 2 : 0;
        std::size_t hi = std::min(n, lo + m);
        lo = hi >= m ? hi - m : 0;

        std::map<std::string, std::pair<std::size_t, double>> counts;
        for (std::size_t i = lo; i < hi; ++i) {
            auto& c = counts[states[certain[i]].top_action()];
            ++c.first;
            c.second += states[certain[i]].top_prob();
        }
        for (const auto& [action, c] : counts) {
            if (c.first >= need && action != run.action) {
                changes.push_back({certain[pos], action, c.second / static_cast<double>(c.first)});
            }
        }
    }
    return apply_changes(states, changes);
}

} // namespace detail

inline std::vector<FrameState> temporal_filter(std::vector<FrameState> states, const ConsistencyRules& rules) {
    rules.validate();
    std::vector<std::size_t> certain;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (!states[i].uncertain && !states[i].topk.empty()) certain.push_back(i);
    }
    // every change turns a singleton into part of a longer run or stabilizes
    // it; the bound guards against pathological inputs
    const std::size_t max_iterations = certain.size() + 2;
    for (std::size_t it = 0; it < max_iterations; ++it) {
        bool changed = detail::incompatibility_pass(states, certain, rules);
        changed = detail::mode_pass(states, certain, rules) || changed;
        if (!changed) break;
    }
    return states;
}

// --- segments ----------------------------------------------------------------

struct ActionSegment {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string action;
    double mean_prob = 0.0;
    /// Top-k actions by mean probability across the segment's frames.
    std::vector<ActionProb> candidates;
};

/// Run-length encodes certain frames by top-1 action. Uncertain frames
/// belong to no segment and break runs.
inline std::vector<ActionSegment> segment(std::span<const FrameState> states) {
    std::vector<ActionSegment> out;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i].uncertain || states[i].topk.empty()) continue;
        const bool extend = !out.empty() && out.back().end == i && out.back().action == states[i].top_action();
        if (extend) {
            out.back().end = i + 1;
        } else {
            out.push_back({i, i + 1, states[i].top_action(), 0.0, {}});
        }
    }
    for (auto& seg : out) {
        const auto len = static_cast<double>(seg.end - seg.start);
        std::vector<ActionProb> sums;
        std::size_t k = 0;
        for (std::size_t i = seg.start; i < seg.end; ++i) {
            seg.mean_prob += states[i].top_prob() / len;
            k = std::max(k, states[i].topk.size());
            for (const auto& e : states[i].topk) {
                auto it = std::find_if(sums.begin(), sums.end(), [&](const auto& s) { return s.action == e.action; });
                if (it == sums.end()) {
                    sums.push_back({e.action, e.p / len});
                } else {
                    it->p += e.p / len;
                }
            }
        }
        std::stable_sort(sums.begin(), sums.end(), [](const auto& a, const auto& b) { return a.p > b.p; });
        if (sums.size() > k) sums.resize(k);
        seg.candidates = std::move(sums);
    }
    return out;
}

/// Inverse of segment() on top-1 labels: nullopt marks uncertain frames.
inline std::vector<std::optional<std::string>> expand(std::span<const ActionSegment> segments, std::size_t n) {
    std::vector<std::optional<std::string>> out(n);
    for (const auto& s : segments) {
        for (std::size_t i = s.start; i < s.end && i < n; ++i) out[i] = s.action;
    }
    return out;
}

// --- prompts -------------------------------------------------------------------

struct PromptTemplates {
    std::string system =
        "You write captions for low-resolution human activity video (depth, thermal or infrared).\n"
        "You cannot see the video. You receive a timeline of actions predicted frame by frame by an\n"
        "activity recognizer, already grouped into time spans.\n"
        "\n"
        "Action taxonomy:\n"
        "{taxonomy}\n"
        "\n"
        "Spatial consistency: each time span lists its most likely candidate actions with confidences.\n"
        "Several actions can happen at once; mention a secondary candidate only when it is plausible\n"
        "alongside the main action.\n"
        "Temporal consistency: human activity changes gradually. Treat a very short span that\n"
        "contradicts its neighbours as a recognition error, not as a real event.\n"
        "\n"
        "Write one short, factual caption that describes what the person does over the whole video,\n"
        "in chronological order. Use only actions from the taxonomy.";
    std::string runtime =
        "Predicted actions over time:\n"
        "{segments}";
};

struct Prompts {
    std::string system;
    std::string runtime;

    std::string sha256() const { return sha256_hex(system + "\n\n" + runtime); }
};

inline std::string replace_all(std::string text, std::string_view placeholder, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return text;
}

inline std::string format_segment_line(const ActionSegment& s, double fps) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "[%.1f s \xE2\x80\x93 %.1f s] %s (confidence %.2f)",
                  static_cast<double>(s.start) / fps, static_cast<double>(s.end) / fps, s.action.c_str(),
                  s.mean_prob);
    std::string line = buf;
    if (!s.candidates.empty()) {
        line += "\n    candidates:";
        for (std::size_t i = 0; i < s.candidates.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s %s (%.2f)", i == 0 ? "" : ",", s.candidates[i].action.c_str(),
                          s.candidates[i].p);
            line += buf;
        }
    }
    return line;
}

inline Prompts build_prompt(std::span<const ActionSegment> segments, std::span<const std::string> taxonomy,
                            double fps, const PromptTemplates& templates = {}) {
    if (segments.empty()) throw StageError("build_prompt: no segments");
    if (!(fps > 0.0)) throw ConfigError("build_prompt: fps must be > 0");
    std::string tax;
    for (const auto& name : taxonomy) tax += "- " + name + "\n";
    if (!tax.empty()) tax.pop_back();
    std::string lines;
    for (const auto& s : segments) {
        if (!lines.empty()) lines += "\n";
        lines += format_segment_line(s, fps);
    }
    return {replace_all(templates.system, "{taxonomy}", tax), replace_all(templates.runtime, "{segments}", lines)};
}

// --- caption -------------------------------------------------------------------

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

struct Caption {
    std::string text;
    llm::ChatExchange exchange;
};

inline Caption generate_caption(const Prompts& prompts, const llm::LlmClient& client) {
    llm::ChatExchange ex = client.complete(prompts.system, prompts.runtime);
    std::string text = trim(ex.response);
    if (text.empty()) throw ExternalError("LLM returned an empty completion", ex.attempts);
    return {std::move(text), std::move(ex)};
}

inline nlohmann::json segments_json(std::span<const ActionSegment> segments) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : segments) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : s.candidates) cands.push_back({{"action", c.action}, {"p", c.p}});
        out.push_back({{"start", s.start},
                       {"end", s.end},
                       {"action", s.action},
                       {"confidence", s.mean_prob},
                       {"candidates", cands}});
    }
    return out;
}

/// One captions.jsonl line.
inline nlohmann::json caption_record(const std::string& source_id, const Caption& caption,
                                     std::span<const ActionSegment> segments, const Prompts& prompts) {
    return {{"source_id", source_id},
            {"caption", caption.text},
            {"segments", segments_json(segments)},
            {"prompt_sha256", prompts.sha256()}};
}

} // namespace llambda::caption
