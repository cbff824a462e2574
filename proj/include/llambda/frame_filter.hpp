#pragma once

// Window-based sensitivity filtering.
//
// A window of w frames yields w-1 consecutive differences d_i. Each
// difference is significant when d_i > sigma * max(d). A window whose
// significant count reaches N shows sustained motion (a person moving
// through the scene) as opposed to an isolated spike (sensor noise), and is
// retained when its mean difference also clears the activity floor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "llambda/error.hpp"
#include "llambda/frame.hpp"

namespace llambda {

struct FilterConfig {
    std::size_t window_size = 8;
    double sigma = 0.5;
    std::size_t min_significant = 2;
    double activity_floor = 0.005;
    /// Literal polarity: windows reaching min_significant are dropped.
    bool invert_rule = false;

    void validate() const {
        if (window_size < 3) throw ConfigError("filter window_size must be >= 3");
        if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("filter sigma must lie in (0,1)");
        if (min_significant < 1 || min_significant > window_size - 1) {
            throw ConfigError("filter min_significant must lie in [1, window_size-1]");
        }
        if (!(activity_floor >= 0.0)) throw ConfigError("filter activity_floor must be >= 0");
    }
};

struct DiffWindow {
    std::size_t start = 0;
    std::vector<double> diffs;
    double d_max = 0.0;
    std::vector<int> scores;
    std::size_t decision_sum = 0;
    double mean_diff = 0.0;
    bool retained = false;
};

struct RetainedSegments {
    std::vector<Interval> segments;
    std::vector<DiffWindow> windows;
};

/// Mean absolute per-pixel difference.
inline double pixel_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw StageError("pixel_diff: dimension mismatch");
    if (a.empty()) return 0.0;
    const auto pa = a.pixels();
    const auto pb = b.pixels();
    double sum = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) sum += std::abs(pa[i] - pb[i]);
    return sum / static_cast<double>(pa.size());
}

inline double pixel_diff(const Frame& a, const Frame& b) { return pixel_diff(a.image, b.image); }

/// Scores a window from its precomputed differences.
inline DiffWindow score_diffs(std::span<const double> diffs, double sigma) {
    DiffWindow w;
    w.diffs.assign(diffs.begin(), diffs.end());
    w.d_max = diffs.empty() ? 0.0 : *std::max_element(diffs.begin(), diffs.end());
    w.scores.assign(diffs.size(), 0);
    if (w.d_max > 0.0) {
        const double threshold = sigma * w.d_max;
        for (std::size_t i = 0; i < diffs.size(); ++i) {
            w.scores[i] = diffs[i] > threshold ? 1 : 0;
        }
    }
    w.decision_sum = static_cast<std::size_t>(std::accumulate(w.scores.begin(), w.scores.end(), 0));
    w.mean_diff = diffs.empty() ? 0.0
                                : std::accumulate(diffs.begin(), diffs.end(), 0.0) /
                                      static_cast<double>(diffs.size());
    return w;
}

inline bool window_retained(const DiffWindow& w, const FilterConfig& config) {
    if (w.mean_diff < config.activity_floor) return false;
    const bool sustained = w.decision_sum >= config.min_significant;
    return config.invert_rule ? !sustained : sustained;
}

inline DiffWindow score_window(std::span<const Frame> window, const FilterConfig& config) {
    config.validate();
    if (window.size() != config.window_size) throw ConfigError("score_window: expected exactly w frames");
    std::vector<double> diffs(window.size() - 1);
    for (std::size_t i = 0; i + 1 < window.size(); ++i) diffs[i] = pixel_diff(window[i + 1], window[i]);
    DiffWindow w = score_diffs(diffs, config.sigma);
    w.retained = window_retained(w, config);
    return w;
}

/// Unions half-open intervals that overlap or touch. Input need not be sorted.
inline std::vector<Interval> merge_intervals(std::vector<Interval> in) {
    std::sort(in.begin(), in.end(), [](const Interval& a, const Interval& b) {
        return a.start < b.start || (a.start == b.start && a.end < b.end);
    });
    std::vector<Interval> out;
    for (const Interval& iv : in) {
        if (!out.empty() && iv.start <= out.back().end) {
            out.back().end = std::max(out.back().end, iv.end);
        } else {
            out.push_back(iv);
        }
    }
    return out;
}

/// Slides a w-frame window with stride 1 and returns the merged retained
/// windows.
inline RetainedSegments filter_stream(const FrameStream& stream, const FilterConfig& config) {
    config.validate();
    const std::size_t n = stream.size();
    const std::size_t w = config.window_size;
    if (n < w) throw StageError("filter_stream: stream shorter than the window");

    std::vector<double> diffs(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) diffs[i] = pixel_diff(stream.frames[i + 1], stream.frames[i]);

    RetainedSegments out;
    std::vector<Interval> kept;
    for (std::size_t t = 0; t + w <= n; ++t) {
        DiffWindow win = score_diffs(std::span<const double>(diffs).subspan(t, w - 1), config.sigma);
        win.start = t;
        win.retained = window_retained(win, config);
        if (win.retained) kept.push_back({t, t + w});
        out.windows.push_back(std::move(win));
    }
    out.segments = merge_intervals(std::move(kept));
    return out;
}

} // namespace llambda
