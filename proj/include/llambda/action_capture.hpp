#pragma once

// Person localization inside retained segments: a pluggable detector, a
// temporal coherence filter on the detected boxes, and cropping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/frame.hpp"
#include "llambda/image.hpp"
#include "llambda/stream_io.hpp"

namespace llambda {

/// Box in continuous pixel coordinates: (cx, cy) is the center, (w, h) the
/// extent, p the detection confidence.
struct BoundingBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    double p = 0.0;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline void to_json(nlohmann::json& j, const BoundingBox& b) {
    j = {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}, {"p", b.p}};
}

inline void from_json(const nlohmann::json& j, BoundingBox& b) {
    b.cx = j.at("cx").get<double>();
    b.cy = j.at("cy").get<double>();
    b.w = j.at("w").get<double>();
    b.h = j.at("h").get<double>();
    b.p = j.at("p").get<double>();
}

/// Geometric displacement between boxes: Euclidean norm over (cx, cy, w, h).
inline double box_displacement(const BoundingBox& a, const BoundingBox& b) {
    const double dx = a.cx - b.cx;
    const double dy = a.cy - b.cy;
    const double dw = a.w - b.w;
    const double dh = a.h - b.h;
    return std::sqrt(dx * dx + dy * dy + dw * dw + dh * dh);
}

/// Clamps a box to [0,width] x [0,height]. Returns nullopt if nothing is left.
inline std::optional<BoundingBox> clamp_box(const BoundingBox& b, std::size_t width, std::size_t height) {
    const double x0 = std::clamp(b.cx - b.w / 2, 0.0, static_cast<double>(width));
    const double x1 = std::clamp(b.cx + b.w / 2, 0.0, static_cast<double>(width));
    const double y0 = std::clamp(b.cy - b.h / 2, 0.0, static_cast<double>(height));
    const double y1 = std::clamp(b.cy + b.h / 2, 0.0, static_cast<double>(height));
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    return BoundingBox{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, std::clamp(b.p, 0.0, 1.0)};
}

/// Detector port. Implementations return boxes in their own ranking order,
/// most relevant first, each satisfying the BoundingBox invariants.
class Detector {
public:
    virtual ~Detector() = default;
    virtual std::vector<BoundingBox> detect(std::size_t frame_index, const Frame& frame) const = 0;
};

// --- brute-force blob detector ---------------------------------------------

/// Thresholds |frame - background|, labels 4-connected foreground
/// components and returns their tight boxes, largest area first. The
/// confidence is the fill ratio (component area / box area).
inline std::vector<BoundingBox> blob_detect(const Image& frame, const Image& background, double threshold) {
    if (!frame.same_shape(background)) throw StageError("blob_detect: dimension mismatch");
    const std::size_t W = frame.width();
    const std::size_t H = frame.height();
    std::vector<char> fg(W * H, 0);
    for (std::size_t i = 0; i < fg.size(); ++i) {
        fg[i] = std::abs(frame.pixels()[i] - background.pixels()[i]) > threshold ? 1 : 0;
    }

    struct Component {
        std::size_t area, min_x, min_y, max_x, max_y, first;
    };
    std::vector<Component> comps;
    std::vector<char> seen(W * H, 0);
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < fg.size(); ++start) {
        if (!fg[start] || seen[start]) continue;
        Component c{0, W, H, 0, 0, start};
        seen[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t idx = queue.front();
            queue.pop_front();
            const std::size_t x = idx % W;
            const std::size_t y = idx / W;
            ++c.area;
            c.min_x = std::min(c.min_x, x);
            c.max_x = std::max(c.max_x, x);
            c.min_y = std::min(c.min_y, y);
            c.max_y = std::max(c.max_y, y);
            auto visit = [&](std::size_t n) {
                if (fg[n] && !seen[n]) {
                    seen[n] = 1;
                    queue.push_back(n);
                }
            };
            if (x > 0) visit(idx - 1);
            if (x + 1 < W) visit(idx + 1);
            if (y > 0) visit(idx - W);
            if (y + 1 < H) visit(idx + W);
        }
        comps.push_back(c);
    }
    // ties keep raster order of the component's first pixel
    std::stable_sort(comps.begin(), comps.end(),
                     [](const Component& a, const Component& b) { return a.area > b.area; });

    std::vector<BoundingBox> boxes;
    boxes.reserve(comps.size());
    for (const Component& c : comps) {
        const double w = static_cast<double>(c.max_x - c.min_x + 1);
        const double h = static_cast<double>(c.max_y - c.min_y + 1);
        boxes.push_back({static_cast<double>(c.min_x) + w / 2, static_cast<double>(c.min_y) + h / 2, w, h,
                         static_cast<double>(c.area) / (w * h)});
    }
    return boxes;
}

/// Per-pixel temporal median of the first min(15, n) frames.
inline Image median_background(std::span<const Frame> frames, std::size_t max_frames = 15) {
    if (frames.empty()) throw StageError("median_background: no frames");
    const std::size_t n = std::min(max_frames, frames.size());
    const Image& first = frames.front().image;
    Image bg(first.width(), first.height());
    std::vector<double> column(n);
    for (std::size_t i = 0; i < bg.size(); ++i) {
        for (std::size_t k = 0; k < n; ++k) column[k] = frames[k].image.pixels()[i];
        std::sort(column.begin(), column.end());
        bg.pixels()[i] = n % 2 == 1 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
    }
    return bg;
}

class BlobDetector final : public Detector {
public:
    BlobDetector(Image background, double threshold) : background_(std::move(background)), threshold_(threshold) {}

    std::vector<BoundingBox> detect(std::size_t, const Frame& frame) const override {
        return blob_detect(frame.image, background_, threshold_);
    }

private:
    Image background_;
    double threshold_;
};

/// Serves boxes imported from an external detector (boxes.jsonl).
class PrecomputedDetector final : public Detector {
public:
    explicit PrecomputedDetector(std::map<std::size_t, std::vector<BoundingBox>> boxes)
        : boxes_(std::move(boxes)) {}

    std::vector<BoundingBox> detect(std::size_t frame_index, const Frame&) const override {
        const auto it = boxes_.find(frame_index);
        return it == boxes_.end() ? std::vector<BoundingBox>{} : it->second;
    }

private:
    std::map<std::size_t, std::vector<BoundingBox>> boxes_;
};

/// boxes.jsonl: one object per line, {"index": n, "boxes": [{cx,cy,w,h,p}, ...]}.
inline std::map<std::size_t, std::vector<BoundingBox>> parse_boxes_jsonl(std::string_view text) {
    std::map<std::size_t, std::vector<BoundingBox>> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            auto boxes = j.at("boxes").get<std::vector<BoundingBox>>();
            for (const auto& b : boxes) {
                if (!(b.w > 0 && b.h > 0 && b.p >= 0 && b.p <= 1)) {
                    throw StageError("invalid box");
                }
            }
            out[j.at("index").get<std::size_t>()] = std::move(boxes);
        } catch (const std::exception& e) {
            throw IoError("boxes.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::string format_boxes_jsonl(const std::map<std::size_t, std::vector<BoundingBox>>& boxes) {
    std::string out;
    for (const auto& [index, list] : boxes) {
        out += nlohmann::json{{"index", index}, {"boxes", list}}.dump();
        out += '\n';
    }
    return out;
}

// --- coherence ------------------------------------------------------------

struct CoherenceConfig {
    /// Absolute bound in pixels; when unset, 0.2 x frame diagonal.
    std::optional<double> epsilon;
    double min_confidence = 0.25;
    /// Sub-tracks shorter than this are discarded before cropping.
    std::size_t min_track_length = 2;

    double resolve_epsilon(std::size_t width, std::size_t height) const {
        const double eps = epsilon ? *epsilon
                                   : 0.2 * std::hypot(static_cast<double>(width), static_cast<double>(height));
        if (!(eps > 0.0)) throw ConfigError("coherence epsilon must be > 0");
        return eps;
    }
};

struct BoxTrack {
    std::vector<std::optional<BoundingBox>> boxes;
    std::vector<Interval> subtracks;
};

/// First box (in detector ranking) whose confidence reaches min_confidence.
inline std::optional<BoundingBox> select_box(std::span<const BoundingBox> ranked, double min_confidence) {
    for (const auto& b : ranked) {
        if (b.p >= min_confidence) return b;
    }
    return std::nullopt;
}

/// Splits the per-frame boxes into maximal runs in which every adjacent
/// pair moves less than epsilon. Frames without a box end a run.
inline BoxTrack coherence_filter(std::vector<std::optional<BoundingBox>> boxes, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("coherence epsilon must be > 0");
    BoxTrack track;
    track.boxes = std::move(boxes);
    bool open = false;
    std::size_t start = 0;
    for (std::size_t t = 0; t < track.boxes.size(); ++t) {
        const auto& b = track.boxes[t];
        if (!b) {
            if (open) track.subtracks.push_back({start, t});
            open = false;
            continue;
        }
        if (open && box_displacement(*track.boxes[t - 1], *b) >= epsilon) {
            track.subtracks.push_back({start, t});
            start = t;
        } else if (!open) {
            open = true;
            start = t;
        }
    }
    if (open) track.subtracks.push_back({start, track.boxes.size()});
    return track;
}

inline BoxTrack detect_track(std::span<const Frame> frames, std::size_t first_index, const Detector& detector,
                             const CoherenceConfig& config) {
    std::vector<std::optional<BoundingBox>> best;
    best.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto ranked = detector.detect(first_index + i, frames[i]);
        auto b = select_box(ranked, config.min_confidence);
        if (b) b = clamp_box(*b, frames[i].width(), frames[i].height());
        best.push_back(b);
    }
    const double eps =
        frames.empty() ? 1.0 : config.resolve_epsilon(frames.front().width(), frames.front().height());
    BoxTrack track = coherence_filter(std::move(best), eps);
    std::erase_if(track.subtracks,
                  [&](const Interval& iv) { return iv.length() < config.min_track_length; });
    return track;
}

// --- cropping ---------------------------------------------------------------

struct CropSize {
    std::size_t height = 32;
    std::size_t width = 32;
};

inline constexpr double kCropMargin = 0.10;

/// Crop region for a box: extent grown by 10%, then clamped to the frame.
inline Region crop_region(const BoundingBox& b, std::size_t width, std::size_t height) {
    const double w = b.w * (1.0 + kCropMargin);
    const double h = b.h * (1.0 + kCropMargin);
    const double x0 = std::clamp(b.cx - w / 2, 0.0, static_cast<double>(width));
    const double x1 = std::clamp(b.cx + w / 2, 0.0, static_cast<double>(width));
    const double y0 = std::clamp(b.cy - h / 2, 0.0, static_cast<double>(height));
    const double y1 = std::clamp(b.cy + h / 2, 0.0, static_cast<double>(height));
    return {x0, y0, x1 - x0, y1 - y0};
}

inline Image crop_box(const Image& img, const BoundingBox& b, CropSize size) {
    const Region r = crop_region(b, img.width(), img.height());
    if (!(r.width > 0 && r.height > 0)) throw StageError("crop_box: empty region");
    return resample_region(img, r, size.width, size.height);
}

struct CropResult {
    FrameStream crops;
    std::vector<std::size_t> source_indices;
};

/// Crops every frame of every sub-track. `stream` indices are relative to
/// the track (track.boxes[i] belongs to stream.frames[i]).
inline CropResult crop_track(const FrameStream& stream, const BoxTrack& track, CropSize size = {}) {
    if (track.boxes.size() != stream.size()) throw StageError("crop_track: track/stream length mismatch");
    CropResult out;
    out.crops.source_id = stream.source_id;
    for (const Interval& iv : track.subtracks) {
        if (iv.end > stream.size() || iv.start >= iv.end) throw StageError("crop_track: invalid track interval");
        for (std::size_t t = iv.start; t < iv.end; ++t) {
            if (!track.boxes[t]) throw StageError("crop_track: sub-track frame without a box");
            const Frame& src = stream.frames[t];
            Frame f;
            f.image = crop_box(src.image, *track.boxes[t], size);
            f.timestamp_ms = src.timestamp_ms;
            f.modality = src.modality;
            f.maxval = src.maxval;
            out.crops.frames.push_back(std::move(f));
            out.source_indices.push_back(t);
        }
    }
    if (out.crops.empty()) throw StageError("crop_track: empty track");
    return out;
}

} // namespace llambda
