#pragma once

// Deterministic synthetic low-resolution data: a bright "person" blob over a
// textured static background with per-frame sensor noise.
//
// Each action class pairs a motion pattern with a posture (blob shape), so
// classes are separable both over time and within a single cropped frame.
// Noise clips contain isolated step changes (stuck sensor patches) and
// static clips contain sensor noise only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/frame.hpp"
#include "llambda/random.hpp"
#include "llambda/stream_io.hpp"

namespace llambda::synth {

enum class Motion { translating, oscillating, expanding, stationary };
enum class Posture { disk, ring, cross, square };
enum class ClipKind { motion, noise, still };

inline std::string_view to_string(ClipKind k) {
    switch (k) {
    case ClipKind::motion: return "motion";
    case ClipKind::noise: return "noise";
    case ClipKind::still: return "static";
    }
    return "motion";
}

inline ClipKind parse_clip_kind(std::string_view s) {
    if (s == "motion") return ClipKind::motion;
    if (s == "noise") return ClipKind::noise;
    if (s == "static") return ClipKind::still;
    throw IoError("unknown clip kind '" + std::string(s) + "'");
}

struct ClassPattern {
    std::string name;
    Motion motion;
    Posture posture;
};

/// Class i of a synthetic dataset. Names come from the 16-action depth
/// testbed taxonomy so prompts read naturally.
inline const std::vector<ClassPattern>& class_patterns() {
    static const std::vector<ClassPattern> patterns = {
        {"Walking", Motion::translating, Posture::disk},
        {"Exercising", Motion::oscillating, Posture::ring},
        {"Transitioning (Sit/Stand)", Motion::expanding, Posture::cross},
        {"Sitting", Motion::stationary, Posture::square},
    };
    return patterns;
}

struct SyntheticSpec {
    std::size_t width = 32;
    std::size_t height = 32;
    std::size_t frames_per_clip = 20;
    std::size_t num_classes = 3;
    std::size_t clips_per_class = 20;
    std::size_t noise_clips = 20;
    std::size_t static_clips = 20;
    double blob_amplitude = 0.6;
    double sensor_noise = 0.002;
    double spike_amplitude = 0.5;
    std::size_t spike_patch = 8;
    std::uint64_t frame_period_ms = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 3 || num_classes > class_patterns().size()) {
            throw ConfigError("synthetic spec needs 3 or 4 classes");
        }
        if (width < 32 || height < 32) throw ConfigError("synthetic frames must be at least 32x32");
        if (frames_per_clip < 8) throw ConfigError("synthetic clips need at least 8 frames");
    }
};

/// Blob placement in one frame: center and size parameter (radius).
struct BlobPose {
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
};

struct SyntheticClip {
    FrameStream stream;
    ClipKind kind = ClipKind::motion;
    std::optional<std::size_t> label;
    std::vector<BlobPose> poses;   // motion clips only
    double vx = 0.0, vy = 0.0;     // translating clips: per-frame velocity
    std::vector<std::size_t> spike_frames; // noise clips: first frame after each step
};

struct SyntheticDataset {
    std::vector<std::string> taxonomy;
    std::vector<SyntheticClip> clips;
};

// --- rendering -----------------------------------------------------------------

inline double soft_step(double v) { return std::clamp(v + 0.5, 0.0, 1.0); }

/// Shape coverage in [0,1] at offset (dx, dy) from the blob center.
inline double posture_mask(Posture posture, double dx, double dy, double radius) {
    const double r = std::hypot(dx, dy);
    switch (posture) {
    case Posture::disk: return soft_step(radius - r);
    case Posture::ring: return soft_step(radius - r) * soft_step(r - 0.5 * radius);
    case Posture::cross: {
        const double t = 0.3 * radius;
        const double h = soft_step(radius - std::abs(dx)) * soft_step(t - std::abs(dy));
        const double v = soft_step(radius - std::abs(dy)) * soft_step(t - std::abs(dx));
        return std::max(h, v);
    }
    case Posture::square: return soft_step(radius - std::abs(dx)) * soft_step(radius - std::abs(dy));
    }
    return 0.0;
}

inline Image make_background(std::size_t w, std::size_t h, Rng& rng) {
    Image bg(w, h);
    const double fx = rng.uniform(0.1, 0.3), fy = rng.uniform(0.1, 0.3), phase = rng.uniform(0.0, 6.28);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            bg.at(x, y) = 0.2 + 0.04 * std::sin(fx * x + fy * y + phase) + 0.02 * rng.uniform();
        }
    }
    return bg;
}

inline void add_blob(Image& img, Posture posture, const BlobPose& pose, double amplitude) {
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) {
            const double m = posture_mask(posture, x + 0.5 - pose.cx, y + 0.5 - pose.cy, pose.radius);
            if (m > 0.0) img.at(x, y) += amplitude * m;
        }
    }
}

inline Frame finish_frame(Image img, std::size_t index, const SyntheticSpec& spec, Rng& rng) {
    for (double& v : img.pixels()) v = std::clamp(v + rng.normal(0.0, spec.sensor_noise), 0.0, 1.0);
    Frame f{std::move(img), index * spec.frame_period_ms, Modality::synthetic, 65535};
    quantize(f);
    return f;
}

/// Poses of a motion clip; every pose keeps the blob inside the frame.
inline std::vector<BlobPose> motion_poses(Motion motion, std::size_t n, double w, double h, Rng& rng, double& vx,
                                          double& vy) {
    std::vector<BlobPose> poses(n);
    const double radius = 7.0;
    const double lo_x = radius + 1.0, hi_x = w - radius - 1.0;
    const double lo_y = radius + 1.0, hi_y = h - radius - 1.0;
    switch (motion) {
    case Motion::translating: {
        const double span = static_cast<double>(n - 1);
        const double speed = rng.uniform(0.8, 1.0);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        vx = speed * std::cos(angle);
        vy = speed * std::sin(angle);
        // start so that the whole path stays inside the frame
        const double x0 = std::clamp(w / 2 - vx * span / 2, lo_x, hi_x);
        const double y0 = std::clamp(h / 2 - vy * span / 2, lo_y, hi_y);
        vx = std::clamp(x0 + vx * span, lo_x, hi_x) - x0;
        vy = std::clamp(y0 + vy * span, lo_y, hi_y) - y0;
        vx /= span;
        vy /= span;
        for (std::size_t t = 0; t < n; ++t) poses[t] = {x0 + vx * t, y0 + vy * t, radius};
        break;
    }
    case Motion::oscillating: {
        const double amp = 7.0, period = rng.uniform(10.0, 14.0), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double cy = rng.uniform(lo_y + 2.0, hi_y - 2.0);
        for (std::size_t t = 0; t < n; ++t) {
            poses[t] = {w / 2 + amp * std::sin(2.0 * std::numbers::pi * t / period + phase), cy, radius - 1.0};
        }
        break;
    }
    case Motion::expanding: {
        const double r0 = 4.0, r1 = 9.0;
        const double dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const double x0 = w / 2 - dir * 6.0, y0 = rng.uniform(h / 2 - 3.0, h / 2 + 3.0);
        const double span = static_cast<double>(n - 1);
        for (std::size_t t = 0; t < n; ++t) {
            const double f = static_cast<double>(t) / span;
            poses[t] = {x0 + dir * 12.0 * f, y0, r0 + (r1 - r0) * f};
        }
        break;
    }
    case Motion::stationary: {
        const double cx = rng.uniform(lo_x, hi_x), cy = rng.uniform(lo_y, hi_y);
        for (auto& p : poses) p = {cx, cy, radius - 1.0};
        break;
    }
    }
    return poses;
}

inline SyntheticClip make_motion_clip(const SyntheticSpec& spec, std::size_t label, std::size_t clip_id, Rng& rng) {
    const ClassPattern& pattern = class_patterns()[label];
    SyntheticClip clip;
    clip.kind = ClipKind::motion;
    clip.label = label;
    clip.stream.source_id = "clip_" + std::to_string(clip_id);
    const Image bg = make_background(spec.width, spec.height, rng);
    clip.poses = motion_poses(pattern.motion, spec.frames_per_clip, static_cast<double>(spec.width),
                              static_cast<double>(spec.height), rng, clip.vx, clip.vy);
    for (std::size_t t = 0; t < spec.frames_per_clip; ++t) {
        Image img = bg;
        add_blob(img, pattern.posture, clip.poses[t], spec.blob_amplitude);
        clip.stream.frames.push_back(finish_frame(std::move(img), t, spec, rng));
    }
    return clip;
}

/// Adds a persistent step (a stuck patch) to `img` for frames >= step.
inline void add_patch(Image& img, std::size_t px, std::size_t py, std::size_t size, double delta) {
    for (std::size_t y = py; y < std::min(img.height(), py + size); ++y) {
        for (std::size_t x = px; x < std::min(img.width(), px + size); ++x) img.at(x, y) += delta;
    }
}

/// Noise clip: static scene with one isolated step change per `window`
/// frames at most, so no window of that size sees two of them.
inline SyntheticClip make_noise_clip(const SyntheticSpec& spec, std::size_t clip_id, Rng& rng,
                                     std::size_t window = 8) {
    SyntheticClip clip;
    clip.kind = ClipKind::noise;
    clip.stream.source_id = "clip_" + std::to_string(clip_id);
    Image scene = make_background(spec.width, spec.height, rng);
    const std::size_t n = spec.frames_per_clip;
    std::size_t next = 1 + rng.uniform_index(std::min<std::size_t>(window, n - 1));
    for (std::size_t t = 0; t < n; ++t) {
        if (t == next) {
            const std::size_t px = rng.uniform_index(spec.width - spec.spike_patch + 1);
            const std::size_t py = rng.uniform_index(spec.height - spec.spike_patch + 1);
            add_patch(scene, px, py, spec.spike_patch, spec.spike_amplitude);
            clip.spike_frames.push_back(t);
            next = t + window + rng.uniform_index(window);
        }
        clip.stream.frames.push_back(finish_frame(scene, t, spec, rng));
    }
    return clip;
}

inline SyntheticClip make_static_clip(const SyntheticSpec& spec, std::size_t clip_id, Rng& rng) {
    SyntheticClip clip;
    clip.kind = ClipKind::still;
    clip.stream.source_id = "clip_" + std::to_string(clip_id);
    const Image scene = make_background(spec.width, spec.height, rng);
    for (std::size_t t = 0; t < spec.frames_per_clip; ++t) {
        clip.stream.frames.push_back(finish_frame(scene, t, spec, rng));
    }
    return clip;
}

inline SyntheticDataset generate(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticDataset ds;
    for (std::size_t c = 0; c < spec.num_classes; ++c) ds.taxonomy.push_back(class_patterns()[c].name);
    std::size_t id = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < spec.clips_per_class; ++k, ++id) {
            Rng rng(derive_seed(spec.seed, 0x5EED, id));
            ds.clips.push_back(make_motion_clip(spec, c, id, rng));
        }
    }
    for (std::size_t k = 0; k < spec.noise_clips; ++k, ++id) {
        Rng rng(derive_seed(spec.seed, 0x5EED, id));
        ds.clips.push_back(make_noise_clip(spec, id, rng));
    }
    for (std::size_t k = 0; k < spec.static_clips; ++k, ++id) {
        Rng rng(derive_seed(spec.seed, 0x5EED, id));
        ds.clips.push_back(make_static_clip(spec, id, rng));
    }
    return ds;
}

/// Dataset directory: labels.json plus one frame container per clip under
/// clips/.
///   labels.json = {"taxonomy": [...], "fps": f, "clips": [{"dir", "kind", "label"}]}
inline void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir, double fps = 10.0) {
    nlohmann::json clips = nlohmann::json::array();
    for (const auto& clip : ds.clips) {
        const std::string rel = "clips/" + clip.stream.source_id;
        save_stream(clip.stream, dir / rel);
        nlohmann::json entry = {{"dir", rel}, {"kind", std::string(to_string(clip.kind))}};
        entry["label"] = clip.label ? nlohmann::json(*clip.label) : nlohmann::json(nullptr);
        clips.push_back(std::move(entry));
    }
    detail::write_json(dir / "labels.json", {{"taxonomy", ds.taxonomy}, {"fps", fps}, {"clips", clips}});
}

struct DatasetEntry {
    std::filesystem::path dir;
    std::string rel;
    ClipKind kind = ClipKind::motion;
    std::optional<std::size_t> label;
};

struct DatasetIndex {
    std::vector<std::string> taxonomy;
    double fps = 10.0;
    std::vector<DatasetEntry> clips;
};

inline DatasetIndex read_dataset_index(const std::filesystem::path& dir) {
    const auto path = dir / "labels.json";
    if (!std::filesystem::exists(path)) throw IoError("dataset has no labels.json: " + dir.string());
    const auto j = detail::read_json(path);
    DatasetIndex idx;
    try {
        idx.taxonomy = j.value("taxonomy", std::vector<std::string>{});
        idx.fps = j.value("fps", 10.0);
        for (const auto& c : j.at("clips")) {
            DatasetEntry e;
            e.rel = c.at("dir").get<std::string>();
            e.dir = dir / e.rel;
            e.kind = parse_clip_kind(c.value("kind", std::string("motion")));
            if (c.contains("label") && !c["label"].is_null()) e.label = c["label"].get<std::size_t>();
            idx.clips.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid labels.json: " + std::string(e.what()));
    }
    return idx;
}

// --- filter benchmark windows ------------------------------------------------------

enum class WindowKind { motion, noise, still };

/// One w-frame window for the filter benchmark.
///  motion: a person-sized disk moving with geometrically decaying speed
///          (factor 0.93 per frame, so the last step is > 0.6 of the first);
///  noise:  one stuck-patch step at a random position, sensor noise elsewhere;
///  still:  sensor noise only.
inline FrameStream make_benchmark_window(WindowKind kind, std::size_t w, const SyntheticSpec& spec, Rng& rng) {
    FrameStream s;
    s.source_id = "bench";
    const Image bg = make_background(spec.width, spec.height, rng);
    const double radius = 7.0;
    const double speed0 = rng.uniform(1.8, 2.4);
    const double angle = rng.uniform(-0.4, 0.4);
    const std::size_t step_at = 1 + rng.uniform_index(w - 1);
    const std::size_t px = rng.uniform_index(spec.width - spec.spike_patch + 1);
    const std::size_t py = rng.uniform_index(spec.height - spec.spike_patch + 1);
    double cx = radius + 1.0, cy = static_cast<double>(spec.height) / 2;
    double speed = speed0;
    for (std::size_t t = 0; t < w; ++t) {
        Image img = bg;
        switch (kind) {
        case WindowKind::motion:
            add_blob(img, Posture::disk, {cx, cy, radius}, spec.blob_amplitude);
            cx += speed * std::cos(angle);
            cy += speed * std::sin(angle);
            speed *= 0.93;
            break;
        case WindowKind::noise:
            if (t >= step_at) add_patch(img, px, py, spec.spike_patch, spec.spike_amplitude);
            break;
        case WindowKind::still: break;
        }
        s.frames.push_back(finish_frame(std::move(img), t, spec, rng));
    }
    return s;
}

} // namespace llambda::synth
