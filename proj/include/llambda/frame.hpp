#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llambda/error.hpp"
#include "llambda/image.hpp"

namespace llambda {

enum class Modality { depth, thermal, infrared, synthetic };

inline std::string_view to_string(Modality m) {
    switch (m) {
    case Modality::depth: return "depth";
    case Modality::thermal: return "thermal";
    case Modality::infrared: return "infrared";
    case Modality::synthetic: return "synthetic";
    }
    return "synthetic";
}

inline Modality parse_modality(std::string_view s) {
    if (s == "depth") return Modality::depth;
    if (s == "thermal") return Modality::thermal;
    if (s == "infrared") return Modality::infrared;
    if (s == "synthetic") return Modality::synthetic;
    throw ConfigError("unknown modality '" + std::string(s) + "'");
}

inline constexpr std::size_t kMinFrameSide = 8;

/// One normalized grayscale frame. `maxval` is the stored integer range
/// (255 or 65535) used when the frame is written back to PGM.
struct Frame {
    Image image;
    std::uint64_t timestamp_ms = 0;
    Modality modality = Modality::synthetic;
    std::uint32_t maxval = 65535;

    std::size_t width() const noexcept { return image.width(); }
    std::size_t height() const noexcept { return image.height(); }

    friend bool operator==(const Frame&, const Frame&) = default;
};

inline void validate_frame(const Frame& f) {
    if (f.width() < kMinFrameSide || f.height() < kMinFrameSide) {
        throw StageError("frame smaller than 8x8");
    }
    if (f.maxval == 0 || f.maxval > 65535) throw StageError("frame maxval out of range");
    for (double v : f.image.pixels()) {
        if (!(v >= 0.0 && v <= 1.0)) throw StageError("frame intensity outside [0,1]");
    }
}

/// Ordered frames from one source. Timestamps strictly increase and all
/// frames share size and modality.
struct FrameStream {
    std::string source_id;
    std::vector<Frame> frames;

    std::size_t size() const noexcept { return frames.size(); }
    bool empty() const noexcept { return frames.empty(); }

    friend bool operator==(const FrameStream&, const FrameStream&) = default;
};

inline void validate_stream(const FrameStream& s) {
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
        const Frame& f = s.frames[i];
        validate_frame(f);
        if (i == 0) continue;
        const Frame& prev = s.frames[i - 1];
        if (!f.image.same_shape(prev.image)) throw StageError("frame dimension mismatch");
        if (f.modality != prev.modality) throw StageError("frame modality mismatch");
        if (f.timestamp_ms <= prev.timestamp_ms) throw StageError("non-monotone timestamps");
    }
}

/// Half-open index interval [start, end).
struct Interval {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// A stream segment with a class label.
struct LabeledClip {
    FrameStream frames;
    std::size_t label = 0;
};

} // namespace llambda
