#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "llambda/action_capture.hpp"
#include "llambda/error.hpp"
#include "llambda/frame.hpp"
#include "llambda/frame_filter.hpp"
#include "llambda/labeler/train.hpp"
#include "llambda/pipeline/config.hpp"
#include "llambda/pipeline/synthetic.hpp"

namespace llambda::pipeline {

struct SegmentCrops {
    Interval segment;
    FrameStream crops;
    std::vector<std::size_t> frame_indices; // into the source stream
};

/// Tracks and crops the person in every retained segment. Segments in
/// which no coherent sub-track survives produce no entry.
inline std::vector<SegmentCrops> capture_segments(const FrameStream& stream, std::span<const Interval> segments,
                                                  const CaptureConfig& cfg, const Detector* detector = nullptr) {
    cfg.validate();
    std::vector<SegmentCrops> out;
    for (const Interval& seg : segments) {
        if (seg.end > stream.size() || seg.start >= seg.end) throw StageError("capture: segment outside the stream");
        FrameStream sub;
        sub.source_id = stream.source_id;
        sub.frames.assign(stream.frames.begin() + static_cast<std::ptrdiff_t>(seg.start),
                          stream.frames.begin() + static_cast<std::ptrdiff_t>(seg.end));
        // default detector: blob detection against the segment's own median background
        std::optional<BlobDetector> blob;
        if (!detector) blob.emplace(median_background(sub.frames, cfg.background_frames), cfg.threshold);
        const Detector& det = detector ? *detector : static_cast<const Detector&>(*blob);
        const BoxTrack track = detect_track(sub.frames, seg.start, det, cfg.coherence);
        if (track.subtracks.empty()) continue;
        CropResult crops = crop_track(sub, track, cfg.crop);
        SegmentCrops sc{seg, std::move(crops.crops), {}};
        for (std::size_t i : crops.source_indices) sc.frame_indices.push_back(seg.start + i);
        out.push_back(std::move(sc));
    }
    return out;
}

/// Crops of every motion clip that survive filtering and capture, labeled
/// with the clip's class.
inline std::vector<labeler::Sample> labeled_crops(const synth::SyntheticDataset& ds, const FilterConfig& filter = {},
                                                  const CaptureConfig& capture = {}) {
    std::vector<labeler::Sample> out;
    for (const auto& clip : ds.clips) {
        if (!clip.label) continue;
        const auto segments = filter_stream(clip.stream, filter).segments;
        for (const auto& sc : capture_segments(clip.stream, segments, capture)) {
            for (const auto& f : sc.crops.frames) out.push_back({f.image, clip.label});
        }
    }
    return out;
}

} // namespace llambda::pipeline
