#pragma once

// Crop sets on disk: a frame container of 32x32 crops plus crops.json
//   {"source_id": s, "label": n | null, "frame_indices": [...]}
// mapping every crop back to its frame in the source stream.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/frame.hpp"
#include "llambda/frame_filter.hpp"
#include "llambda/pipeline/capture.hpp"
#include "llambda/pipeline/config.hpp"
#include "llambda/pipeline/synthetic.hpp"
#include "llambda/stream_io.hpp"

namespace llambda::pipeline {

struct CropSet {
    std::string source_id;
    std::optional<std::size_t> label;
    FrameStream crops;
    std::vector<std::size_t> frame_indices;
};

inline constexpr const char* kCropIndexFile = "crops.json";

inline void write_crop_set(const CropSet& set, const std::filesystem::path& dir) {
    if (set.crops.size() != set.frame_indices.size()) throw StageError("crop set: crops/frame_indices mismatch");
    save_stream(set.crops, dir);
    nlohmann::json j = {{"source_id", set.source_id}, {"frame_indices", set.frame_indices}};
    j["label"] = set.label ? nlohmann::json(*set.label) : nlohmann::json(nullptr);
    llambda::detail::write_json(dir / kCropIndexFile, j);
}

inline CropSet read_crop_set(const std::filesystem::path& dir) {
    const auto j = llambda::detail::read_json(dir / kCropIndexFile);
    CropSet set;
    set.crops = load_stream(dir);
    try {
        set.source_id = j.at("source_id").get<std::string>();
        set.frame_indices = j.at("frame_indices").get<std::vector<std::size_t>>();
        if (j.contains("label") && !j["label"].is_null()) set.label = j["label"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid " + (dir / kCropIndexFile).string() + ": " + e.what());
    }
    if (set.frame_indices.size() != set.crops.size()) {
        throw IoError((dir / kCropIndexFile).string() + ": frame_indices does not match the crop count");
    }
    return set;
}

/// Crop sets of a dataset directory (labels.json): every clip is filtered
/// and captured, and labeled clips keep their label.
inline std::vector<CropSet> crop_sets_from_dataset(const std::filesystem::path& dir, const FilterConfig& filter,
                                                   const CaptureConfig& capture) {
    std::vector<CropSet> out;
    for (const auto& entry : synth::read_dataset_index(dir).clips) {
        const FrameStream stream = load_stream(entry.dir);
        const auto segments = filter_stream(stream, filter).segments;
        CropSet set{stream.source_id, entry.label, {}, {}};
        set.crops.source_id = stream.source_id;
        for (const auto& sc : capture_segments(stream, segments, capture)) {
            set.crops.frames.insert(set.crops.frames.end(), sc.crops.frames.begin(), sc.crops.frames.end());
            set.frame_indices.insert(set.frame_indices.end(), sc.frame_indices.begin(), sc.frame_indices.end());
        }
        if (!set.crops.empty()) out.push_back(std::move(set));
    }
    return out;
}

/// Accepts a dataset directory, a single crop set, or a directory tree of
/// crop sets (visited in path order).
inline std::vector<CropSet> load_crop_sets(const std::filesystem::path& dir, const FilterConfig& filter = {},
                                           const CaptureConfig& capture = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    if (fs::exists(dir / "labels.json")) return crop_sets_from_dataset(dir, filter, capture);
    if (fs::exists(dir / kCropIndexFile)) return {read_crop_set(dir)};
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() == kCropIndexFile) found.push_back(e.path().parent_path());
    }
    std::sort(found.begin(), found.end());
    if (found.empty()) throw IoError("no crop sets (crops.json) under " + dir.string());
    std::vector<CropSet> out;
    for (const auto& p : found) out.push_back(read_crop_set(p));
    return out;
}

} // namespace llambda::pipeline
