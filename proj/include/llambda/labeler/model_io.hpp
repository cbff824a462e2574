#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/blob_file.hpp"
#include "llambda/labeler/network.hpp"
#include "llambda/labeler/train.hpp"

namespace llambda::labeler {

inline nlohmann::json to_json(const ContrastiveConfig& c) {
    return {
        {"tau", c.tau},
        {"lambda", c.lambda},
        {"same_class_negative_weight", c.same_class_negative_weight},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"epochs", c.epochs},
        {"standard_denominator", c.standard_denominator},
        {"augmentation",
         {{"noise_std", c.augmentation.noise_std},
          {"hflip_prob", c.augmentation.hflip_prob},
          {"crop_scale_min", c.augmentation.crop_scale_min}}},
    };
}

/// Reads a (possibly partial) config block; absent keys keep their defaults.
inline ContrastiveConfig contrastive_from_json(const nlohmann::json& j, ContrastiveConfig c = {}) {
    c.tau = j.value("tau", c.tau);
    c.lambda = j.value("lambda", c.lambda);
    c.same_class_negative_weight = j.value("same_class_negative_weight", c.same_class_negative_weight);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.standard_denominator = j.value("standard_denominator", c.standard_denominator);
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        c.augmentation.noise_std = a.value("noise_std", c.augmentation.noise_std);
        c.augmentation.hflip_prob = a.value("hflip_prob", c.augmentation.hflip_prob);
        c.augmentation.crop_scale_min = a.value("crop_scale_min", c.augmentation.crop_scale_min);
    }
    return c;
}

struct SavedModel {
    EmbeddingNetwork network;
    std::vector<std::string> taxonomy;
    std::uint64_t seed = 0;
    ContrastiveConfig config;
};

inline void save_model(const std::filesystem::path& path, const SavedModel& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : m.network.layers()) {
        layers.push_back({{"name", l.name}, {"weight", {l.rows, l.cols}}, {"bias", {l.rows}}});
    }
    const nlohmann::json header = {
        {"kind", "labeler"},
        {"layers", layers},
        {"num_classes", m.network.num_classes()},
        {"taxonomy", m.taxonomy},
        {"seed", m.seed},
        {"config", to_json(m.config)},
    };
    write_blob(path, header, m.network.params());
}

inline SavedModel load_model(const std::filesystem::path& path) {
    const BlobFile blob = read_blob(path);
    expect_kind(blob, "labeler");
    SavedModel m;
    try {
        m.network = EmbeddingNetwork(blob.header.at("num_classes").get<std::size_t>());
        m.taxonomy = blob.header.value("taxonomy", std::vector<std::string>{});
        m.seed = blob.header.value("seed", std::uint64_t{0});
        m.config = contrastive_from_json(blob.header.value("config", nlohmann::json::object()));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("invalid labeler header: ") + e.what());
    }
    m.network.set_params(blob.payload);
    return m;
}

} // namespace llambda::labeler
