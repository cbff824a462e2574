#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "llambda/image.hpp"
#include "llambda/labeler/network.hpp"
#include "llambda/labeler/train.hpp"

namespace llambda::labeler {

struct ClassProb {
    std::size_t cls = 0;
    double p = 0.0;

    friend bool operator==(const ClassProb&, const ClassProb&) = default;
};

struct PseudoLabelRecord {
    std::size_t frame_index = 0;
    std::vector<double> probs;
    std::vector<ClassProb> topk;
};

/// The k largest entries, descending; equal probabilities keep class order.
inline std::vector<ClassProb> top_k(std::span<const double> probs, std::size_t k) {
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    k = std::min(k, idx.size());
    std::vector<ClassProb> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], probs[idx[i]]});
    return out;
}

inline PseudoLabelRecord record_from_logits(std::size_t frame_index, std::span<const double> logits, std::size_t k) {
    PseudoLabelRecord r;
    r.frame_index = frame_index;
    r.probs = softmax(logits);
    r.topk = top_k(r.probs, k);
    return r;
}

inline PseudoLabelRecord predict(const EmbeddingNetwork& net, const Image& crop, std::size_t frame_index,
                                 std::size_t k) {
    const ForwardCache cache = net.forward(crop);
    return record_from_logits(frame_index, cache.logits, k);
}

} // namespace llambda::labeler
