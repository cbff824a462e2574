#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "llambda/error.hpp"
#include "llambda/image.hpp"
#include "llambda/random.hpp"

namespace llambda::labeler {

inline constexpr std::size_t kInputSide = 32;
inline constexpr std::size_t kInputDim = kInputSide * kInputSide;
inline constexpr std::size_t kHiddenDim = 128;
inline constexpr std::size_t kEmbeddingDim = 64;

/// One affine layer's slice of the flat parameter vector: a rows x cols
/// weight block followed by a rows-long bias.
struct LayerSpec {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    std::size_t offset;

    std::size_t weight_count() const noexcept { return rows * cols; }
    std::size_t bias_offset() const noexcept { return offset + rows * cols; }
    std::size_t end() const noexcept { return bias_offset() + rows; }
};

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
    std::vector<double> input;
    std::vector<double> hidden_pre;
    std::vector<double> hidden;
    std::vector<double> embedding;
    std::vector<double> logits;
};

/// flatten(32x32) -> affine(1024->128) -> ReLU -> affine(128->64) = z,
/// classifier head affine(64->classes) applied to z.
///
/// All parameters live in one flat vector (layer-major, weights row-major,
/// then bias) so that federated averaging and serialization treat the model
/// as a plain weight vector.
class EmbeddingNetwork {
public:
    EmbeddingNetwork() = default;

    explicit EmbeddingNetwork(std::size_t num_classes) : num_classes_(num_classes) {
        if (num_classes < 2) throw ConfigError("labeler needs at least two classes");
        std::size_t offset = 0;
        for (auto [name, rows, cols] : {std::tuple{"embed.0", kHiddenDim, kInputDim},
                                        std::tuple{"embed.1", kEmbeddingDim, kHiddenDim},
                                        std::tuple{"head", num_classes, kEmbeddingDim}}) {
            layers_[layer_count_++] = LayerSpec{name, rows, cols, offset};
            offset += rows * cols + rows;
        }
        params_.assign(offset, 0.0);
    }

    /// He-normal weights, zero biases.
    static EmbeddingNetwork initialized(std::size_t num_classes, std::uint64_t seed) {
        EmbeddingNetwork net(num_classes);
        Rng rng(derive_seed(seed, 0x1417));
        for (const LayerSpec& l : net.layers()) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(l.cols));
            for (std::size_t i = 0; i < l.weight_count(); ++i) net.params_[l.offset + i] = rng.normal(0.0, stddev);
        }
        return net;
    }

    std::size_t num_classes() const noexcept { return num_classes_; }
    std::span<const LayerSpec> layers() const noexcept { return {layers_.data(), layer_count_}; }
    std::span<double> params() noexcept { return params_; }
    std::span<const double> params() const noexcept { return params_; }
    std::size_t param_count() const noexcept { return params_.size(); }

    void set_params(std::span<const double> values) {
        if (values.size() != params_.size()) throw StageError("parameter vector size mismatch");
        std::copy(values.begin(), values.end(), params_.begin());
    }

    bool finite() const {
        return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
    }

    void forward(std::span<const double> input, ForwardCache& cache) const {
        if (input.size() != kInputDim) throw StageError("labeler input must be 32x32");
        cache.input.assign(input.begin(), input.end());
        affine(layers_[0], cache.input, cache.hidden_pre);
        cache.hidden.resize(cache.hidden_pre.size());
        for (std::size_t i = 0; i < cache.hidden.size(); ++i) cache.hidden[i] = std::max(0.0, cache.hidden_pre[i]);
        affine(layers_[1], cache.hidden, cache.embedding);
        affine(layers_[2], cache.embedding, cache.logits);
    }

    ForwardCache forward(const Image& crop) const {
        ForwardCache cache;
        forward(crop.pixels(), cache);
        return cache;
    }

    /// Accumulates parameter gradients into `grad` (same layout as params)
    /// given upstream gradients w.r.t. the embedding and the logits. Either
    /// upstream may be empty.
    void backward(const ForwardCache& cache, std::span<const double> d_embedding, std::span<const double> d_logits,
                  std::span<double> grad) const {
        std::vector<double> dz(kEmbeddingDim, 0.0);
        if (!d_embedding.empty()) std::copy(d_embedding.begin(), d_embedding.end(), dz.begin());
        if (!d_logits.empty()) {
            const LayerSpec& head = layers_[2];
            accumulate_affine(head, cache.embedding, d_logits, grad);
            for (std::size_t r = 0; r < head.rows; ++r) {
                const double g = d_logits[r];
                if (g == 0.0) continue;
                const double* w = &params_[head.offset + r * head.cols];
                for (std::size_t c = 0; c < head.cols; ++c) dz[c] += w[c] * g;
            }
        }
        const LayerSpec& l1 = layers_[1];
        accumulate_affine(l1, cache.hidden, dz, grad);
        std::vector<double> dh(kHiddenDim, 0.0);
        for (std::size_t r = 0; r < l1.rows; ++r) {
            const double g = dz[r];
            if (g == 0.0) continue;
            const double* w = &params_[l1.offset + r * l1.cols];
            for (std::size_t c = 0; c < l1.cols; ++c) dh[c] += w[c] * g;
        }
        for (std::size_t i = 0; i < dh.size(); ++i) {
            if (cache.hidden_pre[i] <= 0.0) dh[i] = 0.0;
        }
        accumulate_affine(layers_[0], cache.input, dh, grad);
    }

    friend bool operator==(const EmbeddingNetwork& a, const EmbeddingNetwork& b) {
        return a.num_classes_ == b.num_classes_ && a.params_ == b.params_;
    }

private:
    void affine(const LayerSpec& l, std::span<const double> in, std::vector<double>& out) const {
        out.resize(l.rows);
        const double* bias = &params_[l.bias_offset()];
        for (std::size_t r = 0; r < l.rows; ++r) {
            const double* w = &params_[l.offset + r * l.cols];
            double acc = bias[r];
            for (std::size_t c = 0; c < l.cols; ++c) acc += w[c] * in[c];
            out[r] = acc;
        }
    }

    static void accumulate_affine(const LayerSpec& l, std::span<const double> in, std::span<const double> d_out,
                                  std::span<double> grad) {
        for (std::size_t r = 0; r < l.rows; ++r) {
            const double g = d_out[r];
            if (g == 0.0) continue;
            double* gw = &grad[l.offset + r * l.cols];
            for (std::size_t c = 0; c < l.cols; ++c) gw[c] += g * in[c];
            grad[l.bias_offset() + r] += g;
        }
    }

    std::size_t num_classes_ = 0;
    std::array<LayerSpec, 3> layers_{};
    std::size_t layer_count_ = 0;
    std::vector<double> params_;
};

} // namespace llambda::labeler
