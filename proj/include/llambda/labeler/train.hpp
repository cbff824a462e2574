#pragma once

// Labeler training: L = lambda * L_C + (1 - lambda) * L_CE, plain SGD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "llambda/error.hpp"
#include "llambda/image.hpp"
#include "llambda/labeler/network.hpp"
#include "llambda/labeler/ntxent.hpp"
#include "llambda/random.hpp"

namespace llambda::labeler {

struct AugmentConfig {
    double noise_std = 0.02;
    double hflip_prob = 0.5;
    double crop_scale_min = 0.8;
};

struct ContrastiveConfig {
    double tau = 0.5;
    double lambda = 0.5;
    double same_class_negative_weight = 0.0;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    std::size_t epochs = 50;
    AugmentConfig augmentation;
    bool standard_denominator = false;

    NtXentOptions ntxent() const { return {tau, same_class_negative_weight, standard_denominator}; }

    void validate() const {
        if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(same_class_negative_weight >= 0.0)) throw ConfigError("same_class_negative_weight must be >= 0");
        if (!(augmentation.noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
        if (!(augmentation.hflip_prob >= 0.0 && augmentation.hflip_prob <= 1.0)) {
            throw ConfigError("hflip_prob must lie in [0,1]");
        }
        if (!(augmentation.crop_scale_min > 0.0 && augmentation.crop_scale_min <= 1.0)) {
            throw ConfigError("crop_scale_min must lie in (0,1]");
        }
    }
};

/// A 32x32 crop with an optional class label.
struct Sample {
    Image crop;
    std::optional<std::size_t> label;
};

/// Random horizontal flip, then random crop-and-resize (side fraction in
/// [crop_scale_min, 1]), then additive Gaussian noise clamped to [0,1].
inline Image augment(const Image& crop, const AugmentConfig& cfg, Rng& rng) {
    Image out = rng.bernoulli(cfg.hflip_prob) ? hflip(crop) : crop;

    const double scale = cfg.crop_scale_min >= 1.0 ? 1.0 : rng.uniform(cfg.crop_scale_min, 1.0);
    if (scale < 1.0) {
        const double w = scale * static_cast<double>(out.width());
        const double h = scale * static_cast<double>(out.height());
        const double x0 = rng.uniform() * (static_cast<double>(out.width()) - w);
        const double y0 = rng.uniform() * (static_cast<double>(out.height()) - h);
        out = resample_region(out, Region{x0, y0, w, h}, crop.width(), crop.height());
    }

    if (cfg.noise_std > 0.0) {
        for (double& v : out.pixels()) v = std::clamp(v + rng.normal(0.0, cfg.noise_std), 0.0, 1.0);
    }
    return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

struct BatchLoss {
    double total = 0.0;
    double contrastive = 0.0;
    double cross_entropy = 0.0;
    bool has_contrastive = false;
    bool has_cross_entropy = false;
};

/// Loss of one batch of already-augmented views. Adds d(total)/d(params) to
/// `grad` when it is non-empty. The contrastive term needs at least two
/// pairs; the cross-entropy term averages over labeled anchors only.
inline BatchLoss batch_loss(const EmbeddingNetwork& net, std::span<const Image> anchors,
                            std::span<const Image> positives, std::span<const std::optional<std::size_t>> labels,
                            const ContrastiveConfig& cfg, std::span<double> grad = {}) {
    const std::size_t n = anchors.size();
    const bool use_contrastive = cfg.lambda > 0.0 && n >= 2;
    if (use_contrastive && positives.size() != n) throw StageError("batch_loss: missing positive views");

    std::vector<ForwardCache> fa(n), fp(use_contrastive ? n : 0);
    for (std::size_t i = 0; i < n; ++i) net.forward(anchors[i].pixels(), fa[i]);
    for (std::size_t i = 0; i < fp.size(); ++i) net.forward(positives[i].pixels(), fp[i]);

    BatchLoss out;
    NtXentResult nt;
    if (use_contrastive) {
        std::vector<Embedding> za(n), zp(n);
        for (std::size_t i = 0; i < n; ++i) {
            za[i] = fa[i].embedding;
            zp[i] = fp[i].embedding;
        }
        nt = ntxent_loss(za, zp, labels, cfg.ntxent());
        out.has_contrastive = nt.contributing > 0;
        out.contrastive = nt.loss;
    }

    const std::size_t labeled =
        cfg.lambda < 1.0 ? static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                                  [](const auto& l) { return l.has_value(); }))
                         : 0;
    std::vector<std::vector<double>> d_logits(n);
    if (labeled > 0) {
        out.has_cross_entropy = true;
        const double inv = 1.0 / static_cast<double>(labeled);
        for (std::size_t i = 0; i < n; ++i) {
            if (!labels[i]) continue;
            const std::size_t y = *labels[i];
            if (y >= net.num_classes()) throw StageError("label outside the action taxonomy");
            auto probs = softmax(fa[i].logits);
            // log-softmax directly for accuracy when p_y underflows
            const double m = *std::max_element(fa[i].logits.begin(), fa[i].logits.end());
            double lse = 0.0;
            for (double v : fa[i].logits) lse += std::exp(v - m);
            out.cross_entropy += -(fa[i].logits[y] - m - std::log(lse)) * inv;
            probs[y] -= 1.0;
            for (double& v : probs) v *= (1.0 - cfg.lambda) * inv;
            d_logits[i] = std::move(probs);
        }
    }

    out.total = (out.has_contrastive ? cfg.lambda * out.contrastive : 0.0) +
                (out.has_cross_entropy ? (1.0 - cfg.lambda) * out.cross_entropy : 0.0);

    if (!grad.empty()) {
        std::vector<double> dz(kEmbeddingDim);
        for (std::size_t i = 0; i < n; ++i) {
            std::span<const double> dz_span;
            if (out.has_contrastive) {
                for (std::size_t k = 0; k < kEmbeddingDim; ++k) dz[k] = cfg.lambda * nt.grad_anchors[i][k];
                dz_span = dz;
            }
            if (!dz_span.empty() || !d_logits[i].empty()) net.backward(fa[i], dz_span, d_logits[i], grad);
        }
        if (out.has_contrastive) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < kEmbeddingDim; ++k) dz[k] = cfg.lambda * nt.grad_positives[i][k];
                net.backward(fp[i], dz, {}, grad);
            }
        }
    }
    return out;
}

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&, const EmbeddingNetwork&)>;

/// Runs epochs [first_epoch, first_epoch + epochs). The randomness of epoch e
/// depends only on (seed, e), so training split into consecutive calls is
/// bit-identical to one long call.
inline std::vector<EpochStats> train_epochs(EmbeddingNetwork& net, std::span<const Sample> samples,
                                            const ContrastiveConfig& cfg, std::uint64_t seed,
                                            std::size_t first_epoch, std::size_t epochs,
                                            const EpochCallback& on_epoch = {}) {
    cfg.validate();
    std::vector<EpochStats> stats;
    if (samples.empty()) return stats;
    std::vector<std::size_t> order(samples.size());
    std::vector<double> grad(net.param_count());
    std::vector<Image> va, vp;
    std::vector<std::optional<std::size_t>> labels;

    for (std::size_t e = first_epoch; e < first_epoch + epochs; ++e) {
        Rng rng(derive_seed(seed, 0xE90C, e));
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), b + cfg.batch_size);
            va.clear();
            vp.clear();
            labels.clear();
            for (std::size_t k = b; k < end; ++k) {
                const Sample& s = samples[order[k]];
                va.push_back(augment(s.crop, cfg.augmentation, rng));
                if (cfg.lambda > 0.0) vp.push_back(augment(s.crop, cfg.augmentation, rng));
                labels.push_back(s.label);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            const BatchLoss loss = batch_loss(net, va, vp, labels, cfg, grad);
            if (!std::isfinite(loss.total)) throw StageError("labeler training diverged (non-finite loss)");
            if (!loss.has_contrastive && !loss.has_cross_entropy) continue;
            auto params = net.params();
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grad[i];
            loss_sum += loss.total;
            ++batches;
        }
        if (!net.finite()) throw StageError("labeler training diverged (non-finite weights)");
        EpochStats st{e, batches ? loss_sum / static_cast<double>(batches) : 0.0};
        stats.push_back(st);
        if (on_epoch) on_epoch(st, net);
    }
    return stats;
}

inline void require_all_classes(std::span<const Sample> samples, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const Sample& s : samples) {
        if (!s.label) continue;
        if (*s.label >= num_classes) throw StageError("label outside the action taxonomy");
        ++counts[*s.label];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw StageError("no labeled sample for class " + std::to_string(c));
    }
}

struct TrainResult {
    EmbeddingNetwork model;
    std::vector<EpochStats> history;
};

/// Centralized training from a seeded initialization. Labeled and unlabeled
/// pools are concatenated; the cross-entropy term only sees labeled samples.
inline TrainResult train(std::span<const Sample> labeled, std::span<const Sample> unlabeled, std::size_t num_classes,
                         const ContrastiveConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    for (const Sample& s : labeled) {
        if (!s.label) throw StageError("labeled pool contains an unlabeled sample");
    }
    if (cfg.lambda < 1.0 || !labeled.empty()) require_all_classes(labeled, num_classes);
    std::vector<Sample> pool(labeled.begin(), labeled.end());
    for (const Sample& s : unlabeled) pool.push_back({s.crop, std::nullopt});
    TrainResult out{EmbeddingNetwork::initialized(num_classes, seed), {}};
    out.history = train_epochs(out.model, pool, cfg, seed, 0, cfg.epochs, on_epoch);
    return out;
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Fraction of labeled samples whose argmax logit matches the label.
inline double accuracy(const EmbeddingNetwork& net, std::span<const Sample> samples) {
    std::size_t total = 0, correct = 0;
    ForwardCache cache;
    for (const Sample& s : samples) {
        if (!s.label) continue;
        net.forward(s.crop.pixels(), cache);
        ++total;
        if (argmax(cache.logits) == *s.label) ++correct;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

} // namespace llambda::labeler
