#pragma once

// Semantic-weighted NT-Xent loss with analytic gradients.
//
// For N anchors z_i with positives z_i+, cosine similarities
// s_ij = <u_i, u_j>/tau (u = z/|z|) and per-negative weights w_ij:
//
//   L_C = -(1/N) sum_i log( exp(s_i+) / sum_{j != i} w_ij exp(s_ij) )
//
// Negatives of anchor i are the other anchors. With standard_denominator the
// positive term exp(s_i+) is added to the denominator. Anchors whose
// denominator is empty (all weights zero) carry no term and are excluded
// from the mean.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "llambda/error.hpp"

namespace llambda::labeler {

using Embedding = std::vector<double>;

struct NtXentOptions {
    double tau = 0.5;
    double same_class_negative_weight = 0.0;
    bool standard_denominator = false;
};

struct NtXentResult {
    double loss = 0.0;
    std::vector<Embedding> grad_anchors;
    std::vector<Embedding> grad_positives;
    std::size_t contributing = 0;
};

inline double negative_weight(const std::optional<std::size_t>& a, const std::optional<std::size_t>& b,
                              double same_class_weight) {
    return (a && b && *a == *b) ? same_class_weight : 1.0;
}

namespace detail {

struct Normalized {
    std::vector<Embedding> unit;
    std::vector<double> norm;
};

inline Normalized normalize_all(std::span<const Embedding> zs) {
    Normalized out;
    out.unit.reserve(zs.size());
    out.norm.reserve(zs.size());
    for (const Embedding& z : zs) {
        double sq = 0.0;
        for (double v : z) sq += v * v;
        const double n = std::sqrt(sq);
        if (!(n > 0.0)) throw StageError("ntxent_loss: zero-norm embedding");
        Embedding u(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) u[k] = z[k] / n;
        out.unit.push_back(std::move(u));
        out.norm.push_back(n);
    }
    return out;
}

inline double dot(const Embedding& a, const Embedding& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

/// Maps a gradient w.r.t. u = z/|z| back to z.
inline Embedding through_normalization(const Embedding& g, const Embedding& u, double norm) {
    const double proj = dot(g, u);
    Embedding out(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) out[k] = (g[k] - u[k] * proj) / norm;
    return out;
}

} // namespace detail

inline NtXentResult ntxent_loss(std::span<const Embedding> anchors, std::span<const Embedding> positives,
                                std::span<const std::optional<std::size_t>> labels, const NtXentOptions& opt) {
    const std::size_t n = anchors.size();
    if (n < 2) throw StageError("ntxent_loss: batch needs at least two pairs");
    if (positives.size() != n) throw StageError("ntxent_loss: anchors/positives size mismatch");
    if (!labels.empty() && labels.size() != n) throw StageError("ntxent_loss: labels size mismatch");
    if (!(opt.tau > 0.0)) throw ConfigError("ntxent_loss: tau must be > 0");
    const std::size_t dim = anchors[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        if (anchors[i].size() != dim || positives[i].size() != dim) {
            throw StageError("ntxent_loss: embedding dimension mismatch");
        }
    }

    const auto a = detail::normalize_all(anchors);
    const auto p = detail::normalize_all(positives);
    auto label = [&](std::size_t i) { return labels.empty() ? std::optional<std::size_t>{} : labels[i]; };

    // gradients w.r.t. the unit vectors first
    std::vector<Embedding> ga(n, Embedding(dim, 0.0));
    std::vector<Embedding> gp(n, Embedding(dim, 0.0));
    std::vector<double> s(n);
    std::vector<double> weight(n);
    double total = 0.0;
    std::size_t contributing = 0;

    for (std::size_t i = 0; i < n; ++i) {
        const double s_pos = detail::dot(a.unit[i], p.unit[i]) / opt.tau;
        double m = opt.standard_denominator ? s_pos : -std::numeric_limits<double>::infinity();
        bool any = opt.standard_denominator;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            weight[j] = negative_weight(label(i), label(j), opt.same_class_negative_weight);
            s[j] = detail::dot(a.unit[i], a.unit[j]) / opt.tau;
            if (weight[j] > 0.0) {
                m = std::max(m, s[j]);
                any = true;
            }
        }
        if (!any) continue;

        double denom = opt.standard_denominator ? std::exp(s_pos - m) : 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && weight[j] > 0.0) denom += weight[j] * std::exp(s[j] - m);
        }
        total += -s_pos + m + std::log(denom);
        ++contributing;

        // d l_i / d s_pos = -1 (+ softmax share of the positive term)
        const double pos_share = opt.standard_denominator ? std::exp(s_pos - m) / denom : 0.0;
        const double c_pos = (-1.0 + pos_share) / opt.tau;
        for (std::size_t k = 0; k < dim; ++k) {
            ga[i][k] += c_pos * p.unit[i][k];
            gp[i][k] += c_pos * a.unit[i][k];
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || weight[j] <= 0.0) continue;
            const double c = weight[j] * std::exp(s[j] - m) / denom / opt.tau;
            for (std::size_t k = 0; k < dim; ++k) {
                ga[i][k] += c * a.unit[j][k];
                ga[j][k] += c * a.unit[i][k];
            }
        }
    }

    NtXentResult out;
    out.contributing = contributing;
    out.grad_anchors.assign(n, Embedding(dim, 0.0));
    out.grad_positives.assign(n, Embedding(dim, 0.0));
    if (contributing == 0) return out;
    const double scale = 1.0 / static_cast<double>(contributing);
    out.loss = total * scale;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            ga[i][k] *= scale;
            gp[i][k] *= scale;
        }
        out.grad_anchors[i] = detail::through_normalization(ga[i], a.unit[i], a.norm[i]);
        out.grad_positives[i] = detail::through_normalization(gp[i], p.unit[i], p.norm[i]);
    }
    return out;
}

} // namespace llambda::labeler
