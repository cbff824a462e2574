#pragma once

// In-process federated training of the labeler: Dirichlet non-IID client
// splits and FedAvg aggregation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "llambda/error.hpp"
#include "llambda/labeler/network.hpp"
#include "llambda/labeler/train.hpp"
#include "llambda/random.hpp"

namespace llambda::fed {

struct ClientPartition {
    std::size_t client_id = 0;
    std::vector<std::size_t> indices;

    std::size_t size() const noexcept { return indices.size(); }
};

inline constexpr int kPartitionRetries = 100;

/// Splits sample indices across clients; each class's samples are divided
/// according to proportions drawn from Dirichlet(alpha). Redraws (bounded)
/// until every client has at least one sample.
inline std::vector<ClientPartition> dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_clients,
                                                        double alpha, std::uint64_t seed) {
    if (num_clients < 1) throw ConfigError("dirichlet_partition: need at least one client");
    if (!(alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be > 0");
    if (labels.size() < num_clients) throw StageError("dirichlet_partition: fewer samples than clients");

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    for (int attempt = 0; attempt < kPartitionRetries; ++attempt) {
        Rng rng(derive_seed(seed, 0xD1C0, static_cast<std::uint64_t>(attempt)));
        std::vector<ClientPartition> parts(num_clients);
        for (std::size_t k = 0; k < num_clients; ++k) parts[k].client_id = k;

        for (const auto& [cls, members] : by_class) {
            std::vector<std::size_t> idx = members;
            rng.shuffle(std::span<std::size_t>(idx));
            std::vector<double> q(num_clients);
            double sum = 0.0;
            for (double& v : q) {
                v = rng.gamma(alpha);
                sum += v;
            }
            // cumulative boundaries; the last client absorbs rounding
            double cum = 0.0;
            std::size_t begin = 0;
            for (std::size_t k = 0; k < num_clients; ++k) {
                cum += q[k];
                const std::size_t end =
                    k + 1 == num_clients
                        ? idx.size()
                        : std::min(idx.size(), static_cast<std::size_t>(std::llround(cum / sum * idx.size())));
                for (std::size_t t = begin; t < std::max(begin, end); ++t) parts[k].indices.push_back(idx[t]);
                begin = std::max(begin, end);
            }
        }
        const bool ok = std::all_of(parts.begin(), parts.end(), [](const auto& p) { return !p.indices.empty(); });
        if (!ok) continue;
        for (auto& p : parts) std::sort(p.indices.begin(), p.indices.end());
        return parts;
    }
    throw StageError("dirichlet_partition: could not give every client a sample after " +
                     std::to_string(kPartitionRetries) + " draws");
}

/// Size-weighted mean sum_i (n_i / sum_j n_j) w_i, elementwise.
///
/// Evaluated as w_0 + sum_i c_i (w_i - w_0) in client-index order, so
/// identical inputs return w_0 exactly, then clamped to the elementwise
/// range of the inputs to absorb rounding.
inline std::vector<double> fedavg(std::span<const std::vector<double>> weights, std::span<const std::size_t> sizes) {
    if (weights.empty()) throw StageError("fedavg: no client weights");
    if (sizes.size() != weights.size()) throw StageError("fedavg: weights/sizes count mismatch");
    const std::size_t dim = weights[0].size();
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].size() != dim) throw StageError("fedavg: dimension mismatch");
        if (sizes[i] == 0) throw StageError("fedavg: client with zero samples");
        total += static_cast<double>(sizes[i]);
    }
    std::vector<double> out = weights[0];
    for (std::size_t i = 1; i < weights.size(); ++i) {
        const double c = static_cast<double>(sizes[i]) / total;
        for (std::size_t k = 0; k < dim; ++k) out[k] += c * (weights[i][k] - weights[0][k]);
    }
    for (std::size_t k = 0; k < dim; ++k) {
        double lo = weights[0][k], hi = weights[0][k];
        for (std::size_t i = 1; i < weights.size(); ++i) {
            lo = std::min(lo, weights[i][k]);
            hi = std::max(hi, weights[i][k]);
        }
        out[k] = std::clamp(out[k], lo, hi);
    }
    return out;
}

struct ClientTiming {
    std::size_t round = 0;
    std::size_t client = 0;
    double compute_ms = 0.0;
    double comm_ms = 0.0;
    double wait_ms = 0.0;
};

struct FedConfig {
    std::size_t rounds = 20;
    std::size_t local_epochs = 1;
    /// Simulated uplink/downlink bandwidth for the communication estimate.
    double bandwidth_mbps = 10.0;
    bool parallel_clients = false;
};

struct FedResult {
    labeler::EmbeddingNetwork model;
    std::vector<ClientTiming> timings;
};

using RoundCallback = std::function<void(std::size_t round, const labeler::EmbeddingNetwork&)>;

/// Each round broadcasts the global weights, trains every client locally for
/// local_epochs (epoch randomness keyed by the global epoch index), and
/// replaces the global weights with their FedAvg.
inline FedResult run_rounds(std::span<const labeler::Sample> dataset, std::span<const ClientPartition> partitions,
                            std::size_t num_classes, const labeler::ContrastiveConfig& cfg, const FedConfig& fed,
                            std::uint64_t seed, const RoundCallback& on_round = {}) {
    cfg.validate();
    if (partitions.empty()) throw ConfigError("run_rounds: no clients");
    std::vector<std::vector<labeler::Sample>> client_data(partitions.size());
    std::vector<std::size_t> sizes(partitions.size());
    for (std::size_t c = 0; c < partitions.size(); ++c) {
        if (partitions[c].indices.empty()) throw StageError("run_rounds: empty client partition");
        for (std::size_t i : partitions[c].indices) {
            if (i >= dataset.size()) throw StageError("run_rounds: partition index out of range");
            client_data[c].push_back(dataset[i]);
        }
        sizes[c] = client_data[c].size();
    }

    FedResult out{labeler::EmbeddingNetwork::initialized(num_classes, seed), {}};
    const double bytes = static_cast<double>(out.model.param_count()) * 8.0;
    const double comm_ms = 2.0 * bytes * 8.0 / (fed.bandwidth_mbps * 1e6) * 1e3;

    for (std::size_t r = 0; r < fed.rounds; ++r) {
        std::vector<std::vector<double>> local(partitions.size());
        std::vector<double> compute_ms(partitions.size());

        auto run_client = [&](std::size_t c) {
            const auto t0 = std::chrono::steady_clock::now();
            labeler::EmbeddingNetwork net = out.model;
            try {
                labeler::train_epochs(net, client_data[c], cfg, seed, r * fed.local_epochs, fed.local_epochs);
            } catch (const StageError& e) {
                throw StageError("client " + std::to_string(c) + " round " + std::to_string(r) + ": " + e.what());
            }
            local[c].assign(net.params().begin(), net.params().end());
            compute_ms[c] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        };
        if (fed.parallel_clients) {
            std::vector<std::future<void>> jobs;
            for (std::size_t c = 0; c < partitions.size(); ++c) jobs.push_back(std::async(std::launch::async, run_client, c));
            for (auto& j : jobs) j.get();
        } else {
            for (std::size_t c = 0; c < partitions.size(); ++c) run_client(c);
        }

        const std::vector<double> global = fedavg(local, sizes);
        out.model.set_params(global);
        if (!out.model.finite()) throw StageError("round " + std::to_string(r) + ": aggregated weights not finite");

        const double slowest = *std::max_element(compute_ms.begin(), compute_ms.end()) + comm_ms;
        for (std::size_t c = 0; c < partitions.size(); ++c) {
            out.timings.push_back({r, partitions[c].client_id, compute_ms[c], comm_ms, slowest - compute_ms[c] - comm_ms});
        }
        if (on_round) on_round(r, out.model);
    }
    return out;
}

inline std::string timings_csv(std::span<const ClientTiming> timings) {
    std::string out = "round,client,compute_ms,comm_ms,wait_ms\n";
    char buf[160];
    for (const auto& t : timings) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.3f,%.3f,%.3f\n", t.round, t.client, t.compute_ms, t.comm_ms,
                      t.wait_ms);
        out += buf;
    }
    return out;
}

} // namespace llambda::fed
