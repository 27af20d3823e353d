#pragma once

// Self-supervised pretraining objectives: grid-level cross-time contrast and
// relation-persistence classification over consecutive segments.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "seenet/autodiff.hpp"
#include "seenet/graph.hpp"
#include "seenet/grid.hpp"
#include "seenet/log.hpp"
#include "seenet/optim.hpp"
#include "seenet/rng.hpp"

namespace seenet {

enum class LocalStage { Final, Intra };

inline std::string to_string(LocalStage s) { return s == LocalStage::Final ? "final" : "intra"; }

struct SslConfig {
    double lambda_global = 1.0;
    double lambda_local = 1.0;
    std::int64_t d1 = 2;
    std::int64_t d2 = 6;
    double cell_size_m = 1000.0;
    /// Coefficient of the squared-L2 term over all trainable parameters.
    double l2 = 1e-4;
    std::size_t negatives = 5;
    LocalStage local_stage = LocalStage::Final;

    void validate() const {
        if (lambda_global < 0 || lambda_local < 0) throw ConfigError("ssl: loss weights must be >= 0");
        if (d1 >= d2) throw ConfigError("ssl: need d1 < d2");
        if (!(cell_size_m > 0)) throw ConfigError("ssl: cell size must be positive");
        if (l2 < 0) throw ConfigError("ssl: l2 weight must be >= 0");
        if (negatives == 0) throw ConfigError("ssl: need at least one negative per positive");
    }
};

namespace pname {
inline constexpr const char* kDiscriminator = "ssl.global.bilinear";
inline constexpr const char* kLocalHidden = "ssl.local.hidden";
inline constexpr const char* kLocalHiddenBias = "ssl.local.hidden_bias";
inline constexpr const char* kLocalOut = "ssl.local.out";
inline constexpr const char* kLocalOutBias = "ssl.local.out_bias";
}  // namespace pname

/// Discriminator and persistence classifier parameters; a zero weight drops that head entirely.
inline void init_ssl_params(ParamStore& store, const SslConfig& cfg, std::size_t dim, Rng& rng) {
    if (cfg.lambda_global > 0) store.add(pname::kDiscriminator, glorot(dim, dim, rng));
    if (cfg.lambda_local > 0) {
        store.add(pname::kLocalHidden, glorot(dim, 2 * dim, rng));
        store.add(pname::kLocalHiddenBias, Tensor(Shape{dim}));
        store.add(pname::kLocalOut, glorot(1, dim, rng));
        store.add(pname::kLocalOutBias, Tensor(Shape{1}));
    }
}

/// Grid summaries: row c is the mean embedding of the members of dense cell c.
inline ad::Var grid_summary(const ad::Var& z, const GridPartition& grid) {
    ad::Index cell(grid.num_nodes());
    for (NodeId v = 0; v < grid.num_nodes(); ++v) cell[v] = grid.cell_index(v);
    return ad::scatter_mean(z, cell, grid.num_cells());
}

/// Grid-band negatives for every (segment, node), drawn once per evaluation.
using GlobalNegatives = std::vector<std::vector<std::vector<NodeId>>>;

inline GlobalNegatives draw_global_negatives(const GridNegativeSampler& sampler, std::size_t num_nodes,
                                             std::size_t num_segments, std::size_t count, Rng& rng) {
    GlobalNegatives out(num_segments, std::vector<std::vector<NodeId>>(num_nodes));
    for (Segment t = 0; t < num_segments; ++t)
        for (NodeId v = 0; v < num_nodes; ++v) out[t][v] = sampler.sample(v, count, rng);
    return out;
}

/// Negated cross-time contrast: for every t and node i,
/// log D(z_i^(t), s_u(i)^(t-1)) + mean_j log(1 - D(z_j^(t), s_u(i)^(t-1))), D(z, s) = sigmoid(z . M s).
inline ad::Var global_loss(std::span<const ad::Var> z, const GridPartition& grid, const ad::Var& bilinear,
                           const GlobalNegatives& negatives) {
    const std::size_t T = z.size(), N = grid.num_nodes();
    ad::Index cell(N);
    for (NodeId v = 0; v < N; ++v) cell[v] = grid.cell_index(v);
    ad::Var total;
    for (Segment t = 0; t < T; ++t) {
        const ad::Var projected = ad::linear(grid_summary(z[prev_segment(t, T)], grid), bilinear);  // rows M s_u
        const ad::Var target = ad::gather_rows(projected, cell);
        const ad::Var pos = ad::sum(ad::log_sigmoid(ad::row_sum(ad::hadamard(z[t], target))));
        ad::Index neg_node, neg_owner;
        std::vector<double> weight;
        for (NodeId v = 0; v < N; ++v) {
            const auto& js = negatives.at(t).at(v);
            for (NodeId j : js) {
                neg_node.push_back(j);
                neg_owner.push_back(cell[v]);
                weight.push_back(1.0 / double(js.size()));
            }
        }
        ad::Var term = pos;
        if (!neg_node.empty()) {
            const ad::Var logits =
                ad::row_sum(ad::hadamard(ad::gather_rows(z[t], neg_node), ad::gather_rows(projected, neg_owner)));
            const ad::Var w = z[t].tape().constant(Tensor::vector(std::move(weight)));
            term = ad::add(term, ad::sum(ad::hadamard(ad::log_sigmoid(ad::scale(logits, -1.0)), w)));
        }
        total = total.valid() ? ad::add(total, term) : term;
    }
    return ad::scale(total, -1.0);
}

/// Edges (i, j) at t whose pair also carries a relation at t-1, with target 1 when the relation persisted.
struct PersistencePairs {
    std::vector<ad::Index> src, dst;
    std::vector<std::vector<double>> target;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& s : src) n += s.size();
        return n;
    }
};

inline PersistencePairs persistence_pairs(const DynamicLocationGraph& g) {
    const std::size_t T = g.num_segments();
    PersistencePairs p;
    p.src.resize(T);
    p.dst.resize(T);
    p.target.resize(T);
    for (Segment t = 0; t < T; ++t) {
        const Segment prev = prev_segment(t, T);
        for (const RelationalEdge& e : g.edges(t)) {
            const auto& before = g.relations(e.src, e.dst, prev);
            if (before.empty()) continue;
            p.src[t].push_back(e.src);
            p.dst[t].push_back(e.dst);
            p.target[t].push_back(std::find(before.begin(), before.end(), e.relation) != before.end() ? 1.0 : 0.0);
        }
    }
    return p;
}

struct LocalHead {
    ad::Var hidden, hidden_bias, out, out_bias;
};

inline LocalHead bind_local_head(const BoundParams& bound) {
    return {lookup(bound, pname::kLocalHidden), lookup(bound, pname::kLocalHiddenBias), lookup(bound, pname::kLocalOut),
            lookup(bound, pname::kLocalOutBias)};
}

/// Pre-sigmoid output of the persistence classifier on rows of (e^(t) (+) e^(t-1)).
inline ad::Var local_logits(const LocalHead& h, const ad::Var& features) {
    const std::size_t m = features.value().rows();
    auto bias = [m](const ad::Var& b) {
        ad::Index zeros(m, 0);
        return ad::gather_rows(ad::reshape(b, {1, b.value().size()}), zeros);
    };
    const ad::Var hid = ad::relu(ad::add(ad::linear(features, h.hidden), bias(h.hidden_bias)));
    return ad::reshape(ad::add(ad::linear(hid, h.out), bias(h.out_bias)), {m});
}

/// Negated log-likelihood of the persistence targets, summed over pairs. Zero (with a warning) when no pair qualifies.
inline ad::Var local_loss(std::span<const ad::Var> z, const PersistencePairs& pairs, const LocalHead& head) {
    const std::size_t T = z.size();
    ad::Tape& tape = z.front().tape();
    ad::Var total;
    for (Segment t = 0; t < T; ++t) {
        if (pairs.src[t].empty()) continue;
        const Segment prev = prev_segment(t, T);
        auto edge_feat = [&](Segment s) {
            return ad::hadamard(ad::gather_rows(z[s], pairs.src[t]), ad::gather_rows(z[s], pairs.dst[t]));
        };
        const ad::Var logits = local_logits(head, ad::concat(edge_feat(t), edge_feat(prev)));
        std::vector<double> pos = pairs.target[t], neg(pos.size());
        for (std::size_t k = 0; k < pos.size(); ++k) neg[k] = 1.0 - pos[k];
        const ad::Var ll = ad::add(ad::sum(ad::hadamard(ad::log_sigmoid(logits), tape.constant(Tensor::vector(pos)))),
                                   ad::sum(ad::hadamard(ad::log_sigmoid(ad::scale(logits, -1.0)),
                                                        tape.constant(Tensor::vector(neg)))));
        total = total.valid() ? ad::add(total, ll) : ll;
    }
    if (!total.valid()) {
        log::warn("local ssl: no edge has a relation at the previous segment; local loss is zero");
        return tape.constant(Tensor::scalar(0.0));
    }
    return ad::scale(total, -1.0);
}

/// Squared L2 norm summed over the given parameters.
inline ad::Var l2_penalty(const BoundParams& bound) {
    ad::Var acc;
    for (const auto& [_, v] : bound) {
        const ad::Var term = ad::sq_norm(v);
        acc = acc.valid() ? ad::add(acc, term) : term;
    }
    return acc;
}

/// lambda_global * global + lambda_local * local + l2 * ||params||^2. Invalid (absent) terms are skipped.
inline ad::Var joint_ssl_loss(const ad::Var& global, const ad::Var& local, const BoundParams& params,
                              const SslConfig& cfg) {
    ad::Var acc;
    auto add = [&](const ad::Var& v) { acc = acc.valid() ? ad::add(acc, v) : v; };
    if (global.valid() && cfg.lambda_global > 0) add(ad::scale(global, cfg.lambda_global));
    if (local.valid() && cfg.lambda_local > 0) add(ad::scale(local, cfg.lambda_local));
    if (!params.empty()) add(ad::scale(l2_penalty(params), cfg.l2));
    if (!acc.valid()) throw ContractError("joint_ssl_loss: nothing to optimise");
    return acc;
}

}  // namespace seenet
