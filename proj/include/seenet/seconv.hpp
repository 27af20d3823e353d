#pragma once

// SEConv: intra-time relational spatial aggregation followed by inter-time
// spatially evolving propagation, stacked in blocks.
//
// The free functions below (spatial_gate, rs_agg_pattern, ...) evaluate one
// node at a time and follow the model definition term by term. SeConvModel::forward
// computes the same quantities for all nodes at once with gathers and
// scatters; tests hold the two against each other.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seenet/autodiff.hpp"
#include "seenet/distance.hpp"
#include "seenet/graph.hpp"
#include "seenet/optim.hpp"
#include "seenet/rng.hpp"
#include "seenet/sampling.hpp"
#include "seenet/second_order.hpp"

namespace seenet {

/// Which pair's distance enters the spatial gate score.
enum class GateDistance { TwoHop, FirstHop };
/// Divisor of the pattern mean: every ordered pattern, or only those with at least one path at the node.
enum class CombineDivisor { AllPatterns, NonEmptyPatterns };
/// Divisor of the window fusion: number of included segments, or window span (t+1) - (t-1) = 2.
enum class FuseDivisor { IncludedSegments, WindowSpan };
enum class Activation { None, ReLU, Tanh };

struct SeConvConfig {
    std::size_t dim = 64;
    std::size_t blocks = 2;
    std::size_t neighbors_k = 5;
    bool use_rs_agg = true;
    bool use_se_prop = true;
    bool use_context = true;
    /// Replaces both stages with a first-order mean aggregation per segment.
    bool plain_gcn = false;
    GateDistance gate_distance = GateDistance::TwoHop;
    CombineDivisor combine = CombineDivisor::AllPatterns;
    FuseDivisor fuse = FuseDivisor::IncludedSegments;
    Activation between_blocks = Activation::None;
    /// Standard deviation of the input embedding table at initialisation.
    double input_scale = 0.35;
    /// Multiplier on the Glorot range of every propagation-path weight.
    double weight_gain = 1.0;
};

inline std::string to_string(GateDistance g) { return g == GateDistance::TwoHop ? "two-hop" : "first-hop"; }
inline std::string to_string(CombineDivisor c) { return c == CombineDivisor::AllPatterns ? "all" : "nonempty"; }
inline std::string to_string(FuseDivisor f) { return f == FuseDivisor::IncludedSegments ? "included" : "span"; }
inline std::string to_string(Activation a) {
    return a == Activation::None ? "none" : (a == Activation::ReLU ? "relu" : "tanh");
}

inline ad::Var activate(const ad::Var& x, Activation a) {
    switch (a) {
        case Activation::ReLU: return ad::relu(x);
        case Activation::Tanh: return ad::tanh(x);
        default: return x;
    }
}

// ---------------------------------------------------------------------------
// Parameter names

namespace pname {

inline std::string block_time(std::size_t block, Segment t) {
    return "b" + std::to_string(block) + ".t" + std::to_string(t);
}
inline std::string path(std::size_t block, Segment t, RelationPattern p, const char* what) {
    return block_time(block, t) + ".p" + std::to_string(p.first) + "_" + std::to_string(p.second) + "." + what;
}
inline std::string per_time(std::size_t block, Segment t, const char* what) { return block_time(block, t) + "." + what; }

inline constexpr const char* kInput = "input.embedding";
inline constexpr const char* kDistance = "ade.embedding";

}  // namespace pname

/// Registers every SEConv parameter for the configured variant. Removed components get no entries.
inline void init_seconv_params(ParamStore& store, const SeConvConfig& cfg, std::size_t num_nodes,
                               std::size_t num_relations, std::size_t num_segments, std::size_t num_bins, Rng& rng) {
    const std::size_t d = cfg.dim;
    auto weight = [&](std::size_t rows, std::size_t cols) {
        Tensor w = glorot(rows, cols, rng);
        for (double& v : w.values()) v *= cfg.weight_gain;
        return w;
    };
    store.add(pname::kInput, normal_tensor({num_nodes, d}, cfg.input_scale, rng));
    if (cfg.plain_gcn) {
        for (std::size_t b = 0; b < cfg.blocks; ++b)
            for (Segment t = 0; t < num_segments; ++t) store.add(pname::per_time(b, t, "gcn"), weight(d, d));
        return;
    }
    store.add(pname::kDistance, normal_tensor({num_bins, d}, 1.0, rng));
    for (std::size_t b = 0; b < cfg.blocks; ++b)
        for (Segment t = 0; t < num_segments; ++t) {
            if (cfg.use_rs_agg)
                for (std::size_t pi = 0; pi < num_relations * num_relations; ++pi) {
                    const RelationPattern p = pattern_at(pi, num_relations);
                    store.add(pname::path(b, t, p, "path"), weight(d, d));
                    store.add(pname::path(b, t, p, "gate"), normal_tensor({d}, 1.0 / std::sqrt(double(d)), rng));
                    store.add(pname::path(b, t, p, "spatial"), glorot(d, 2 * d, rng));
                    store.add(pname::path(b, t, p, "relational"), glorot(d, 2 * d, rng));
                    store.add(pname::path(b, t, p, "distance"), glorot(d, d, rng));
                }
            if (cfg.use_se_prop) {
                store.add(pname::per_time(b, t, "fuse"), weight(d, d));
                store.add(pname::per_time(b, t, "distance"), glorot(d, d, rng));
                store.add(pname::per_time(b, t, "prop"), weight(d, cfg.use_context ? 2 * d : d));
            }
        }
}

// ---------------------------------------------------------------------------
// Bound weights

struct PathWeights {
    ad::Var path, gate, spatial, relational, distance;
};

struct TimeWeights {
    ad::Var fuse, distance, prop, gcn;
};

/// Parameters placed on one tape, indexed [block][segment] (and [pattern] for paths).
struct SeConvWeights {
    ad::Var input;
    ad::Var distance_table;
    std::vector<std::vector<std::vector<PathWeights>>> paths;
    std::vector<std::vector<TimeWeights>> times;
};

inline SeConvWeights bind_seconv(const BoundParams& bound, const SeConvConfig& cfg, std::size_t num_relations,
                                 std::size_t num_segments) {
    SeConvWeights w;
    w.input = lookup(bound, pname::kInput);
    if (!cfg.plain_gcn) w.distance_table = lookup(bound, pname::kDistance);
    const std::size_t np = num_relations * num_relations;
    w.paths.assign(cfg.blocks, std::vector<std::vector<PathWeights>>(num_segments, std::vector<PathWeights>(np)));
    w.times.assign(cfg.blocks, std::vector<TimeWeights>(num_segments));
    for (std::size_t b = 0; b < cfg.blocks; ++b)
        for (Segment t = 0; t < num_segments; ++t) {
            TimeWeights& tw = w.times[b][t];
            if (cfg.plain_gcn) {
                tw.gcn = lookup(bound, pname::per_time(b, t, "gcn"));
                continue;
            }
            if (cfg.use_rs_agg)
                for (std::size_t pi = 0; pi < np; ++pi) {
                    const RelationPattern p = pattern_at(pi, num_relations);
                    PathWeights& pw = w.paths[b][t][pi];
                    pw.path = lookup(bound, pname::path(b, t, p, "path"));
                    pw.gate = lookup(bound, pname::path(b, t, p, "gate"));
                    pw.spatial = lookup(bound, pname::path(b, t, p, "spatial"));
                    pw.relational = lookup(bound, pname::path(b, t, p, "relational"));
                    pw.distance = lookup(bound, pname::path(b, t, p, "distance"));
                }
            if (cfg.use_se_prop) {
                tw.fuse = lookup(bound, pname::per_time(b, t, "fuse"));
                tw.distance = lookup(bound, pname::per_time(b, t, "distance"));
                tw.prop = lookup(bound, pname::per_time(b, t, "prop"));
            }
        }
    return w;
}

inline ad::Var zeros_like_row(ad::Tape& tape, std::size_t d) { return tape.constant(Tensor(Shape{d})); }

// ---------------------------------------------------------------------------
// Per-node reference operations

/// Gate in (0,1) for a 2-hop path: sigmoid(a . (S_spa [G dist (+) W h_k] + S_rel [W h_j (+) W h_k])).
inline ad::Var spatial_gate(const PathWeights& w, const ad::Var& h_j, const ad::Var& h_k, const ad::Var& dist) {
    const ad::Var wj = ad::linear(h_j, w.path);
    const ad::Var wk = ad::linear(h_k, w.path);
    const ad::Var s_spa = ad::linear(ad::concat(ad::linear(dist, w.distance), wk), w.spatial);
    const ad::Var s_rel = ad::linear(ad::concat(wj, wk), w.relational);
    return ad::sigmoid(ad::sum(ad::hadamard(w.gate, ad::add(s_spa, s_rel))));
}

/// Path-specific representation of node i: sum over (j, k) of W h_j + gate * W h_k; zero for no pairs.
/// `node_states` is N x d; the gate distance is d(i,k), or d(i,j) with GateDistance::FirstHop.
inline ad::Var rs_agg_pattern(const PathWeights& w, const ad::Var& node_states, const ad::Var& distance_table,
                              const DistanceEncoder& enc, NodeId i, const std::vector<std::pair<NodeId, NodeId>>& pairs,
                              GateDistance gd = GateDistance::TwoHop) {
    ad::Tape& tape = node_states.tape();
    const std::size_t d = node_states.value().cols();
    if (pairs.empty()) return zeros_like_row(tape, d);
    ad::Var acc;
    for (const auto& [j, k] : pairs) {
        const ad::Var h_j = ad::embedding(node_states, j);
        const ad::Var h_k = ad::embedding(node_states, k);
        const ad::Var dist = enc.embed(distance_table, i, gd == GateDistance::TwoHop ? k : j);
        const ad::Var gate = spatial_gate(w, h_j, h_k, dist);
        const ad::Var term = ad::add(ad::linear(h_j, w.path), ad::scale_by(ad::linear(h_k, w.path), gate));
        acc = acc.valid() ? ad::add(acc, term) : term;
    }
    return acc;
}

/// Mean of the per-pattern outputs. With NonEmptyPatterns only patterns flagged in `nonempty` count.
inline ad::Var rs_agg_combine(std::span<const ad::Var> outputs, const std::vector<bool>& nonempty = {},
                              CombineDivisor div = CombineDivisor::AllPatterns) {
    if (div == CombineDivisor::AllPatterns) return ad::mean_pool(outputs);
    std::size_t n = 0;
    ad::Var acc;
    for (std::size_t p = 0; p < outputs.size(); ++p) {
        if (!nonempty.at(p)) continue;
        ++n;
        acc = acc.valid() ? ad::add(acc, outputs[p]) : outputs[p];
    }
    if (n == 0) return zeros_like_row(outputs.front().tape(), outputs.front().value().size());
    return ad::scale(acc, 1.0 / double(n));
}

/// Window fusion of intra states: W_t applied to each state, averaged.
inline ad::Var inter_time_fuse(const ad::Var& fuse_weight, std::span<const ad::Var> window_states,
                               FuseDivisor div = FuseDivisor::IncludedSegments) {
    if (window_states.empty()) throw ContractError("inter_time_fuse: empty window");
    ad::Var acc;
    for (const ad::Var& h : window_states) {
        const ad::Var term = ad::linear(h, fuse_weight);
        acc = acc.valid() ? ad::add(acc, term) : term;
    }
    const double divisor = div == FuseDivisor::IncludedSegments ? double(window_states.size())
                                                                 : double(std::max<std::size_t>(window_states.size() - 1, 1));
    return ad::scale(acc, 1.0 / divisor);
}

/// Context of edge (i, j): mean over sampled k of (G dist(j,k)) * fused_k. Repeated samples count repeatedly.
inline ad::Var evolving_context(const ad::Var& distance_weight, const ad::Var& distance_table, const DistanceEncoder& enc,
                                const ad::Var& fused, NodeId j, const std::vector<NodeId>& sampled) {
    const std::size_t d = fused.value().cols();
    if (sampled.empty()) return zeros_like_row(fused.tape(), d);
    std::vector<ad::Var> terms;
    for (NodeId k : sampled)
        terms.push_back(ad::hadamard(ad::linear(enc.embed(distance_table, j, k), distance_weight), ad::embedding(fused, k)));
    return ad::mean_pool(terms);
}

/// Neighbor samples for the edges of one propagation step, keyed by (i, j).
using ContextSamples = std::map<std::pair<NodeId, NodeId>, std::vector<NodeId>>;

/// Inter-time output of node i at t: sum over window segments tau and neighbors j of
/// W_prop [(G dist(i,j) * fused_j^(tau)) (+) context(i,j)]. `fused` holds one N x d state per segment.
inline ad::Var se_prop(const TimeWeights& w, const ad::Var& distance_table, const DistanceEncoder& enc,
                       const DynamicLocationGraph& g, std::span<const ad::Var> fused, Segment t, NodeId i,
                       const ContextSamples& contexts, bool use_context = true) {
    ad::Tape& tape = distance_table.tape();
    const std::size_t d = fused.front().value().cols();
    ad::Var acc;
    for (Segment tau : segment_window(t, g.num_segments()))
        for (const Neighbor& nb : g.neighbors(i, tau)) {
            const NodeId j = nb.node;
            ad::Var local = ad::hadamard(ad::linear(enc.embed(distance_table, i, j), w.distance), ad::embedding(fused[tau], j));
            if (use_context) {
                auto it = contexts.find({i, j});
                const std::vector<NodeId> none;
                const auto& ks = it == contexts.end() ? none : it->second;
                local = ad::concat(local, evolving_context(w.distance, distance_table, enc, fused[t], j, ks));
            }
            const ad::Var term = ad::linear(local, w.prop);
            acc = acc.valid() ? ad::add(acc, term) : term;
        }
    return acc.valid() ? acc : zeros_like_row(tape, d);
}

// ---------------------------------------------------------------------------
// Batched model

/// Per-segment node states at each stage of every block.
struct NodeStates {
    std::vector<std::vector<ad::Var>> input;  // [block][t]
    std::vector<std::vector<ad::Var>> intra;  // [block][t]
    std::vector<std::vector<ad::Var>> fused;  // [block][t]; empty when propagation is off
    std::vector<std::vector<ad::Var>> output; // [block][t], before the between-block activation
    std::vector<ad::Var> z;                   // [t], final output
};

/// Sampled context neighbors, [block][t][edge pair index] aligned with SeConvModel::edge_pairs(t).
using ContextDraws = std::vector<std::vector<std::vector<std::vector<NodeId>>>>;

class SeConvModel {
public:
    SeConvModel(const SeConvConfig& cfg, const DynamicLocationGraph& g, const SecondOrderIndex& index,
                const DistanceEncoder& enc)
        : cfg_(cfg), g_(&g), enc_(&enc) {
        if (cfg.dim == 0 || cfg.blocks == 0) throw ConfigError("seconv: dim and blocks must be positive");
        if (cfg.use_context && cfg.neighbors_k == 0) throw ConfigError("seconv: K must be >= 1");
        const std::size_t T = g.num_segments(), N = g.num_nodes(), np = g.num_relations() * g.num_relations();
        paths_.assign(T, std::vector<PathIndex>(np));
        props_.assign(T, {});
        gcn_.assign(T, {});
        for (Segment t = 0; t < T; ++t) {
            for (std::size_t pi = 0; pi < np; ++pi) {
                PathIndex& px = paths_[t][pi];
                px.count.assign(N, 0);
                for (const PathTriple& tr : index.triples(t, pattern_at(pi, g.num_relations()))) {
                    px.i.push_back(tr.i);
                    px.j.push_back(tr.j);
                    px.k.push_back(tr.k);
                    px.bin.push_back(enc.bin(tr.i, cfg.gate_distance == GateDistance::TwoHop ? tr.k : tr.j));
                    ++px.count[tr.i];
                }
            }
            PropIndex& pr = props_[t];
            std::map<std::pair<NodeId, NodeId>, std::size_t> pair_id;
            for (Segment tau : segment_window(t, T))
                for (NodeId i = 0; i < N; ++i)
                    for (const Neighbor& nb : g.neighbors(i, tau)) pair_id.emplace(std::make_pair(i, nb.node), 0);
            for (auto& [key, id] : pair_id) {
                id = pr.pairs.size();
                pr.pairs.push_back(key);
            }
            for (Segment tau : segment_window(t, T))
                for (NodeId i = 0; i < N; ++i)
                    for (const Neighbor& nb : g.neighbors(i, tau)) {
                        pr.i.push_back(i);
                        pr.row.push_back(tau * N + nb.node);
                        pr.bin.push_back(enc.bin(i, nb.node));
                        pr.pair.push_back(pair_id.at({i, nb.node}));
                    }
            GcnIndex& gc = gcn_[t];
            for (NodeId i = 0; i < N; ++i) {
                gc.dst.push_back(i);
                gc.src.push_back(i);
                for (const Neighbor& nb : g.neighbors(i, t)) {
                    gc.dst.push_back(i);
                    gc.src.push_back(nb.node);
                }
            }
        }
    }

    const SeConvConfig& config() const noexcept { return cfg_; }
    const DynamicLocationGraph& graph() const noexcept { return *g_; }
    const DistanceEncoder& encoder() const noexcept { return *enc_; }

    /// Distinct (i, j) edges over the window of t, sorted; the context of each is drawn once per forward.
    const std::vector<std::pair<NodeId, NodeId>>& edge_pairs(Segment t) const { return props_.at(t).pairs; }

    ContextDraws draw_contexts(Rng& rng) const {
        const std::size_t T = g_->num_segments();
        ContextDraws draws(cfg_.blocks, std::vector<std::vector<std::vector<NodeId>>>(T));
        if (cfg_.plain_gcn || !cfg_.use_se_prop || !cfg_.use_context) return draws;
        for (std::size_t b = 0; b < cfg_.blocks; ++b)
            for (Segment t = 0; t < T; ++t)
                for (const auto& [i, j] : props_[t].pairs) draws[b][t].push_back(temporal_sample(*g_, i, j, t, cfg_.neighbors_k, rng));
        return draws;
    }

    /// Draws as (i, j) -> samples for one block and segment, the form se_prop takes.
    ContextSamples context_samples(const ContextDraws& draws, std::size_t block, Segment t) const {
        ContextSamples out;
        const auto& pairs = props_.at(t).pairs;
        if (draws.empty() || draws.at(block).at(t).empty()) return out;
        for (std::size_t p = 0; p < pairs.size(); ++p) out[pairs[p]] = draws[block][t][p];
        return out;
    }

    NodeStates forward(const SeConvWeights& w, const ContextDraws& draws) const {
        const std::size_t T = g_->num_segments(), N = g_->num_nodes();
        NodeStates s;
        s.input.assign(cfg_.blocks, std::vector<ad::Var>(T));
        s.intra.assign(cfg_.blocks, std::vector<ad::Var>(T));
        s.fused.assign(cfg_.blocks, {});
        s.output.assign(cfg_.blocks, {});
        std::vector<ad::Var> h(T, w.input);
        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            s.input[b] = h;
            std::vector<ad::Var> out(T);
            if (cfg_.plain_gcn) {
                for (Segment t = 0; t < T; ++t) {
                    const GcnIndex& gc = gcn_[t];
                    out[t] = ad::linear(ad::scatter_mean(ad::gather_rows(h[t], gc.src), gc.dst, N), w.times[b][t].gcn);
                    s.intra[b][t] = out[t];
                }
                s.output[b] = out;
                const bool last = b + 1 == cfg_.blocks;
                for (Segment t = 0; t < T; ++t) h[t] = last ? out[t] : ad::relu(out[t]);
                continue;
            }
            for (Segment t = 0; t < T; ++t) s.intra[b][t] = cfg_.use_rs_agg ? rs_agg(w, b, t, h[t]) : h[t];
            if (!cfg_.use_se_prop) {
                out = s.intra[b];
            } else {
                std::vector<ad::Var> fused(T);
                for (Segment t = 0; t < T; ++t) {
                    std::vector<ad::Var> win;
                    for (Segment tau : segment_window(t, T)) win.push_back(s.intra[b][tau]);
                    fused[t] = inter_time_fuse(w.times[b][t].fuse, win, cfg_.fuse);
                }
                s.fused[b] = fused;
                const ad::Var stacked = ad::stack_rows(fused);
                for (Segment t = 0; t < T; ++t) out[t] = propagate(w, b, t, stacked, fused[t], draws);
            }
            s.output[b] = out;
            const bool last = b + 1 == cfg_.blocks;
            for (Segment t = 0; t < T; ++t) h[t] = last ? out[t] : activate(out[t], cfg_.between_blocks);
        }
        s.z = h;
        return s;
    }

    NodeStates forward(const SeConvWeights& w, Rng& rng) const { return forward(w, draw_contexts(rng)); }

private:
    struct PathIndex {
        ad::Index i, j, k, bin;
        std::vector<std::size_t> count;  // paths per source node
    };
    struct PropIndex {
        std::vector<std::pair<NodeId, NodeId>> pairs;
        ad::Index i, row, bin, pair;
    };
    struct GcnIndex {
        ad::Index dst, src;
    };

    ad::Var rs_agg(const SeConvWeights& w, std::size_t b, Segment t, const ad::Var& h) const {
        ad::Tape& tape = h.tape();
        const std::size_t N = g_->num_nodes(), d = cfg_.dim, np = paths_[t].size();
        std::vector<ad::Var> outs;
        std::vector<double> nonempty(N, 0.0);
        for (std::size_t pi = 0; pi < np; ++pi) {
            const PathIndex& px = paths_[t][pi];
            if (px.i.empty()) {
                outs.push_back(tape.constant(Tensor(Shape{N, d})));
                continue;
            }
            for (NodeId v = 0; v < N; ++v) nonempty[v] += px.count[v] > 0 ? 1.0 : 0.0;
            const PathWeights& pw = w.paths[b][t][pi];
            const ad::Var hw = ad::linear(h, pw.path);
            // Gate scores are linear in each argument, so they reduce to per-node and per-bin scalars.
            const ad::Var u_spa = ad::linear(pw.gate, ad::transpose(pw.spatial));
            const ad::Var u_rel = ad::linear(pw.gate, ad::transpose(pw.relational));
            const ad::Var spa_dist = ad::reshape(ad::slice_cols(u_spa, 0, d), {1, d});
            const ad::Var rel_j = ad::reshape(ad::slice_cols(u_rel, 0, d), {1, d});
            const ad::Var both_k = ad::reshape(ad::add(ad::slice_cols(u_spa, d, 2 * d), ad::slice_cols(u_rel, d, 2 * d)), {1, d});
            const ad::Var bin_score = ad::linear(ad::linear(w.distance_table, pw.distance), spa_dist);  // N_b x 1
            const ad::Var j_score = ad::linear(hw, rel_j);                                              // N x 1
            const ad::Var k_score = ad::linear(hw, both_k);                                             // N x 1
            const ad::Var gate = ad::reshape(
                ad::sigmoid(ad::add(ad::add(ad::gather_rows(bin_score, px.bin), ad::gather_rows(j_score, px.j)),
                                    ad::gather_rows(k_score, px.k))),
                {px.i.size()});
            const ad::Var ones = tape.constant(Tensor(Shape{px.i.size()}, 1.0));
            outs.push_back(ad::add(ad::weighted_gather_scatter(hw, ones, px.j, px.i, N),
                                   ad::weighted_gather_scatter(hw, gate, px.k, px.i, N)));
        }
        ad::Var acc = outs.front();
        for (std::size_t p = 1; p < outs.size(); ++p) acc = ad::add(acc, outs[p]);
        if (cfg_.combine == CombineDivisor::AllPatterns) return ad::scale(acc, 1.0 / double(np));
        for (double& c : nonempty) c = c > 0 ? 1.0 / c : 0.0;
        return ad::row_scale(acc, tape.constant(Tensor::vector(std::move(nonempty))));
    }

    ad::Var propagate(const SeConvWeights& w, std::size_t b, Segment t, const ad::Var& stacked, const ad::Var& fused_t,
                      const ContextDraws& draws) const {
        const std::size_t N = g_->num_nodes();
        const PropIndex& pr = props_[t];
        const TimeWeights& tw = w.times[b][t];
        const ad::Var dist = ad::linear(w.distance_table, tw.distance);  // N_b x d
        const ad::Var local = ad::hadamard_gather_scatter(dist, pr.bin, stacked, pr.row, pr.i, N);
        if (!cfg_.use_context) return ad::linear(local, tw.prop);
        const auto& per_pair = draws.at(b).at(t);
        if (per_pair.size() != pr.pairs.size()) throw ContractError("seconv: context draws do not match the graph");
        // Each pair's context mean is added once per message carrying that pair.
        std::vector<double> uses(pr.pairs.size(), 0.0);
        for (std::size_t p : pr.pair) uses[p] += 1.0;
        ad::Index rows_i, rows_bin, rows_k;
        std::vector<double> coef;
        for (std::size_t p = 0; p < pr.pairs.size(); ++p)
            for (NodeId k : per_pair[p]) {
                rows_i.push_back(pr.pairs[p].first);
                rows_bin.push_back(enc_->bin(pr.pairs[p].second, k));
                rows_k.push_back(k);
                coef.push_back(uses[p] / double(per_pair[p].size()));
            }
        const ad::Var context = ad::hadamard_gather_scatter(dist, rows_bin, fused_t, rows_k, rows_i, N, std::move(coef));
        return ad::linear(ad::concat(local, context), tw.prop);
    }

    SeConvConfig cfg_;
    const DynamicLocationGraph* g_;
    const DistanceEncoder* enc_;
    std::vector<std::vector<PathIndex>> paths_;
    std::vector<PropIndex> props_;
    std::vector<GcnIndex> gcn_;
};

inline double rms(const std::vector<ad::Var>& xs) {
    double sq = 0.0;
    std::size_t n = 0;
    for (const ad::Var& x : xs) {
        for (double v : x.value().values()) sq += v * v;
        n += x.value().size();
    }
    return n ? std::sqrt(sq / double(n)) : 0.0;
}

/// Rescales the propagation weights of each block, in order, so its output keeps the root-mean-square of the
/// input embeddings. The factor is spread evenly over the weight matrices the signal crosses in series.
inline void calibrate_block_gains(ParamStore& store, const SeConvModel& model, const ContextDraws& draws,
                                  std::size_t rounds = 2) {
    const SeConvConfig& cfg = model.config();
    const std::size_t depth = cfg.plain_gcn ? 1 : (cfg.use_rs_agg ? 1 : 0) + (cfg.use_se_prop ? 2 : 0);
    if (depth == 0) return;
    std::vector<const char*> kinds = {".gcn", ".path", ".fuse", ".prop"};
    auto ends_with = [](const std::string& s, const char* suffix) {
        const std::string x(suffix);
        return s.size() >= x.size() && s.compare(s.size() - x.size(), x.size(), x) == 0;
    };
    const std::size_t R = model.graph().num_relations(), T = model.graph().num_segments();
    for (std::size_t b = 0; b < cfg.blocks; ++b)
        for (std::size_t round = 0; round < rounds; ++round) {
            ad::Tape tape;
            const BoundParams bound = store.bind_all(tape);
            const NodeStates st = model.forward(bind_seconv(bound, cfg, R, T), draws);
            const double target = rms(st.input.front()), got = rms(st.output[b]);
            if (!(got > 0) || !(target > 0)) return;
            const double factor = std::pow(target / got, 1.0 / double(depth));
            const std::string prefix = "b" + std::to_string(b) + ".";
            for (auto& [name, e] : store.entries()) {
                if (name.compare(0, prefix.size(), prefix) != 0) continue;
                for (const char* k : kinds)
                    if (ends_with(name, k))
                        for (double& v : e.value.values()) v *= factor;
            }
        }
}

}  // namespace seenet
