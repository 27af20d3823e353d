#pragma once

// Relationship prediction: time-specific DistMult scoring, the training
// pipeline (optional self-supervised stage, then supervised fine-tuning with
// best-validation snapshots), ranking evaluation and checkpoint round trips.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "seenet/checkpoint.hpp"
#include "seenet/distance.hpp"
#include "seenet/grid.hpp"
#include "seenet/log.hpp"
#include "seenet/metrics.hpp"
#include "seenet/optim.hpp"
#include "seenet/seconv.hpp"
#include "seenet/second_order.hpp"
#include "seenet/split.hpp"
#include "seenet/ssl.hpp"

namespace seenet {

namespace pname {
inline std::string predictor(Segment t, RelationId r) { return "pred.t" + std::to_string(t) + ".r" + std::to_string(r); }
inline constexpr const char* kBoundaries = "ade.boundaries";
}  // namespace pname

inline void init_predictor_params(ParamStore& store, std::size_t dim, std::size_t num_relations,
                                  std::size_t num_segments, double scale, Rng& rng) {
    for (Segment t = 0; t < num_segments; ++t)
        for (RelationId r = 0; r < num_relations; ++r) store.add(pname::predictor(t, r), normal_tensor({dim}, scale, rng));
}

/// Diagonal relation weights as one (|R| x d) matrix per segment.
inline std::vector<ad::Var> bind_predictor(const BoundParams& bound, std::size_t num_relations, std::size_t num_segments) {
    std::vector<ad::Var> out;
    for (Segment t = 0; t < num_segments; ++t) {
        std::vector<ad::Var> rows;
        for (RelationId r = 0; r < num_relations; ++r) rows.push_back(lookup(bound, pname::predictor(t, r)));
        out.push_back(ad::stack_rows(rows));
    }
    return out;
}

/// sigmoid(z_i . diag(w) . z_j)
inline ad::Var score(const ad::Var& z_i, const ad::Var& z_j, const ad::Var& w) {
    return ad::sigmoid(ad::sum(ad::hadamard(ad::hadamard(z_i, z_j), w)));
}

inline double score_logit(std::span<const double> z_i, std::span<const double> z_j, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) s += z_i[c] * z_j[c] * w[c];
    return s;
}

/// Labelled (i, j, r) triples per segment; label 1 for observed edges, 0 for corrupted ones.
struct LabelledTriples {
    std::vector<ad::Index> src, dst, rel;
    std::vector<std::vector<double>> label;

    explicit LabelledTriples(std::size_t num_segments = 0)
        : src(num_segments), dst(num_segments), rel(num_segments), label(num_segments) {}

    void add(const RelationalEdge& e, double y) {
        src[e.segment].push_back(e.src);
        dst[e.segment].push_back(e.dst);
        rel[e.segment].push_back(e.relation);
        label[e.segment].push_back(y);
    }
};

/// Observed edges as a hash set of (src, dst, relation, segment).
class PositiveSet {
public:
    void add(const RelationalEdge& e) { set_.insert(key(e.src, e.dst, e.relation, e.segment)); }
    void add_all(const std::vector<RelationalEdge>& es) {
        for (const auto& e : es) add(e);
    }
    bool contains(NodeId i, NodeId j, RelationId r, Segment t) const { return set_.count(key(i, j, r, t)) != 0; }

private:
    static std::uint64_t key(NodeId i, NodeId j, RelationId r, Segment t) {
        return (std::uint64_t(i) << 40) ^ (std::uint64_t(j) << 16) ^ (std::uint64_t(r) << 8) ^ std::uint64_t(t);
    }
    std::unordered_set<std::uint64_t> set_;
};

/// Every positive edge plus `count` corrupted destinations drawn uniformly among nodes that are neither the
/// source nor a known positive of (source, relation, segment).
inline LabelledTriples with_negatives(const std::vector<RelationalEdge>& positives, const PositiveSet& known,
                                      std::size_t num_nodes, std::size_t num_segments, std::size_t count, Rng& rng) {
    LabelledTriples out(num_segments);
    for (const RelationalEdge& e : positives) {
        out.add(e, 1.0);
        for (std::size_t n = 0; n < count; ++n) {
            for (std::size_t attempt = 0; attempt < 64; ++attempt) {
                const NodeId v = uniform_index(rng, num_nodes);
                if (v == e.src || known.contains(e.src, v, e.relation, e.segment)) continue;
                out.add({e.src, v, e.relation, e.segment}, 0.0);
                break;
            }
        }
    }
    return out;
}

/// Negated binary cross-entropy of DistMult scores, summed over segments and samples.
inline ad::Var rel_loss(std::span<const ad::Var> z, std::span<const ad::Var> predictor, const LabelledTriples& batch) {
    ad::Tape& tape = z.front().tape();
    ad::Var total;
    for (Segment t = 0; t < z.size(); ++t) {
        if (batch.src[t].empty()) continue;
        const ad::Var logits = ad::row_sum(ad::hadamard(
            ad::hadamard(ad::gather_rows(z[t], batch.src[t]), ad::gather_rows(z[t], batch.dst[t])),
            ad::gather_rows(predictor[t], batch.rel[t])));
        std::vector<double> pos = batch.label[t], neg(pos.size());
        for (std::size_t k = 0; k < pos.size(); ++k) neg[k] = 1.0 - pos[k];
        const ad::Var ll = ad::add(ad::sum(ad::hadamard(ad::log_sigmoid(logits), tape.constant(Tensor::vector(pos)))),
                                   ad::sum(ad::hadamard(ad::log_sigmoid(ad::scale(logits, -1.0)),
                                                        tape.constant(Tensor::vector(std::move(neg))))));
        total = total.valid() ? ad::add(total, ll) : ll;
    }
    if (!total.valid()) throw ContractError("rel_loss: no training triples");
    return ad::scale(total, -1.0);
}

/// Frozen embeddings and relation weights: z[t] is N x d, weights[t] is |R| x d.
struct ScoringState {
    std::vector<Tensor> z;
    std::vector<Tensor> weights;

    std::size_t num_nodes() const { return z.empty() ? 0 : z.front().rows(); }
    std::size_t num_relations() const { return weights.empty() ? 0 : weights.front().rows(); }
    std::size_t num_segments() const { return z.size(); }

    std::vector<double> scores(NodeId i, RelationId r, Segment t) const {
        const std::size_t n = num_nodes();
        std::vector<double> s(n);
        for (NodeId v = 0; v < n; ++v) s[v] = score_logit(z[t].row(i), z[t].row(v), weights[t].row(r));
        return s;
    }
};

struct EvalOptions {
    std::size_t k = 10;
    /// Drop other known positives of (i, r, t) and the query node itself from the candidates.
    bool filtered = true;
    /// Candidate locations; empty means every location. The true destination is always ranked.
    std::vector<NodeId> candidates;
};

/// Ranks the destination of every query edge against all locations.
inline RankingReport evaluate(const ScoringState& st, const std::vector<RelationalEdge>& queries,
                              const PositiveSet& known, const EvalOptions& opt) {
    if (queries.empty()) throw InputError("evaluate: empty test set");
    const std::size_t T = st.num_segments(), N = st.num_nodes();
    std::vector<std::vector<std::size_t>> ranks(T);
    std::vector<std::size_t> all;
    std::vector<bool> outside(N, !opt.candidates.empty());
    for (NodeId v : opt.candidates) {
        if (v >= N) throw InputError("evaluate: candidate " + std::to_string(v) + " is not a location");
        outside[v] = false;
    }
    std::vector<bool> skip(N, false);
    for (const RelationalEdge& e : queries) {
        if (e.src >= N || e.dst >= N || e.segment >= T || e.relation >= st.num_relations())
            throw InputError("evaluate: query edge outside the model's node/relation/segment range");
        const auto s = st.scores(e.src, e.relation, e.segment);
        for (NodeId v = 0; v < N; ++v) {
            const bool filtered_out = opt.filtered && (v == e.src || known.contains(e.src, v, e.relation, e.segment));
            skip[v] = v != e.dst && (outside[v] || filtered_out);
        }
        const std::size_t r = rank_of(s, e.dst, skip);
        ranks[e.segment].push_back(r);
        all.push_back(r);
    }
    RankingReport rep;
    rep.k = opt.k;
    for (Segment t = 0; t < T; ++t) rep.per_segment.push_back(ranking_metrics(ranks[t], opt.k));
    rep.overall = ranking_metrics(all, opt.k);
    return rep;
}

struct RankedLocation {
    NodeId node = 0;
    double score = 0.0;
};

/// Top-k destinations for (i, r, t) by descending probability, ties by ascending id; every location is a candidate.
inline std::vector<RankedLocation> rank_for_location(const ScoringState& st, NodeId i, Segment t, RelationId r,
                                                     std::size_t k) {
    if (i >= st.num_nodes()) throw InputError("rank: unknown node " + std::to_string(i));
    if (t >= st.num_segments()) throw InputError("rank: unknown segment " + std::to_string(t));
    if (r >= st.num_relations()) throw InputError("rank: unknown relation " + std::to_string(r));
    const auto s = st.scores(i, r, t);
    std::vector<RankedLocation> out;
    for (NodeId v = 0; v < s.size(); ++v) out.push_back({v, 1.0 / (1.0 + std::exp(-s[v]))});
    std::vector<std::size_t> order(s.size());
    for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<RankedLocation> top;
    for (std::size_t p = 0; p < std::min(k, order.size()); ++p) top.push_back(out[order[p]]);
    return top;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    AdamConfig adam;
    SeConvConfig model;
    SslConfig ssl;
    std::size_t epochs = 200;
    std::size_t pretrain_epochs = 100;
    std::size_t negatives = 5;
    std::size_t bins = 40;
    std::uint64_t seed = 0;
    bool symmetrize = true;
    bool second_order_filter = true;
    bool bins_all_pairs = false;
    double predictor_scale = 1.0;
    /// Rescale each block's weights at initialisation so embeddings keep the input scale.
    bool calibrate_init = true;
    EvalOptions eval;
    /// Validation every this many epochs (the last epoch is always validated).
    std::size_t valid_every = 1;
    /// Training edges per optimizer step; 0 means one full-batch step per epoch.
    std::size_t batch_size = 0;
    SplitRatios ratios;

    void validate() const {
        if (adam.lr <= 0) throw ConfigError("lr must be positive");
        if (model.dim == 0 || model.blocks == 0) throw ConfigError("dim and layers must be positive");
        if (negatives == 0) throw ConfigError("negatives must be positive");
        if (bins == 0) throw ConfigError("bins must be positive");
        if (model.neighbors_k == 0) throw ConfigError("k-neighbors must be positive");
        if (eval.k == 0) throw ConfigError("eval k must be positive");
        if (valid_every == 0) throw ConfigError("valid-every must be positive");
        ssl.validate();
    }
};

/// Ablation variants: each removes one component from the full model.
enum class Variant { Full, NoSsl, NoRsAgg, NoSeProp, NoContext, NoGlobal, NoLocal, FirstOrder };

inline const std::vector<std::pair<Variant, std::string>>& variant_names() {
    static const std::vector<std::pair<Variant, std::string>> names = {
        {Variant::Full, "full"},         {Variant::NoSsl, "no-ssl"},       {Variant::NoRsAgg, "no-rs"},
        {Variant::NoSeProp, "no-ld"},    {Variant::NoContext, "no-c"},     {Variant::NoGlobal, "no-g"},
        {Variant::NoLocal, "no-l"},      {Variant::FirstOrder, "no-sec"}};
    return names;
}

inline std::string to_string(Variant v) {
    for (const auto& [k, n] : variant_names())
        if (k == v) return n;
    return "full";
}

inline Variant parse_variant(const std::string& s) {
    for (const auto& [k, n] : variant_names())
        if (n == s) return k;
    throw ConfigError("unknown variant '" + s + "'");
}

/// Switches off the component the variant removes; everything else is left as configured.
inline void apply_variant(TrainConfig& c, Variant v) {
    switch (v) {
        case Variant::Full: break;
        case Variant::NoSsl: c.pretrain_epochs = 0; break;
        case Variant::NoRsAgg: c.model.use_rs_agg = false; break;
        case Variant::NoSeProp: c.model.use_se_prop = false; break;
        case Variant::NoContext: c.model.use_context = false; break;
        case Variant::NoGlobal: c.ssl.lambda_global = 0.0; break;
        case Variant::NoLocal: c.ssl.lambda_local = 0.0; break;
        case Variant::FirstOrder: c.model.plain_gcn = true; break;
    }
}

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["lr"] = c.adam.lr;
    j["beta1"] = c.adam.beta1;
    j["beta2"] = c.adam.beta2;
    j["eps"] = c.adam.eps;
    j["dim"] = c.model.dim;
    j["layers"] = c.model.blocks;
    j["k_neighbors"] = c.model.neighbors_k;
    j["use_rs_agg"] = c.model.use_rs_agg;
    j["use_se_prop"] = c.model.use_se_prop;
    j["use_context"] = c.model.use_context;
    j["plain_gcn"] = c.model.plain_gcn;
    j["gate_distance"] = to_string(c.model.gate_distance);
    j["combine"] = to_string(c.model.combine);
    j["fuse"] = to_string(c.model.fuse);
    j["between_blocks"] = to_string(c.model.between_blocks);
    j["input_scale"] = c.model.input_scale;
    j["weight_gain"] = c.model.weight_gain;
    j["lambda_global"] = c.ssl.lambda_global;
    j["lambda_local"] = c.ssl.lambda_local;
    j["d1"] = c.ssl.d1;
    j["d2"] = c.ssl.d2;
    j["cell_size"] = c.ssl.cell_size_m;
    j["l2"] = c.ssl.l2;
    j["ssl_negatives"] = c.ssl.negatives;
    j["local_stage"] = to_string(c.ssl.local_stage);
    j["epochs"] = c.epochs;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["negatives"] = c.negatives;
    j["bins"] = c.bins;
    j["seed"] = c.seed;
    j["symmetrize"] = c.symmetrize;
    j["second_order_filter"] = c.second_order_filter;
    j["bins_all_pairs"] = c.bins_all_pairs;
    j["predictor_scale"] = c.predictor_scale;
    j["calibrate_init"] = c.calibrate_init;
    j["eval_k"] = c.eval.k;
    j["filtered"] = c.eval.filtered;
    j["valid_every"] = c.valid_every;
    j["batch_size"] = c.batch_size;
    j["split"] = {c.ratios.train, c.ratios.valid, c.ratios.test};
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto pick = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    auto pick_enum = [&](const char* key, auto& dst, auto... options) {
        if (!j.contains(key)) return;
        const std::string v = j.at(key).get<std::string>();
        bool found = false;
        ((to_string(options) == v ? (dst = options, found = true) : false), ...);
        if (!found) throw InputError(std::string("config: bad value '") + v + "' for " + key);
    };
    pick("lr", c.adam.lr);
    pick("beta1", c.adam.beta1);
    pick("beta2", c.adam.beta2);
    pick("eps", c.adam.eps);
    pick("dim", c.model.dim);
    pick("layers", c.model.blocks);
    pick("k_neighbors", c.model.neighbors_k);
    pick("use_rs_agg", c.model.use_rs_agg);
    pick("use_se_prop", c.model.use_se_prop);
    pick("use_context", c.model.use_context);
    pick("plain_gcn", c.model.plain_gcn);
    pick_enum("gate_distance", c.model.gate_distance, GateDistance::TwoHop, GateDistance::FirstHop);
    pick_enum("combine", c.model.combine, CombineDivisor::AllPatterns, CombineDivisor::NonEmptyPatterns);
    pick_enum("fuse", c.model.fuse, FuseDivisor::IncludedSegments, FuseDivisor::WindowSpan);
    pick_enum("between_blocks", c.model.between_blocks, Activation::None, Activation::ReLU, Activation::Tanh);
    pick("input_scale", c.model.input_scale);
    pick("weight_gain", c.model.weight_gain);
    pick("lambda_global", c.ssl.lambda_global);
    pick("lambda_local", c.ssl.lambda_local);
    pick("d1", c.ssl.d1);
    pick("d2", c.ssl.d2);
    pick("cell_size", c.ssl.cell_size_m);
    pick("l2", c.ssl.l2);
    pick("ssl_negatives", c.ssl.negatives);
    pick_enum("local_stage", c.ssl.local_stage, LocalStage::Final, LocalStage::Intra);
    pick("epochs", c.epochs);
    pick("pretrain_epochs", c.pretrain_epochs);
    pick("negatives", c.negatives);
    pick("bins", c.bins);
    pick("seed", c.seed);
    pick("symmetrize", c.symmetrize);
    pick("second_order_filter", c.second_order_filter);
    pick("bins_all_pairs", c.bins_all_pairs);
    pick("predictor_scale", c.predictor_scale);
    pick("calibrate_init", c.calibrate_init);
    pick("eval_k", c.eval.k);
    pick("filtered", c.eval.filtered);
    pick("valid_every", c.valid_every);
    pick("batch_size", c.batch_size);
    if (j.contains("split")) {
        const auto s = j.at("split").get<std::vector<double>>();
        if (s.size() != 3) throw InputError("config: split needs three ratios");
        c.ratios = {s[0], s[1], s[2]};
    }
    return c;
}

// ---------------------------------------------------------------------------
// Model context: everything derived from the training graph

/// Indices, encoder and parameters for one training graph.
class SeenetContext {
public:
    SeenetContext(const TrainConfig& cfg, std::vector<Location> locations, const std::vector<RelationalEdge>& train_edges,
                  std::size_t num_relations, std::size_t num_segments,
                  std::optional<DistanceBinBoundaries> bounds = std::nullopt)
        : cfg_(cfg),
          graph_(std::move(locations), train_edges, num_relations, num_segments, cfg.symmetrize),
          index_(graph_, cfg.second_order_filter),
          encoder_(graph_.locations(), bounds ? *bounds : fit(graph_, cfg)),
          grid_(graph_.locations(), cfg.ssl.cell_size_m),
          sampler_(grid_, cfg.ssl.d1, cfg.ssl.d2),
          persistence_(persistence_pairs(graph_)),
          model_(cfg.model, graph_, index_, encoder_) {}

    const TrainConfig& config() const noexcept { return cfg_; }
    const DynamicLocationGraph& graph() const noexcept { return graph_; }
    const SecondOrderIndex& index() const noexcept { return index_; }
    const DistanceEncoder& encoder() const noexcept { return encoder_; }
    const GridPartition& grid() const noexcept { return grid_; }
    const GridNegativeSampler& grid_sampler() const noexcept { return sampler_; }
    const PersistencePairs& persistence() const noexcept { return persistence_; }
    const SeConvModel& model() const noexcept { return model_; }

    std::size_t num_nodes() const { return graph_.num_nodes(); }
    std::size_t num_relations() const { return graph_.num_relations(); }
    std::size_t num_segments() const { return graph_.num_segments(); }

    /// Fresh parameters for the configured variant, all drawn from the "init" stream.
    ParamStore init_params() const {
        ParamStore store;
        Rng rng = make_stream(cfg_.seed, "init");
        init_seconv_params(store, cfg_.model, num_nodes(), num_relations(), num_segments(), encoder_.num_bins(), rng);
        if (cfg_.pretrain_epochs > 0) init_ssl_params(store, cfg_.ssl, cfg_.model.dim, rng);
        init_predictor_params(store, cfg_.model.dim, num_relations(), num_segments(), cfg_.predictor_scale, rng);
        if (cfg_.calibrate_init) {
            Rng draws = make_stream(cfg_.seed, "init.calibrate");
            calibrate_block_gains(store, model_, model_.draw_contexts(draws));
        }
        return store;
    }

    SeConvWeights weights(const BoundParams& bound) const {
        return bind_seconv(bound, cfg_.model, num_relations(), num_segments());
    }

    /// Self-supervised objective for one parameter snapshot.
    ad::Var ssl_loss(const BoundParams& bound, const NodeStates& states, Rng& negatives_rng) const {
        ad::Var global, local;
        std::vector<ad::Var> final_z = states.z;
        if (cfg_.ssl.lambda_global > 0) {
            const auto negs = draw_global_negatives(sampler_, num_nodes(), num_segments(), cfg_.ssl.negatives, negatives_rng);
            global = global_loss(final_z, grid_, lookup(bound, pname::kDiscriminator), negs);
        }
        if (cfg_.ssl.lambda_local > 0) {
            const auto& src = cfg_.ssl.local_stage == LocalStage::Final ? final_z : states.intra.back();
            local = local_loss(src, persistence_, bind_local_head(bound));
        }
        return joint_ssl_loss(global, local, bound, cfg_.ssl);
    }

    /// Embeddings and relation weights at a parameter snapshot, with contexts from the fixed "eval" stream.
    ScoringState scoring_state(const ParamStore& store) const {
        ad::Tape tape;
        const BoundParams bound = store.bind_all(tape);
        Rng rng = make_stream(cfg_.seed, "eval");
        const NodeStates states = model_.forward(weights(bound), rng);
        ScoringState st;
        for (const ad::Var& z : states.z) st.z.push_back(z.value());
        for (const ad::Var& w : bind_predictor(bound, num_relations(), num_segments())) st.weights.push_back(w.value());
        return st;
    }

private:
    static DistanceBinBoundaries fit(const DynamicLocationGraph& g, const TrainConfig& cfg) {
        auto d = fitting_distances(g, cfg.bins_all_pairs);
        if (d.empty()) d.push_back(0.0);
        return fit_bins(std::move(d), cfg.bins);
    }

    TrainConfig cfg_;
    DynamicLocationGraph graph_;
    SecondOrderIndex index_;
    DistanceEncoder encoder_;
    GridPartition grid_;
    GridNegativeSampler sampler_;
    PersistencePairs persistence_;
    SeConvModel model_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::string stage;
    std::size_t epoch = 0;
    double loss = 0.0;
    double valid_mrr = -1.0;
};

struct TrainResult {
    ParamStore params;
    std::size_t best_epoch = 0;
    double best_valid_mrr = -1.0;
    std::vector<EpochLog> history;
    RankingReport valid_report;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// All observed positives of a split, for filtering and negative exclusion.
inline PositiveSet known_positives(const DatasetSplit& s) {
    PositiveSet p;
    for (const auto* parts : {&s.train, &s.valid, &s.test, &s.excluded})
        for (const auto& part : *parts) p.add_all(part);
    return p;
}

/// Flags a sustained rise of the training loss: the mean over the last `kWindow` epochs exceeding the mean of
/// the window before it, `kPatience` checks in a row. Reports each episode once.
class LossTrend {
public:
    static constexpr std::size_t kWindow = 10;
    static constexpr std::size_t kPatience = 3;

    /// Records one epoch loss; true when a new rising episode is detected.
    bool add(double loss) {
        losses_.push_back(loss);
        if (losses_.size() < 2 * kWindow) return false;
        double recent = 0.0, before = 0.0;
        for (std::size_t k = 0; k < kWindow; ++k) {
            recent += losses_[losses_.size() - 1 - k];
            before += losses_[losses_.size() - 1 - kWindow - k];
        }
        rising_ = recent > before ? rising_ + 1 : 0;
        if (rising_ == kPatience) return true;
        return false;
    }

private:
    std::vector<double> losses_;
    std::size_t rising_ = 0;
};

namespace detail {

template <class Body>
double guarded(const char* stage, std::size_t epoch, Body&& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + " diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
}

inline void drop_prefix(ad::GradMap& grads, const char* prefix) {
    for (auto it = grads.begin(); it != grads.end();)
        it = it->first.rfind(prefix, 0) == 0 ? grads.erase(it) : std::next(it);
}

}  // namespace detail

/// Minimises the self-supervised objective for `pretrain_epochs` epochs; relation weights stay untouched.
inline std::vector<EpochLog> pretrain(const SeenetContext& ctx, ParamStore& store, const EpochCallback& on_epoch = {}) {
    const TrainConfig& cfg = ctx.config();
    cfg.validate();
    Rng temporal = make_stream(cfg.seed, "ssl.temporal");
    Rng negatives = make_stream(cfg.seed, "ssl.negatives");
    std::vector<EpochLog> history;
    for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
        const double loss = detail::guarded("pretraining", epoch, [&] {
            ad::Tape tape;
            const BoundParams bound = store.bind_all(tape);
            BoundParams trainable;
            for (const auto& [name, v] : bound)
                if (name.rfind("pred.", 0) != 0) trainable.emplace(name, v);
            const NodeStates states = ctx.model().forward(ctx.weights(bound), temporal);
            const ad::Var l = ctx.ssl_loss(trainable, states, negatives);
            const double value = l.value().item();
            ad::GradMap grads = tape.backward(l);
            detail::drop_prefix(grads, "pred.");
            store.adam_step(grads, cfg.adam);
            return value;
        });
        history.push_back({"pretrain", epoch, loss, -1.0});
        if (on_epoch) on_epoch(history.back());
    }
    return history;
}

/// Minimises the relation loss from `params`; the parameters with the best validation MRR@k are returned.
inline TrainResult train(const SeenetContext& ctx, const DatasetSplit& split, ParamStore params,
                         const EpochCallback& on_epoch = {}) {
    const TrainConfig& cfg = ctx.config();
    cfg.validate();
    TrainResult res;
    res.params = std::move(params);
    ParamStore& store = res.params;
    Rng temporal = make_stream(cfg.seed, "temporal");
    Rng negatives = make_stream(cfg.seed, "negatives");
    const PositiveSet train_pos = [&] {
        PositiveSet p;
        for (const auto& part : split.train) p.add_all(part);
        return p;
    }();
    const PositiveSet all_pos = known_positives(split);
    const auto train_edges = DatasetSplit::flatten(split.train);
    const auto valid_edges = DatasetSplit::flatten(split.valid);
    if (train_edges.empty()) throw ConfigError("training split is empty");
    std::optional<ParamStore> best;
    LossTrend trend;
    std::vector<RelationalEdge> order = train_edges;
    const std::size_t batch = cfg.batch_size ? cfg.batch_size : order.size();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (batch < order.size()) std::shuffle(order.begin(), order.end(), negatives);
        double loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch) {
            const std::vector<RelationalEdge> part(order.begin() + std::ptrdiff_t(begin),
                                                   order.begin() + std::ptrdiff_t(std::min(order.size(), begin + batch)));
            loss += detail::guarded("training", epoch, [&] {
                ad::Tape tape;
                const BoundParams bound = store.bind_all(tape);
                const NodeStates states = ctx.model().forward(ctx.weights(bound), temporal);
                const auto triples = with_negatives(part, train_pos, ctx.num_nodes(), ctx.num_segments(), cfg.negatives, negatives);
                const ad::Var l = rel_loss(states.z, bind_predictor(bound, ctx.num_relations(), ctx.num_segments()), triples);
                const double value = l.value().item();
                ad::GradMap grads = tape.backward(l);
                detail::drop_prefix(grads, "ssl.");
                store.adam_step(grads, cfg.adam);
                return value;
            });
        }
        if (trend.add(loss))
            log::warn("training loss has risen for " + std::to_string(LossTrend::kPatience) + " windows in a row (epoch " +
                      std::to_string(epoch) + ")");
        EpochLog e{"train", epoch, loss, -1.0};
        if (!valid_edges.empty() && (epoch % cfg.valid_every == 0 || epoch == cfg.epochs)) {
            RankingReport rep;
            e.valid_mrr = detail::guarded("training", epoch, [&] {
                rep = evaluate(ctx.scoring_state(store), valid_edges, all_pos, cfg.eval);
                return rep.overall.mrr;
            });
            if (!best || rep.overall.mrr > res.best_valid_mrr) {
                res.best_valid_mrr = rep.overall.mrr;
                res.best_epoch = epoch;
                res.valid_report = rep;
                best = store;
            }
        }
        res.history.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    if (best) store = std::move(*best);
    else res.best_epoch = cfg.epochs;
    return res;
}

/// Fresh parameters, self-supervised pretraining, optimizer reset, then relation training.
inline TrainResult pretrain_then_train(const SeenetContext& ctx, const DatasetSplit& split, const EpochCallback& on_epoch = {}) {
    ParamStore store = ctx.init_params();
    std::vector<EpochLog> history = pretrain(ctx, store, on_epoch);
    store.reset_optimizer();
    TrainResult res = train(ctx, split, std::move(store), on_epoch);
    res.history.insert(res.history.begin(), history.begin(), history.end());
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct ModelMeta {
    TrainConfig config;
    std::size_t num_nodes = 0, num_relations = 0, num_segments = 0;
    std::size_t best_epoch = 0;
    double best_valid_mrr = -1.0;
};

inline Checkpoint make_checkpoint(const ParamStore& store, const DistanceEncoder& enc, const ModelMeta& meta) {
    Checkpoint ck;
    nlohmann::json j;
    j["format"] = "seenet";
    j["config"] = to_json(meta.config);
    j["nodes"] = meta.num_nodes;
    j["relations"] = meta.num_relations;
    j["segments"] = meta.num_segments;
    j["best_epoch"] = meta.best_epoch;
    j["best_valid_mrr"] = meta.best_valid_mrr;
    ck.meta = j.dump();
    for (const auto& [name, e] : store.entries()) ck.params.emplace(name, e.value);
    ck.buffers.emplace(pname::kBoundaries, Tensor::vector(enc.boundaries().bounds));
    return ck;
}

inline ModelMeta read_model_meta(const Checkpoint& ck) {
    try {
        const auto j = nlohmann::json::parse(ck.meta);
        ModelMeta m;
        m.config = train_config_from_json(j.at("config"));
        m.num_nodes = j.at("nodes").get<std::size_t>();
        m.num_relations = j.at("relations").get<std::size_t>();
        m.num_segments = j.at("segments").get<std::size_t>();
        m.best_epoch = j.value("best_epoch", std::size_t{0});
        m.best_valid_mrr = j.value("best_valid_mrr", -1.0);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("checkpoint metadata: ") + e.what());
    }
}

inline DistanceBinBoundaries read_boundaries(const Checkpoint& ck) {
    auto it = ck.buffers.find(pname::kBoundaries);
    if (it == ck.buffers.end()) throw InputError("checkpoint: missing distance boundaries");
    return {it->second.raw()};
}

inline ParamStore params_from_checkpoint(const Checkpoint& ck) {
    ParamStore store;
    for (const auto& [name, t] : ck.params) store.add(name, t);
    return store;
}

}  // namespace seenet
