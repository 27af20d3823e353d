#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace seenet;
using namespace testing_support;

namespace {

Tensor mat_vec(const Tensor& W, const Tensor& x) {
    Tensor out(Shape{W.rows()});
    for (std::size_t r = 0; r < W.rows(); ++r)
        for (std::size_t c = 0; c < W.cols(); ++c) out[r] += W.at(r, c) * x[c];
    return out;
}

Tensor cat(const Tensor& a, const Tensor& b) {
    std::vector<double> v(a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    return Tensor::vector(v);
}

Tensor row_of(const Tensor& m, std::size_t r) {
    const auto v = m.row(r);
    return Tensor::vector({v.begin(), v.end()});
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void expect_close(const Tensor& a, const Tensor& b, double tol, const std::string& what = {}) {
    ASSERT_EQ(a.shape(), b.shape()) << what;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << what << " [" << i << "]";
}

/// A random graph with everything SEConv needs, plus its parameters.
struct Fixture {
    SeConvConfig cfg;
    DynamicLocationGraph graph;
    SecondOrderIndex index;
    DistanceEncoder enc;
    ParamStore store;

    Fixture(std::size_t n, std::size_t edges, std::size_t relations, std::uint64_t seed, SeConvConfig c = small(),
            bool filter = true, std::vector<RelationalEdge> fixed_edges = {}) : cfg(c) {
        std::mt19937_64 rng(seed);
        auto locs = random_locations(n, rng);
        if (fixed_edges.empty()) fixed_edges = random_edges(n, edges, relations, 4, rng);
        graph = DynamicLocationGraph(locs, fixed_edges, relations, 4, true);
        index = build_second_order_index(graph, filter);
        enc = DistanceEncoder(locs, fit_bins(fitting_distances(graph, true), 6));
        Rng init(seed + 1);
        init_seconv_params(store, cfg, n, relations, 4, enc.num_bins(), init);
    }

    static SeConvConfig small() {
        SeConvConfig c;
        c.dim = 4;
        c.neighbors_k = 3;
        return c;
    }

    SeConvModel model() const { return SeConvModel(cfg, graph, index, enc); }
};

/// Node-at-a-time evaluation through the per-node reference operations.
std::vector<Tensor> reference_forward(const Fixture& f, const ContextDraws& draws) {
    const SeConvModel model = f.model();
    const std::size_t T = 4, N = f.graph.num_nodes(), R = f.graph.num_relations();
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, R, T);
    std::vector<ad::Var> h(T, w.input);
    for (std::size_t b = 0; b < f.cfg.blocks; ++b) {
        std::vector<ad::Var> intra(T), out(T);
        for (Segment t = 0; t < T; ++t) {
            if (!f.cfg.use_rs_agg) {
                intra[t] = h[t];
                continue;
            }
            std::vector<ad::Var> rows;
            for (NodeId i = 0; i < N; ++i) {
                std::vector<ad::Var> per_pattern;
                std::vector<bool> nonempty;
                for (std::size_t p = 0; p < R * R; ++p) {
                    const auto pairs = f.index.pairs(t, i, pattern_at(p, R));
                    per_pattern.push_back(
                        rs_agg_pattern(w.paths[b][t][p], h[t], w.distance_table, f.enc, i, pairs, f.cfg.gate_distance));
                    nonempty.push_back(!pairs.empty());
                }
                rows.push_back(rs_agg_combine(per_pattern, nonempty, f.cfg.combine));
            }
            intra[t] = ad::stack_rows(rows);
        }
        if (!f.cfg.use_se_prop) {
            out = intra;
        } else {
            std::vector<ad::Var> fused(T);
            for (Segment t = 0; t < T; ++t) {
                std::vector<ad::Var> win;
                for (Segment tau : segment_window(t, T)) win.push_back(intra[tau]);
                fused[t] = inter_time_fuse(w.times[b][t].fuse, win, f.cfg.fuse);
            }
            for (Segment t = 0; t < T; ++t) {
                const ContextSamples ctx = model.context_samples(draws, b, t);
                std::vector<ad::Var> rows;
                for (NodeId i = 0; i < N; ++i)
                    rows.push_back(se_prop(w.times[b][t], w.distance_table, f.enc, f.graph, fused, t, i, ctx, f.cfg.use_context));
                out[t] = ad::stack_rows(rows);
            }
        }
        const bool last = b + 1 == f.cfg.blocks;
        for (Segment t = 0; t < T; ++t) h[t] = last ? out[t] : activate(out[t], f.cfg.between_blocks);
    }
    std::vector<Tensor> z;
    for (const auto& v : h) z.push_back(v.value());
    return z;
}

std::vector<Tensor> batched_forward(const Fixture& f, const ContextDraws& draws) {
    const SeConvModel model = f.model();
    ad::Tape tape;
    const auto st = model.forward(bind_seconv(f.store.bind_all(tape), f.cfg, f.graph.num_relations(), 4), draws);
    std::vector<Tensor> z;
    for (const auto& v : st.z) z.push_back(v.value());
    return z;
}

PathWeights random_path_weights(ad::Tape& tape, std::size_t d, std::mt19937_64& rng) {
    return {tape.constant(random_tensor({d, d}, rng)), tape.constant(random_tensor({d}, rng)),
            tape.constant(random_tensor({d, 2 * d}, rng)), tape.constant(random_tensor({d, 2 * d}, rng)),
            tape.constant(random_tensor({d, d}, rng))};
}

}  // namespace

TEST(SpatialGate, ZeroGateVectorGivesHalf) {
    std::mt19937_64 rng(1);
    ad::Tape tape;
    PathWeights w = random_path_weights(tape, 4, rng);
    w.gate = tape.constant(Tensor(Shape{4}));
    const auto x = tape.constant(random_tensor({4}, rng));
    EXPECT_DOUBLE_EQ(spatial_gate(w, x, x, x).value().item(), 0.5);
}

TEST(SpatialGate, ZeroInputsGiveHalf) {
    std::mt19937_64 rng(2);
    ad::Tape tape;
    const PathWeights w = random_path_weights(tape, 4, rng);
    const auto z = tape.constant(Tensor(Shape{4}));
    EXPECT_DOUBLE_EQ(spatial_gate(w, z, z, z).value().item(), 0.5);
}

TEST(SpatialGate, MatchesStraightLineFormula) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t d = 1 + rng() % 6;
        ad::Tape tape;
        const PathWeights w = random_path_weights(tape, d, rng);
        const Tensor hj = random_tensor({d}, rng), hk = random_tensor({d}, rng), dist = random_tensor({d}, rng);
        const Tensor& W = w.path.value();
        const Tensor s_spa = mat_vec(w.spatial.value(), cat(mat_vec(w.distance.value(), dist), mat_vec(W, hk)));
        const Tensor s_rel = mat_vec(w.relational.value(), cat(mat_vec(W, hj), mat_vec(W, hk)));
        const double score = dot(w.gate.value(), s_spa) + dot(w.gate.value(), s_rel);
        const double expected = 1.0 / (1.0 + std::exp(-score));
        const double got =
            spatial_gate(w, tape.constant(hj), tape.constant(hk), tape.constant(dist)).value().item();
        EXPECT_NEAR(got, expected, 1e-13) << "seed " << seed;
        EXPECT_GT(got, 0.0);
        EXPECT_LT(got, 1.0);
    }
}

TEST(RsAggPattern, EmptySetIsZero) {
    Fixture f(6, 10, 2, 1);
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 2, 4);
    const auto out = rs_agg_pattern(w.paths[0][0][0], w.input, w.distance_table, f.enc, 0, {});
    EXPECT_EQ(out.value(), Tensor(Shape{4}));
}

TEST(RsAggPattern, GateOffLeavesFirstHopTerm) {
    Fixture f(6, 10, 2, 2);
    ad::Tape tape;
    auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 2, 4);
    PathWeights pw = w.paths[0][0][0];
    const Tensor& H = w.input.value();
    const Tensor hj = row_of(H, 1), hk = row_of(H, 2);
    const Tensor dist = row_of(w.distance_table.value(), f.enc.bin(0, 2));
    const Tensor& W = pw.path.value();
    Tensor s = mat_vec(pw.spatial.value(), cat(mat_vec(pw.distance.value(), dist), mat_vec(W, hk)));
    const Tensor s_rel = mat_vec(pw.relational.value(), cat(mat_vec(W, hj), mat_vec(W, hk)));
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += s_rel[c];
    Tensor a = s;
    const double ss = dot(s, s);
    for (double& v : a.values()) v *= -800.0 / ss;  // gate score -800: sigmoid underflows to exactly 0
    pw.gate = tape.constant(a);
    const auto out = rs_agg_pattern(pw, w.input, w.distance_table, f.enc, 0, {{1, 2}});
    expect_close(out.value(), mat_vec(W, hj), 1e-14);
}

TEST(RsAggPattern, MatchesNaiveLoop) {
    for (int seed = 0; seed < 5; ++seed) {
        Fixture f(10, 30, 2, 10 + seed, Fixture::small(), false);
        ad::Tape tape;
        const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 2, 4);
        const Tensor& H = w.input.value();
        for (NodeId i = 0; i < 10; ++i)
            for (std::size_t p = 0; p < 4; ++p) {
                const PathWeights& pw = w.paths[0][1][p];
                const auto pairs = f.index.pairs(1, i, pattern_at(p, 2));
                Tensor expected(Shape{4});
                for (const auto& [j, k] : pairs) {
                    const Tensor& W = pw.path.value();
                    const Tensor wj = mat_vec(W, row_of(H, j)), wk = mat_vec(W, row_of(H, k));
                    const Tensor dist = row_of(w.distance_table.value(), f.enc.bin(i, k));
                    const double score = dot(pw.gate.value(), mat_vec(pw.spatial.value(), cat(mat_vec(pw.distance.value(), dist), wk))) +
                                         dot(pw.gate.value(), mat_vec(pw.relational.value(), cat(wj, wk)));
                    const double phi = 1.0 / (1.0 + std::exp(-score));
                    for (std::size_t c = 0; c < 4; ++c) expected[c] += wj[c] + phi * wk[c];
                }
                const auto got = rs_agg_pattern(pw, w.input, w.distance_table, f.enc, i, pairs);
                expect_close(got.value(), expected, 1e-12);
            }
    }
}

TEST(RsAggCombine, LiteralDivisorCountsEmptyPatterns) {
    ad::Tape tape;
    const auto x = tape.constant(Tensor::vector({4, 8, -12}));
    const auto zero = tape.constant(Tensor(Shape{3}));
    const std::vector<ad::Var> four{zero, x, zero, zero};
    EXPECT_EQ(rs_agg_combine(four).value(), Tensor::vector({1, 2, -3}));
    const std::vector<ad::Var> same{x, x, x, x};
    EXPECT_EQ(rs_agg_combine(same).value(), x.value());
    EXPECT_EQ(rs_agg_combine(four, {false, true, false, false}, CombineDivisor::NonEmptyPatterns).value(), x.value());
}

TEST(InterTimeFuse, IdentityAndAnnihilation) {
    ad::Tape tape;
    const auto x = tape.constant(Tensor::vector({1.5, -2, 3}));
    Tensor eye(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
    const std::vector<ad::Var> win{x, x, x};
    expect_close(inter_time_fuse(tape.constant(eye), win).value(), x.value(), 1e-15);
    EXPECT_EQ(inter_time_fuse(tape.constant(Tensor(Shape{3, 3})), win).value(), Tensor(Shape{3}));
}

TEST(InterTimeFuse, MatchesReferenceWithDivisorThree) {
    std::mt19937_64 rng(3);
    ad::Tape tape;
    const Tensor W = random_tensor({5, 5}, rng);
    std::vector<Tensor> hs{random_tensor({5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)};
    Tensor expected(Shape{5});
    for (const auto& h : hs) {
        const Tensor wh = mat_vec(W, h);
        for (std::size_t c = 0; c < 5; ++c) expected[c] += wh[c] / 3.0;
    }
    std::vector<ad::Var> win;
    for (const auto& h : hs) win.push_back(tape.constant(h));
    expect_close(inter_time_fuse(tape.constant(W), win).value(), expected, 1e-14);
    Tensor span = expected;
    for (double& v : span.values()) v *= 1.5;
    expect_close(inter_time_fuse(tape.constant(W), win, FuseDivisor::WindowSpan).value(), span, 1e-14);
}

TEST(EvolvingContext, EmptySampleIsZero) {
    Fixture f(5, 10, 1, 4);
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 1, 4);
    EXPECT_EQ(evolving_context(w.times[0][0].distance, w.distance_table, f.enc, w.input, 0, {}).value(), Tensor(Shape{4}));
}

TEST(EvolvingContext, IdentityTransformAndOnesEmbeddingGiveFusedState) {
    Fixture f(5, 10, 1, 5);
    ad::Tape tape;
    Tensor eye(Shape{4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1;
    const auto table = tape.constant(Tensor(Shape{f.enc.num_bins(), 4}, 1.0));
    std::mt19937_64 rng(5);
    const auto fused = tape.constant(random_tensor({5, 4}, rng));
    EXPECT_EQ(evolving_context(tape.constant(eye), table, f.enc, fused, 0, {3}).value(), row_of(fused.value(), 3));
}

TEST(EvolvingContext, RepeatsWeighByMultiplicity) {
    Fixture f(6, 12, 1, 6);
    ad::Tape tape;
    std::mt19937_64 rng(6);
    const Tensor G = random_tensor({4, 4}, rng), D = random_tensor({f.enc.num_bins(), 4}, rng), F = random_tensor({6, 4}, rng);
    const std::vector<NodeId> sample{2, 4, 2, 2, 5};
    Tensor expected(Shape{4});
    for (NodeId k : sample) {
        const Tensor gd = mat_vec(G, row_of(D, f.enc.bin(1, k)));
        for (std::size_t c = 0; c < 4; ++c) expected[c] += gd[c] * F.at(k, c) / 5.0;
    }
    const auto got = evolving_context(tape.constant(G), tape.constant(D), f.enc, tape.constant(F), 1, sample);
    expect_close(got.value(), expected, 1e-14);
}

TEST(SeProp, IsolatedNodeIsZero) {
    Fixture f(6, 0, 1, 7, Fixture::small(), true, {{1, 2, 0, 0}, {2, 3, 0, 1}});
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 1, 4);
    const std::vector<ad::Var> fused(4, w.input);
    EXPECT_EQ(se_prop(w.times[0][0], w.distance_table, f.enc, f.graph, fused, 0, 0, {}).value(), Tensor(Shape{4}));
}

TEST(SeProp, SingleNeighborZeroContext) {
    Fixture f(6, 0, 1, 8, Fixture::small(), true, {{0, 3, 0, 2}});
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 1, 4);
    std::mt19937_64 rng(8);
    std::vector<ad::Var> fused;
    for (int t = 0; t < 4; ++t) fused.push_back(tape.constant(random_tensor({6, 4}, rng)));
    // Node 0's only neighbor is 3 at segment 2, inside the window of t = 1; an empty sample means zero context.
    const TimeWeights& tw = w.times[0][1];
    const Tensor gd = mat_vec(tw.distance.value(), row_of(w.distance_table.value(), f.enc.bin(0, 3)));
    Tensor local(Shape{4});
    for (std::size_t c = 0; c < 4; ++c) local[c] = gd[c] * fused[2].value().at(3, c);
    const Tensor expected = mat_vec(tw.prop.value(), cat(local, Tensor(Shape{4})));
    const auto got = se_prop(tw, w.distance_table, f.enc, f.graph, fused, 1, 0, {{{0, 3}, {}}});
    expect_close(got.value(), expected, 1e-14);
    EXPECT_EQ(se_prop(w.times[0][0], w.distance_table, f.enc, f.graph, fused, 0, 0, {}).value(), Tensor(Shape{4}));
}

TEST(SeProp, MatchesNestedLoopReference) {
    Fixture f(9, 30, 2, 9);
    ad::Tape tape;
    const auto w = bind_seconv(f.store.bind_all(tape), f.cfg, 2, 4);
    std::mt19937_64 rng(9);
    std::vector<ad::Var> fused;
    for (int t = 0; t < 4; ++t) fused.push_back(tape.constant(random_tensor({9, 4}, rng)));
    const Segment t = 0;
    const TimeWeights& tw = w.times[0][t];
    Rng srng(1);
    ContextSamples ctx;
    for (NodeId i = 0; i < 9; ++i)
        for (Segment tau : {Segment(3), Segment(0), Segment(1)})
            for (const auto& nb : f.graph.neighbors(i, tau)) ctx[{i, nb.node}] = temporal_sample(f.graph, i, nb.node, t, 3, srng);
    for (NodeId i = 0; i < 9; ++i) {
        Tensor expected(Shape{4});
        for (Segment tau : {Segment(3), Segment(0), Segment(1)})
            for (const auto& nb : f.graph.neighbors(i, tau)) {
                const NodeId j = nb.node;
                const Tensor gd = mat_vec(tw.distance.value(), row_of(w.distance_table.value(), f.enc.bin(i, j)));
                Tensor local(Shape{4}), context(Shape{4});
                for (std::size_t c = 0; c < 4; ++c) local[c] = gd[c] * fused[tau].value().at(j, c);
                const auto& ks = ctx.at({i, j});
                for (NodeId k : ks) {
                    const Tensor gk = mat_vec(tw.distance.value(), row_of(w.distance_table.value(), f.enc.bin(j, k)));
                    for (std::size_t c = 0; c < 4; ++c) context[c] += gk[c] * fused[t].value().at(k, c) / double(ks.size());
                }
                const Tensor term = mat_vec(tw.prop.value(), cat(local, context));
                for (std::size_t c = 0; c < 4; ++c) expected[c] += term[c];
            }
        expect_close(se_prop(tw, w.distance_table, f.enc, f.graph, fused, t, i, ctx).value(), expected, 1e-12);
    }
}

struct Flags {
    const char* name;
    void (*apply)(SeConvConfig&);
};

class BatchedVsReference : public ::testing::TestWithParam<Flags> {};

TEST_P(BatchedVsReference, ForwardAgrees) {
    SeConvConfig cfg = Fixture::small();
    GetParam().apply(cfg);
    for (int seed = 0; seed < 3; ++seed) {
        Fixture f(10, 40, 2, 100 + seed, cfg, seed != 1);
        Rng rng(seed);
        const ContextDraws draws = f.model().draw_contexts(rng);
        const auto ref = reference_forward(f, draws), got = batched_forward(f, draws);
        ASSERT_EQ(got.size(), 4u);
        for (Segment t = 0; t < 4; ++t) {
            EXPECT_EQ(got[t].shape(), (Shape{10, 4}));
            expect_close(got[t], ref[t], 1e-11, std::string(GetParam().name) + " t" + std::to_string(t));
        }
    }
}

INSTANTIATE_TEST_SUITE_P(
    Configs, BatchedVsReference,
    ::testing::Values(Flags{"default", [](SeConvConfig&) {}},
                      Flags{"first_hop_gate", [](SeConvConfig& c) { c.gate_distance = GateDistance::FirstHop; }},
                      Flags{"nonempty_combine", [](SeConvConfig& c) { c.combine = CombineDivisor::NonEmptyPatterns; }},
                      Flags{"span_fuse", [](SeConvConfig& c) { c.fuse = FuseDivisor::WindowSpan; }},
                      Flags{"tanh_between", [](SeConvConfig& c) { c.between_blocks = Activation::Tanh; }},
                      Flags{"no_context", [](SeConvConfig& c) { c.use_context = false; }},
                      Flags{"no_rs", [](SeConvConfig& c) { c.use_rs_agg = false; }},
                      Flags{"no_prop", [](SeConvConfig& c) { c.use_se_prop = false; }},
                      Flags{"three_blocks", [](SeConvConfig& c) { c.blocks = 3; }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Forward, PlainAggregationIsMeanOverSelfAndNeighbors) {
    SeConvConfig cfg = Fixture::small();
    cfg.plain_gcn = true;
    cfg.blocks = 1;
    Fixture f(8, 20, 2, 3, cfg);
    const auto z = batched_forward(f, {});
    const Tensor& X = f.store.value(pname::kInput);
    for (Segment t = 0; t < 4; ++t) {
        const Tensor& W = f.store.value(pname::per_time(0, t, "gcn"));
        for (NodeId i = 0; i < 8; ++i) {
            Tensor mean = row_of(X, i);
            const auto& nb = f.graph.neighbors(i, t);
            for (const auto& n : nb)
                for (std::size_t c = 0; c < 4; ++c) mean[c] += X.at(n.node, c);
            for (double& v : mean.values()) v /= double(nb.size() + 1);
            expect_close(row_of(z[t], i), mat_vec(W, mean), 1e-13);
        }
    }
}

TEST(Forward, DeterministicForFixedSeed) {
    Fixture f(10, 40, 2, 4);
    Rng a(7), b(7);
    const auto m = f.model();
    const auto za = batched_forward(f, m.draw_contexts(a)), zb = batched_forward(f, m.draw_contexts(b));
    for (Segment t = 0; t < 4; ++t) EXPECT_EQ(za[t], zb[t]);
}

TEST(Forward, EmptySegmentsStayFinite) {
    // Edges only at segment 1; the other segments see no local structure.
    Fixture f(8, 0, 2, 5, Fixture::small(), true, {{0, 1, 0, 1}, {1, 2, 1, 1}, {2, 3, 0, 1}});
    Rng rng(1);
    const auto z = batched_forward(f, f.model().draw_contexts(rng));
    for (const auto& zt : z) EXPECT_TRUE(zt.all_finite());
    Fixture empty(5, 0, 1, 6, Fixture::small(), true, {});
    // random_edges is used when no edges are given; build the edgeless graph directly instead.
    empty.graph = DynamicLocationGraph(empty.graph.locations(), {}, 1, 4);
    empty.index = build_second_order_index(empty.graph, true);
    Rng r2(1);
    for (const auto& zt : batched_forward(empty, empty.model().draw_contexts(r2))) {
        EXPECT_TRUE(zt.all_finite());
        EXPECT_EQ(zt, Tensor(Shape{5, 4}));
    }
}

TEST(Forward, GradientMatchesFiniteDifferencesThroughFullStack) {
    Fixture f(12, 50, 2, 12);
    Rng rng(3);
    const auto m = f.model();
    const ContextDraws draws = m.draw_contexts(rng);
    std::map<std::string, Tensor> params;
    for (const auto& [name, e] : f.store.entries()) params.emplace(name, e.value);
    std::mt19937_64 r(11);
    std::vector<Tensor> readout;
    for (int t = 0; t < 4; ++t) readout.push_back(random_tensor({12, 4}, r));
    LossFn loss = [&](ad::Tape& tape, const std::map<std::string, ad::Var>& p) {
        const auto st = m.forward(bind_seconv(p, f.cfg, 2, 4), draws);
        ad::Var acc;
        for (Segment t = 0; t < 4; ++t) {
            const auto term = ad::sum(ad::hadamard(ad::tanh(st.z[t]), tape.constant(readout[t])));
            acc = acc.valid() ? ad::add(acc, term) : term;
        }
        return acc;
    };
    const GradCheck res = check_gradients(loss, params, 1e-5, 6);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
    EXPECT_GT(res.checked, 500u);
}

TEST(Forward, PermutationEquivariance) {
    Fixture f(12, 45, 2, 21);
    std::vector<NodeId> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
    Fixture g = Fixture(12, 45, 2, 21);
    std::vector<Location> locs(12);
    for (NodeId v = 0; v < 12; ++v) locs[perm[v]] = {perm[v], f.graph.locations()[v].lon, f.graph.locations()[v].lat};
    std::vector<RelationalEdge> edges;
    for (Segment t = 0; t < 4; ++t)
        for (const auto& e : f.graph.edges(t)) edges.push_back({perm[e.src], perm[e.dst], e.relation, t});
    g.graph = DynamicLocationGraph(locs, edges, 2, 4);
    g.index = build_second_order_index(g.graph, true);
    g.enc = DistanceEncoder(locs, f.enc.boundaries());
    Tensor& in = g.store.value(pname::kInput);
    const Tensor& src = f.store.value(pname::kInput);
    for (NodeId v = 0; v < 12; ++v)
        for (std::size_t c = 0; c < 4; ++c) in.at(perm[v], c) = src.at(v, c);

    Rng rng(2);
    const auto mf = f.model(), mg = g.model();
    const ContextDraws df = mf.draw_contexts(rng);
    ContextDraws dg(df.size(), std::vector<std::vector<std::vector<NodeId>>>(4));
    for (std::size_t b = 0; b < df.size(); ++b)
        for (Segment t = 0; t < 4; ++t) {
            std::map<std::pair<NodeId, NodeId>, std::vector<NodeId>> by_pair;
            for (std::size_t p = 0; p < mf.edge_pairs(t).size(); ++p) {
                const auto [i, j] = mf.edge_pairs(t)[p];
                std::vector<NodeId> ks;
                for (NodeId k : df[b][t][p]) ks.push_back(perm[k]);
                by_pair[{perm[i], perm[j]}] = ks;
            }
            for (const auto& pr : mg.edge_pairs(t)) dg[b][t].push_back(by_pair.at(pr));
        }
    const auto zf = batched_forward(f, df), zg = batched_forward(g, dg);
    for (Segment t = 0; t < 4; ++t)
        for (NodeId v = 0; v < 12; ++v) expect_close(row_of(zg[t], perm[v]), row_of(zf[t], v), 1e-12);
}

TEST(Forward, ReceptiveFieldIsSixHops) {
    // Undirected chain 0 - 1 - ... - 19 at every segment.
    std::vector<RelationalEdge> chain;
    for (NodeId v = 0; v + 1 < 20; ++v)
        for (Segment t = 0; t < 4; ++t) chain.push_back({v, v + 1, RelationId(v % 2), t});
    Fixture f(20, 0, 2, 31, Fixture::small(), false, chain);
    Rng rng(4);
    const ContextDraws draws = f.model().draw_contexts(rng);
    const auto before = batched_forward(f, draws);
    Tensor& in = f.store.value(pname::kInput);
    for (std::size_t c = 0; c < 4; ++c) in.at(0, c) = 0.0;
    const auto after = batched_forward(f, draws);
    for (Segment t = 0; t < 4; ++t) {
        for (NodeId v = 7; v < 20; ++v) EXPECT_EQ(row_of(after[t], v), row_of(before[t], v)) << "node " << v;
        for (NodeId v = 0; v <= 6; ++v) EXPECT_NE(row_of(after[t], v), row_of(before[t], v)) << "node " << v;
    }
}

TEST(Calibration, BlockOutputsKeepInputScale) {
    SeConvConfig cfg = Fixture::small();
    cfg.dim = 16;
    Fixture f(40, 200, 2, 41, cfg);
    Rng rng(5);
    const auto m = f.model();
    const ContextDraws draws = m.draw_contexts(rng);
    calibrate_block_gains(f.store, m, draws, 3);
    ad::Tape tape;
    const auto st = m.forward(bind_seconv(f.store.bind_all(tape), f.cfg, 2, 4), draws);
    const double target = rms(st.input.front());
    for (std::size_t b = 0; b < cfg.blocks; ++b) EXPECT_NEAR(rms(st.output[b]) / target, 1.0, 0.05) << "block " << b;
}

TEST(Params, ShapesFollowTheLayout) {
    SeConvConfig cfg;
    Fixture f(10, 30, 2, 1, cfg);
    const std::size_t d = 64;
    EXPECT_EQ(f.store.value(pname::kInput).shape(), (Shape{10, d}));
    EXPECT_EQ(f.store.value(pname::kDistance).shape(), (Shape{6, d}));
    for (std::size_t b = 0; b < 2; ++b)
        for (Segment t = 0; t < 4; ++t) {
            for (std::size_t p = 0; p < 4; ++p) {
                const auto pat = pattern_at(p, 2);
                EXPECT_EQ(f.store.value(pname::path(b, t, pat, "path")).shape(), (Shape{d, d}));
                EXPECT_EQ(f.store.value(pname::path(b, t, pat, "gate")).shape(), (Shape{d}));
                EXPECT_EQ(f.store.value(pname::path(b, t, pat, "spatial")).shape(), (Shape{d, 2 * d}));
                EXPECT_EQ(f.store.value(pname::path(b, t, pat, "relational")).shape(), (Shape{d, 2 * d}));
                EXPECT_EQ(f.store.value(pname::path(b, t, pat, "distance")).shape(), (Shape{d, d}));
            }
            EXPECT_EQ(f.store.value(pname::per_time(b, t, "fuse")).shape(), (Shape{d, d}));
            EXPECT_EQ(f.store.value(pname::per_time(b, t, "distance")).shape(), (Shape{d, d}));
            EXPECT_EQ(f.store.value(pname::per_time(b, t, "prop")).shape(), (Shape{d, 2 * d}));
        }
    EXPECT_EQ(f.store.entries().size(), 2u + 2 * 4 * (4 * 5 + 3));
}
