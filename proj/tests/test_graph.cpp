#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <unordered_set>

#include "oracles.hpp"
#include "support.hpp"

using namespace seenet;
using namespace testing_support;

namespace {

std::vector<Location> line_locations(std::size_t n) {
    std::vector<Location> out;
    for (NodeId v = 0; v < n; ++v) out.push_back({v, 116.0 + 0.001 * double(v), 40.0});
    return out;
}

/// Places nodes at given planar offsets (meters) around a centroid that the offsets themselves balance to zero.
std::vector<Location> at_offsets(const std::vector<std::pair<double, double>>& xy) {
    constexpr double lon0 = 116.4, lat0 = 39.9, k = std::numbers::pi / 180.0;
    std::vector<Location> out;
    for (NodeId v = 0; v < xy.size(); ++v) {
        const double lat = lat0 + xy[v].second / (Projection::kEarthRadius * k);
        const double lon = lon0 + xy[v].first / (Projection::kEarthRadius * k * std::cos(lat0 * k));
        out.push_back({v, lon, lat});
    }
    return out;
}

}  // namespace

TEST(Segments, WindowIsCyclic) {
    EXPECT_EQ(segment_window(0, 4), (std::vector<Segment>{3, 0, 1}));
    EXPECT_EQ(segment_window(3, 4), (std::vector<Segment>{2, 3, 0}));
    EXPECT_EQ(prev_segment(0, 4), 3u);
    EXPECT_EQ(segment_of_hour(6), 0u);
    EXPECT_EQ(segment_of_hour(12), 1u);
    EXPECT_EQ(segment_of_hour(23), 2u);
    EXPECT_EQ(segment_of_hour(0), 3u);
    EXPECT_EQ(parse_segment("midnight"), 3u);
    EXPECT_EQ(parse_segment("2"), 2u);
    EXPECT_THROW(parse_segment("dusk"), InputError);
}

TEST(Graph, AdjacencyReflectsEdgeSets) {
    std::mt19937_64 rng(2);
    const auto edges = random_edges(20, 120, 3, 4, rng);
    const DynamicLocationGraph g(line_locations(20), edges, 3);
    EXPECT_EQ(g.num_edges(), edges.size());
    std::set<RelationalEdge> from_index;
    for (Segment t = 0; t < 4; ++t)
        for (NodeId v = 0; v < 20; ++v)
            for (const Neighbor& n : g.neighbors(v, t)) from_index.insert({v, n.node, n.relation, t});
    EXPECT_EQ(from_index, std::set<RelationalEdge>(edges.begin(), edges.end()));
}

TEST(Graph, SymmetrizeAddsReverseEdges) {
    const DynamicLocationGraph g(line_locations(3), {{0, 1, 0, 0}}, 1, 4, true);
    EXPECT_TRUE(g.has_edge(1, 0, 0, 0));
    const DynamicLocationGraph d(line_locations(3), {{0, 1, 0, 0}}, 1);
    EXPECT_FALSE(d.has_edge(1, 0, 0, 0));
}

TEST(Graph, InvalidInputsAreRejected) {
    EXPECT_THROW(DynamicLocationGraph(line_locations(3), {{0, 0, 0, 0}}, 1), InputError);
    EXPECT_THROW(DynamicLocationGraph(line_locations(3), {{0, 5, 0, 0}}, 1), InputError);
    EXPECT_THROW(DynamicLocationGraph(line_locations(3), {{0, 1, 2, 0}}, 1), InputError);
    auto locs = line_locations(2);
    locs[1].lat = std::nan("");
    EXPECT_THROW(DynamicLocationGraph(locs, {}, 1), InputError);
}

TEST(Graph, CsvRoundTrip) {
    std::mt19937_64 rng(8);
    const auto locs = random_locations(10, rng);
    const auto edges = random_edges(10, 30, 2, 4, rng);
    const std::string dir = scratch_dir("graph_csv");
    write_nodes_csv(dir + "/nodes.csv", locs);
    write_edges_csv(dir + "/edges.csv", edges);
    const auto l2 = read_nodes_csv(dir + "/nodes.csv");
    ASSERT_EQ(l2.size(), locs.size());
    for (std::size_t i = 0; i < locs.size(); ++i) {
        EXPECT_EQ(l2[i].lon, locs[i].lon);
        EXPECT_EQ(l2[i].lat, locs[i].lat);
    }
    EXPECT_EQ(read_edges_csv(dir + "/edges.csv"), edges);
}

TEST(SecondOrder, ChainGivesSinglePair) {
    const DynamicLocationGraph g(line_locations(3), {{0, 1, 0, 0}, {1, 2, 1, 0}}, 2);
    const auto idx = build_second_order_index(g, false);
    EXPECT_EQ(idx.pairs(0, 0, {0, 1}), (std::vector<std::pair<NodeId, NodeId>>{{1, 2}}));
    EXPECT_TRUE(idx.pairs(0, 0, {1, 0}).empty());
    EXPECT_TRUE(build_second_order_index(g, true).pairs(0, 0, {0, 1}).empty());
}

TEST(SecondOrder, ReturnToOriginIsExcluded) {
    const DynamicLocationGraph g(line_locations(2), {{0, 1, 0, 0}, {1, 0, 0, 0}}, 1);
    EXPECT_EQ(build_second_order_index(g, false).size(), 0u);
}

TEST(SecondOrder, FilterKeepsEndpointsWithTwoPaths) {
    // 0 -> 1 -> 3 and 0 -> 2 -> 3 reach 3 twice; 0 -> 1 -> 4 only once.
    const DynamicLocationGraph g(line_locations(5), {{0, 1, 0, 0}, {0, 2, 0, 0}, {1, 3, 0, 0}, {2, 3, 0, 0}, {1, 4, 0, 0}}, 1);
    const auto on = build_second_order_index(g, true).pairs(0, 0, {0, 0});
    EXPECT_EQ(on, (std::vector<std::pair<NodeId, NodeId>>{{1, 3}, {2, 3}}));
    EXPECT_EQ(build_second_order_index(g, false).pairs(0, 0, {0, 0}).size(), 3u);
}

TEST(SecondOrder, FilterCountsParallelRelationsAsDistinctPaths) {
    // One middle node, two relation labels on the first hop: two distinct (j, pattern) paths.
    const DynamicLocationGraph g(line_locations(3), {{0, 1, 0, 0}, {0, 1, 1, 0}, {1, 2, 0, 0}}, 2);
    const auto idx = build_second_order_index(g, true);
    EXPECT_EQ(idx.pairs(0, 0, {0, 0}).size(), 1u);
    EXPECT_EQ(idx.pairs(0, 0, {1, 0}).size(), 1u);
}

class SecondOrderOracle : public ::testing::TestWithParam<int> {};

TEST_P(SecondOrderOracle, MatchesExhaustiveEnumeration) {
    std::mt19937_64 rng(GetParam());
    const std::size_t n = 30 + GetParam() % 21;
    const auto edges = random_edges(n, 3 * n + rng() % (4 * n), 2, 4, rng);
    const DynamicLocationGraph g(line_locations(n), edges, 2);
    for (bool filter : {false, true}) {
        const auto idx = build_second_order_index(g, filter);
        std::size_t total = 0;
        for (Segment t = 0; t < 4; ++t)
            for (std::size_t p = 0; p < 4; ++p) {
                const auto pat = pattern_at(p, 2);
                const auto expected = oracle::second_order(g, t, pat, filter);
                EXPECT_EQ(oracle::indexed(idx, t, pat), expected) << "filter " << filter << " t " << t << " p " << p;
                total += expected.size();
            }
        EXPECT_EQ(idx.size(), total);
        if (!filter) {
            EXPECT_GT(total, 0u);
        }
    }
}

INSTANTIATE_TEST_SUITE_P(RandomGraphs, SecondOrderOracle, ::testing::Range(0, 6));

TEST(TemporalSample, ForcedRepetition) {
    const DynamicLocationGraph g(line_locations(6), {{0, 5, 0, 1}, {0, 1, 0, 1}}, 1);
    Rng rng(1);
    EXPECT_EQ(temporal_sample(g, 0, 1, 1, 3, rng), (std::vector<NodeId>{5, 5, 5}));
}

TEST(TemporalSample, EmptyUnionGivesEmptyList) {
    const DynamicLocationGraph g(line_locations(4), {{1, 2, 0, 0}}, 1);
    Rng rng(1);
    EXPECT_TRUE(temporal_sample(g, 0, 1, 0, 4, rng).empty());
    EXPECT_THROW(temporal_sample(g, 0, 1, 0, 0, rng), ConfigError);
}

TEST(TemporalSample, WindowAtFirstSegmentWrapsToLast) {
    // Neighbor 1+t of node 0 lives only at segment t.
    const DynamicLocationGraph g(line_locations(6), {{0, 1, 0, 0}, {0, 2, 0, 1}, {0, 3, 0, 2}, {0, 4, 0, 3}}, 1);
    Rng rng(4);
    const auto draws = temporal_sample(g, 0, 5, 0, 2000, rng);
    EXPECT_EQ(std::set<NodeId>(draws.begin(), draws.end()), (std::set<NodeId>{1, 2, 4}));
}

TEST(TemporalSample, FrequenciesAreUniform) {
    std::vector<RelationalEdge> edges;
    for (NodeId v = 1; v <= 8; ++v) edges.push_back({0, v, 0, Segment(v % 3)});  // segments 0, 1, 2
    edges.push_back({0, 9, 0, 1});
    const DynamicLocationGraph g(line_locations(10), edges, 1);
    Rng rng(123);
    const std::size_t draws = 90000;
    const auto s = temporal_sample(g, 0, 9, 1, draws, rng);
    std::map<NodeId, std::size_t> freq;
    for (NodeId v : s) ++freq[v];
    ASSERT_EQ(freq.size(), 8u);
    EXPECT_EQ(freq.count(9), 0u);
    const double p = 1.0 / 8, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    double chi2 = 0;
    for (const auto& [v, c] : freq) {
        EXPECT_LT(std::abs(double(c) - mean), 3 * sigma) << "node " << v;
        chi2 += (double(c) - mean) * (double(c) - mean) / mean;
    }
    EXPECT_LT(chi2, 24.32);  // 7 dof, p = 0.001
}

TEST(Grid, ManhattanBoundaries) {
    EXPECT_EQ(manhattan({0, 0}, {3, 2}), 5);
    const auto g = assign_grid(at_offsets({{500, 500}, {2500, 3500}, {1500, 1500}, {-500, -500}, {-2500, -3500}, {-1500, -1500}}), 1000);
    EXPECT_EQ(g.cell_of(0), (GridCell{0, 0}));
    EXPECT_EQ(g.cell_of(1), (GridCell{3, 2}));
    EXPECT_EQ(g.cell_of(2), (GridCell{1, 1}));
    const auto s = grid_negative_candidates(g, 0, 2, 6);
    EXPECT_TRUE(std::count(s.begin(), s.end(), NodeId(1)));   // 2 < 5 < 6
    EXPECT_FALSE(std::count(s.begin(), s.end(), NodeId(2)));  // 2 is not > 2
    EXPECT_THROW(grid_negative_candidates(g, 0, 6, 6), ConfigError);
}

TEST(Grid, IdenticalAndNearbyNodesShareCells) {
    const auto g = assign_grid(at_offsets({{400, 400}, {400, 400}, {410, 400}, {-400, -400}, {-410, -400}, {-400, -400}}), 1000);
    EXPECT_EQ(g.cell_of(0), g.cell_of(1));
    EXPECT_EQ(g.cell_of(0), g.cell_of(2));
    EXPECT_THROW(assign_grid(line_locations(2), 0.0), ConfigError);
}

TEST(Grid, MembershipInvertsCellMap) {
    std::mt19937_64 rng(6);
    const auto locs = random_locations(200, rng, 12000);
    const auto g = assign_grid(locs, 1000);
    std::size_t total = 0;
    for (const auto& [cell, members] : g.cells()) {
        total += members.size();
        for (NodeId v : members) EXPECT_EQ(g.cell_of(v), cell);
    }
    EXPECT_EQ(total, locs.size());
    const Projection proj(locs);
    for (const Location& l : locs) {
        const auto p = proj.project(l);
        EXPECT_EQ(g.cell_of(l.id), (GridCell{std::int64_t(std::floor(p.y / 1000)), std::int64_t(std::floor(p.x / 1000))}));
    }
}

TEST(Grid, CandidatesMatchExhaustiveScan) {
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        const auto locs = random_locations(50, rng, 10000);
        const auto g = assign_grid(locs, 1000);
        const GridNegativeSampler sampler(g, 2, 6);
        for (NodeId v = 0; v < 50; ++v) {
            const auto expected = oracle::grid_band(locs, 1000, v, 2, 6);
            EXPECT_EQ(sampler.candidates(v), expected) << "seed " << seed << " node " << v;
            Rng r(v);
            for (NodeId u : sampler.sample(v, 20, r)) {
                const auto m = manhattan(g.cell_of(v), g.cell_of(u));
                if (!expected.empty()) {
                    EXPECT_TRUE(m > 2 && m < 6);
                }
                EXPECT_NE(u, v);
            }
        }
    }
}

TEST(Grid, EmptyCandidateSetFallsBackToUniform) {
    const auto g = assign_grid(at_offsets({{100, 100}, {-100, -100}, {150, -150}}), 1000);
    const GridNegativeSampler sampler(g, 2, 6);
    EXPECT_TRUE(sampler.candidates(0).empty());
    Rng rng(3);
    const auto s = sampler.sample(0, 400, rng);
    ASSERT_EQ(s.size(), 400u);
    EXPECT_EQ(std::set<NodeId>(s.begin(), s.end()), (std::set<NodeId>{1, 2}));
}

TEST(Split, ExactRatiosOnOneSegment) {
    std::vector<RelationalEdge> edges;
    for (NodeId v = 0; v < 100; ++v) edges.push_back({v, v + 100, 0, 0});
    Rng rng(5);
    const auto s = split_dataset(edges, 1, {}, rng);
    EXPECT_EQ(s.train[0].size(), 80u);
    EXPECT_EQ(s.valid[0].size(), 10u);
    EXPECT_EQ(s.test[0].size(), 10u);
}

TEST(Split, TooFewEdgesIsConfigError) {
    std::vector<RelationalEdge> edges;
    for (NodeId v = 0; v < 9; ++v) edges.push_back({v, v + 20, 0, 0});
    Rng rng(5);
    EXPECT_THROW(split_dataset(edges, 1, {}, rng), ConfigError);
}

TEST(Split, HeldOutPairsNeverTrainAndPartitionIsComplete) {
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 g(seed);
        // Few nodes so pairs recur across segments and in both directions.
        const auto edges = random_edges(25, 400, 2, 4, g);
        Rng rng(seed);
        const auto s = split_dataset(edges, 4, {}, rng);
        std::unordered_set<std::uint64_t> held;
        for (Segment t = 0; t < 4; ++t) {
            for (const auto& e : s.valid[t]) held.insert(undirected_key(e.src, e.dst));
            for (const auto& e : s.test[t]) held.insert(undirected_key(e.src, e.dst));
        }
        std::size_t excluded = 0;
        for (Segment t = 0; t < 4; ++t) {
            for (const auto& e : s.train[t]) EXPECT_FALSE(held.count(undirected_key(e.src, e.dst)));
            std::multiset<RelationalEdge> all(s.train[t].begin(), s.train[t].end());
            all.insert(s.valid[t].begin(), s.valid[t].end());
            all.insert(s.test[t].begin(), s.test[t].end());
            all.insert(s.excluded[t].begin(), s.excluded[t].end());
            std::multiset<RelationalEdge> original;
            for (const auto& e : edges)
                if (e.segment == t) original.insert(e);
            EXPECT_EQ(all, original);
            const double n = double(original.size());
            EXPECT_EQ(s.valid[t].size(), std::size_t(std::llround(0.1 * n)));
            EXPECT_EQ(s.test[t].size(), std::size_t(std::llround(0.1 * n)));
            excluded += s.excluded[t].size();
        }
        EXPECT_GT(excluded, 0u);
    }
}

TEST(Split, ManifestRoundTrip) {
    std::mt19937_64 g(1);
    const auto edges = random_edges(30, 200, 2, 4, g);
    Rng rng(1);
    const auto s = split_dataset(edges, 4, {}, rng);
    const std::string dir = scratch_dir("split");
    write_split_csv(dir + "/split.csv", s);
    const auto back = read_split_csv(dir + "/split.csv", 4);
    EXPECT_EQ(back.train, s.train);
    EXPECT_EQ(back.valid, s.valid);
    EXPECT_EQ(back.test, s.test);
}

TEST(Split, SameSeedSameSplit) {
    std::mt19937_64 g(1);
    const auto edges = random_edges(30, 200, 2, 4, g);
    Rng a(9), b(9);
    EXPECT_EQ(split_dataset(edges, 4, {}, a).test, split_dataset(edges, 4, {}, b).test);
}
