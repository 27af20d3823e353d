#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace seenet;
using namespace testing_support;

TEST(FitBins, UniformQuantiles) {
    const auto b = fit_bins({1, 2, 3, 4, 5, 6, 7, 8}, 4);
    EXPECT_EQ(b.bounds, (std::vector<double>{2, 4, 6, 8}));
    std::vector<int> count(4, 0);
    for (double d = 1; d <= 8; ++d) ++count[bin_index(b, d)];
    EXPECT_EQ(count, (std::vector<int>{2, 2, 2, 2}));
}

TEST(FitBins, ConstantDistribution) {
    const auto b = fit_bins(std::vector<double>(50, 3.5), 5);
    EXPECT_EQ(b.bounds, std::vector<double>(5, 3.5));
}

TEST(FitBins, InvalidInputs) {
    EXPECT_THROW(fit_bins({}, 4), ContractError);
    EXPECT_THROW(fit_bins({1.0, -2.0}, 2), ContractError);
    EXPECT_THROW(fit_bins({1.0}, 0), ConfigError);
    const auto b = fit_bins({1.0, 2.0}, 4);  // more bins than distinct values: repeated boundaries
    EXPECT_EQ(b.num_bins(), 4u);
    EXPECT_TRUE(std::is_sorted(b.bounds.begin(), b.bounds.end()));
}

TEST(FitBins, MixtureMassIsEqualPerBin) {
    std::mt19937_64 rng(11);
    std::lognormal_distribution<double> near(6.0, 0.6);
    std::normal_distribution<double> far(6000.0, 1500.0);
    std::bernoulli_distribution pick(0.7);
    std::vector<double> d;
    while (d.size() < 10000) {
        const double x = pick(rng) ? near(rng) : far(rng);
        if (x >= 0) d.push_back(x);
    }
    const auto b = fit_bins(d, 40);
    std::vector<std::size_t> count(40, 0);
    for (double x : d) ++count[bin_index(b, x)];
    for (std::size_t k = 0; k < 40; ++k) {
        EXPECT_NEAR(double(count[k]) / 10000, 1.0 / 40, 0.01) << "bin " << k;
        EXPECT_LE(std::abs(double(count[k]) - 250.0), 1.0) << "bin " << k;  // distinct values: within one count
    }
    EXPECT_GE(b.bounds.back(), *std::max_element(d.begin(), d.end()));
}

TEST(FitBins, OccupancyWithinOneForAnyDistinctSample) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 500, nb = 1 + rng() % 45;
        std::vector<double> d;
        std::uniform_real_distribution<double> u(0, 5000);
        for (std::size_t i = 0; i < n; ++i) d.push_back(u(rng));
        const auto b = fit_bins(d, nb);
        std::vector<std::size_t> count(nb, 0);
        for (double x : d) ++count[bin_index(b, x)];
        const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
        if (nb <= n) {
            EXPECT_LE(*hi - *lo, 1u) << "n " << n << " bins " << nb;
        }
    }
}

TEST(FitBins, MatchesEmpiricalCdfOracle) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng() % 120, nb = 1 + rng() % 40;
        std::vector<double> d;
        for (std::size_t i = 0; i < n; ++i) d.push_back(double(rng() % 60) * 37.5);  // repeats on purpose
        const auto b = fit_bins(d, nb);
        EXPECT_EQ(b.bounds, oracle::quantile_bounds(d, nb)) << "trial " << trial;
        for (double x = -10; x < 2300; x += 12.5) EXPECT_EQ(bin_index(b, x), oracle::bin_of(b.bounds, x));
    }
}

TEST(BinIndex, DefinitionAndClamps) {
    const DistanceBinBoundaries b{{2, 4, 6, 8}};
    EXPECT_EQ(bin_index(b, 5), 2u);
    EXPECT_EQ(bin_index(b, 0), 0u);
    EXPECT_EQ(bin_index(b, 8), 3u);
    EXPECT_EQ(bin_index(b, 1e9), 3u);
}

TEST(BinIndex, Monotone) {
    const auto b = fit_bins({0.5, 1, 1, 3, 7, 7, 7, 20, 55, 90}, 6);
    std::size_t prev = 0;
    for (double d = 0; d < 120; d += 0.25) {
        const auto k = bin_index(b, d);
        EXPECT_GE(k, prev);
        prev = k;
    }
}

TEST(DistanceEncoder, SelfDistanceAndSymmetry) {
    std::mt19937_64 rng(5);
    const auto locs = random_locations(30, rng);
    const auto pts = Projection(locs).project_all(locs);
    std::vector<double> d;
    for (std::size_t a = 0; a < 30; ++a)
        for (std::size_t b = a + 1; b < 30; ++b) d.push_back(planar_distance(pts[a], pts[b]));
    const DistanceEncoder enc(locs, fit_bins(d, 10));
    ad::Tape tape;
    const auto table = tape.constant(random_tensor({10, 4}, rng));
    for (NodeId a = 0; a < 30; ++a) {
        EXPECT_EQ(enc.bin(a, a), 0u);
        for (NodeId b = 0; b < 30; ++b) {
            EXPECT_EQ(enc.distance(a, b), enc.distance(b, a));
            const Tensor ab = enc.embed(table, a, b).value();
            EXPECT_EQ(ab, enc.embed(table, b, a).value());
        }
    }
}

TEST(DistanceEncoder, ProjectedDistanceMatchesHaversineAtCityScale) {
    const std::vector<Location> locs{{0, 116.40, 39.90}, {1, 116.45, 39.93}};
    const DistanceEncoder enc(locs, DistanceBinBoundaries{{1e9}});
    constexpr double k = std::numbers::pi / 180.0, R = Projection::kEarthRadius;
    const double dlat = (39.93 - 39.90) * k, dlon = (116.45 - 116.40) * k;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(39.90 * k) * std::cos(39.93 * k) * std::sin(dlon / 2) * std::sin(dlon / 2);
    const double great_circle = 2 * R * std::asin(std::sqrt(h));
    EXPECT_NEAR(enc.distance(0, 1), great_circle, 1e-3 * great_circle);
}

TEST(DistanceEncoder, AdamStepTouchesOnlyTheLookedUpRow) {
    ParamStore store;
    std::mt19937_64 rng(1);
    store.add("ade.embedding", random_tensor({8, 3}, rng));
    const Tensor before = store.value("ade.embedding");
    ad::Tape tape;
    const auto row = ad::embedding(store.bind(tape, "ade.embedding"), 5);
    store.adam_step(tape.backward(ad::sq_norm(row)), AdamConfig{});
    const Tensor& after = store.value("ade.embedding");
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            if (r == 5) EXPECT_NE(after.at(r, c), before.at(r, c));
            else EXPECT_EQ(after.at(r, c), before.at(r, c));
        }
}

TEST(FittingDistances, EdgePairsOrAllPairs) {
    const std::vector<Location> locs{{0, 116.40, 39.90}, {1, 116.41, 39.90}, {2, 116.40, 39.91}};
    // Both directions of 0-1 at two segments count once.
    const DynamicLocationGraph g(locs, {{0, 1, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 2}}, 1);
    EXPECT_EQ(fitting_distances(g, false).size(), 1u);
    EXPECT_EQ(fitting_distances(g, true).size(), 3u);
}
