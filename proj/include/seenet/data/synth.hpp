#pragma once

// Planted-relationship city generator.
//
// Locations sit in Gaussian clusters and carry a category. Two relations are
// planted per unordered pair and segment:
//   0 (competitive)   same category, nearby
//   1 (complementary) paired categories (c, c ^ 1), reach further
// Edge probability decays with distance and follows a per-relation daily
// activity profile with a sparse midnight. Each (pair, relation) draws one
// latent uniform shared by all segments, so links persist through the day,
// and a fraction of complementary links turn competitive at night.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "seenet/data/manifest.hpp"
#include "seenet/graph.hpp"
#include "seenet/grid.hpp"
#include "seenet/rng.hpp"

namespace seenet {

struct SynthConfig {
    std::size_t num_nodes = 200;
    std::size_t num_segments = kDefaultSegments;
    std::size_t num_relations = 2;
    std::uint64_t seed = 7;
    /// Fraction of ground-truth edges per segment that are observed.
    double sparsity = 0.8;
    std::size_t clusters = 0;  // 0: one per 25 nodes
    std::size_t categories = 4;
    double extent_m = 12000.0;
    double cluster_spread_m = 450.0;
    double competitive_scale_m = 900.0;
    double complementary_scale_m = 1800.0;
    double density = 2.0;
    double night_flip = 0.3;
    double center_lon = 116.40;
    double center_lat = 39.90;
};

struct SynthDataset {
    std::vector<Location> locations;
    std::vector<std::size_t> category;
    std::vector<std::size_t> cluster;
    std::vector<RelationalEdge> truth, observed, hidden;
    std::size_t num_relations = 2;
    std::size_t num_segments = kDefaultSegments;
};

namespace detail {

/// Daily activity per relation; entries beyond the table reuse its last column.
inline double activity(RelationId r, Segment t, std::size_t num_segments) {
    static constexpr double kProfile[2][4] = {{1.0, 0.85, 0.6, 0.18}, {0.55, 1.0, 0.9, 0.15}};
    const std::size_t col = num_segments == 4 ? t : std::min<std::size_t>(t * 4 / std::max<std::size_t>(num_segments, 1), 3);
    return kProfile[r % 2][col];
}

}  // namespace detail

inline SynthDataset synth_generate(const SynthConfig& cfg) {
    if (cfg.num_nodes < 50) throw ConfigError("synth: need at least 50 nodes");
    if (cfg.num_segments == 0 || cfg.num_relations == 0) throw ConfigError("synth: need segments and relations");
    if (!(cfg.sparsity > 0 && cfg.sparsity <= 1)) throw ConfigError("synth: sparsity must be in (0, 1]");
    if (!(cfg.density > 0)) throw ConfigError("synth: density must be positive");
    if (cfg.categories < 2) throw ConfigError("synth: need at least 2 categories");
    Rng rng = make_stream(cfg.seed, "synth");
    const std::size_t n = cfg.num_nodes;
    const std::size_t n_clusters = cfg.clusters ? cfg.clusters : std::max<std::size_t>(4, n / 25);

    SynthDataset out;
    out.num_relations = cfg.num_relations;
    out.num_segments = cfg.num_segments;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Projection::Point> centers(n_clusters);
    for (auto& c : centers) c = {(uni(rng) - 0.5) * cfg.extent_m, (uni(rng) - 0.5) * cfg.extent_m};
    constexpr double deg = std::numbers::pi / 180.0;
    const double m_per_lat = Projection::kEarthRadius * deg;
    const double m_per_lon = m_per_lat * std::cos(cfg.center_lat * deg);
    std::vector<Projection::Point> pts(n);
    for (NodeId v = 0; v < n; ++v) {
        const std::size_t c = uniform_index(rng, n_clusters);
        pts[v] = {centers[c].x + gauss(rng) * cfg.cluster_spread_m, centers[c].y + gauss(rng) * cfg.cluster_spread_m};
        out.cluster.push_back(c);
        out.category.push_back(uniform_index(rng, cfg.categories));
        out.locations.push_back({v, cfg.center_lon + pts[v].x / m_per_lon, cfg.center_lat + pts[v].y / m_per_lat});
    }

    for (NodeId a = 0; a < n; ++a)
        for (NodeId b = a + 1; b < n; ++b) {
            const double dist = planar_distance(pts[a], pts[b]);
            const std::size_t ca = out.category[a], cb = out.category[b];
            for (RelationId r = 0; r < cfg.num_relations; ++r) {
                const double latent = uni(rng);
                const double flip = uni(rng);
                bool eligible;
                double scale;
                if (r % 2 == 0) {
                    eligible = ca == cb;
                    scale = cfg.competitive_scale_m;
                } else {
                    eligible = (ca ^ 1) == cb;
                    scale = cfg.complementary_scale_m;
                }
                if (r >= 2) eligible = eligible && (a + b + r) % 3 == 0;
                if (!eligible) continue;
                const double base = 0.9 * cfg.density * std::exp(-dist / scale);
                for (Segment t = 0; t < cfg.num_segments; ++t) {
                    if (latent >= std::min(1.0, base * detail::activity(r, t, cfg.num_segments))) continue;
                    RelationId rel = r;
                    if (r == 1 && segment_of_hour(20) == t && flip < cfg.night_flip) rel = 0;
                    out.truth.push_back({a, b, rel, t});
                }
            }
        }
    std::sort(out.truth.begin(), out.truth.end());
    out.truth.erase(std::unique(out.truth.begin(), out.truth.end()), out.truth.end());

    Rng pick = make_stream(cfg.seed, "synth.observe");
    for (Segment t = 0; t < cfg.num_segments; ++t) {
        std::vector<RelationalEdge> seg;
        for (const auto& e : out.truth)
            if (e.segment == t) seg.push_back(e);
        const auto keep = std::size_t(std::llround(cfg.sparsity * double(seg.size())));
        if (keep < 10)
            throw ConfigError("synth: segment " + segment_name(t) + " would observe " + std::to_string(keep) +
                              " edges, need at least 10; raise nodes or density");
        std::shuffle(seg.begin(), seg.end(), pick);
        out.observed.insert(out.observed.end(), seg.begin(), seg.begin() + std::ptrdiff_t(keep));
        out.hidden.insert(out.hidden.end(), seg.begin() + std::ptrdiff_t(keep), seg.end());
    }
    std::sort(out.observed.begin(), out.observed.end());
    std::sort(out.hidden.begin(), out.hidden.end());
    return out;
}

/// Writes nodes.csv, edges.csv (observed), hidden.csv, truth.csv and manifest.json into `dir`.
inline DatasetManifest write_synth_dataset(const std::string& dir, const SynthDataset& s, const SynthConfig& cfg) {
    write_nodes_csv(dir + "/nodes.csv", s.locations);
    write_edges_csv(dir + "/edges.csv", s.observed);
    write_edges_csv(dir + "/hidden.csv", s.hidden);
    write_edges_csv(dir + "/truth.csv", s.truth);
    DatasetManifest m = make_manifest(s.locations.size(), s.num_relations, s.num_segments, s.observed);
    m.relation_labels = {"competitive", "complementary"};
    m.relation_labels.resize(s.num_relations, "other");
    m.parameters = {{"generator", "synth"},
                    {"seed", cfg.seed},
                    {"nodes", cfg.num_nodes},
                    {"sparsity", cfg.sparsity},
                    {"density", cfg.density},
                    {"categories", cfg.categories},
                    {"clusters", cfg.clusters},
                    {"truth_edges", s.truth.size()},
                    {"hidden_edges", s.hidden.size()}};
    m.content_hash = content_hash({dir + "/nodes.csv", dir + "/edges.csv", dir + "/hidden.csv", dir + "/truth.csv"});
    write_manifest(dir + "/manifest.json", m);
    return m;
}

}  // namespace seenet
