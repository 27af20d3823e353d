#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "seenet/autodiff.hpp"
#include "seenet/graph.hpp"
#include "seenet/grid.hpp"
#include "seenet/log.hpp"

namespace seenet {

/// Quantile boundaries of an empirical distance distribution, one per bin.
/// Bin k (0-based) holds distances in (bounds[k-1], bounds[k]]; bin 0 also takes everything below bounds[0].
struct DistanceBinBoundaries {
    std::vector<double> bounds;

    std::size_t num_bins() const noexcept { return bounds.size(); }
};

/// b_k is the lower k/N_b quantile: the smallest sample x with F(x) >= k/N_b.
inline DistanceBinBoundaries fit_bins(std::vector<double> distances, std::size_t num_bins) {
    if (distances.empty()) throw ContractError("fit_bins: no distances");
    if (num_bins == 0) throw ConfigError("fit_bins: need at least one bin");
    for (double d : distances)
        if (!(d >= 0) || !std::isfinite(d)) throw ContractError("fit_bins: distances must be finite and >= 0");
    std::sort(distances.begin(), distances.end());
    const std::size_t n = distances.size();
    std::size_t uniq = 1;
    for (std::size_t i = 1; i < n; ++i) uniq += distances[i] != distances[i - 1];
    if (num_bins > uniq)
        log::warn("fit_bins: " + std::to_string(num_bins) + " bins over " + std::to_string(uniq) +
                  " distinct distances; boundaries will repeat");
    DistanceBinBoundaries b;
    b.bounds.reserve(num_bins);
    for (std::size_t k = 1; k <= num_bins; ++k) {
        const std::size_t rank = (k * n + num_bins - 1) / num_bins;  // ceil(k n / N_b), 1-based
        b.bounds.push_back(distances[rank - 1]);
    }
    return b;
}

/// Bin of a distance; values past the last boundary clamp to the last bin.
inline std::size_t bin_index(const DistanceBinBoundaries& b, double distance) {
    auto it = std::lower_bound(b.bounds.begin(), b.bounds.end(), distance);
    const auto k = std::size_t(it - b.bounds.begin());
    return std::min(k, b.bounds.size() - 1);
}

/// Adaptive distance encoder: projected coordinates, fitted boundaries, and the bin lookup for node pairs.
/// The embedding table itself is a trainable parameter ("ade.embedding", N_b x dim).
class DistanceEncoder {
public:
    DistanceEncoder() = default;
    DistanceEncoder(const std::vector<Location>& locs, DistanceBinBoundaries bounds)
        : points_(Projection(locs).project_all(locs)), bounds_(std::move(bounds)) {}

    double distance(NodeId a, NodeId b) const { return planar_distance(points_.at(a), points_.at(b)); }
    std::size_t bin(NodeId a, NodeId b) const { return bin_index(bounds_, distance(a, b)); }
    const DistanceBinBoundaries& boundaries() const noexcept { return bounds_; }
    std::size_t num_bins() const noexcept { return bounds_.num_bins(); }

    /// d_{a,b}: the table row of the pair's bin.
    ad::Var embed(const ad::Var& table, NodeId a, NodeId b) const { return ad::embedding(table, bin(a, b)); }

private:
    std::vector<Projection::Point> points_;
    DistanceBinBoundaries bounds_;
};

/// Distances that fit the bins: unique node pairs joined by any edge of the graph, or all pairs.
inline std::vector<double> fitting_distances(const DynamicLocationGraph& g, bool all_pairs) {
    const auto pts = Projection(g.locations()).project_all(g.locations());
    std::vector<double> out;
    if (all_pairs) {
        for (NodeId a = 0; a < pts.size(); ++a)
            for (NodeId b = a + 1; b < pts.size(); ++b) out.push_back(planar_distance(pts[a], pts[b]));
        return out;
    }
    std::set<std::uint64_t> seen;
    for (Segment t = 0; t < g.num_segments(); ++t)
        for (const RelationalEdge& e : g.edges(t))
            if (seen.insert(undirected_key(e.src, e.dst)).second) out.push_back(planar_distance(pts[e.src], pts[e.dst]));
    return out;
}

}  // namespace seenet
