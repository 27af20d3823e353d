#pragma once

#include <algorithm>
#include <vector>

#include "seenet/graph.hpp"
#include "seenet/rng.hpp"

namespace seenet {

/// Union of v's neighbors over the cyclic window {t-1, t, t+1}, excluding `exclude`, sorted and unique.
inline std::vector<NodeId> window_neighbors(const DynamicLocationGraph& g, NodeId v, NodeId exclude, Segment t) {
    std::vector<NodeId> u;
    for (Segment s : segment_window(t, g.num_segments()))
        for (const Neighbor& n : g.neighbors(v, s))
            if (n.node != exclude) u.push_back(n.node);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return u;
}

/// K uniform draws with replacement from the cross-time neighborhood of v_i minus v_j.
/// Returns an empty list when that neighborhood is empty.
inline std::vector<NodeId> temporal_sample(const DynamicLocationGraph& g, NodeId vi, NodeId vj, Segment t,
                                           std::size_t k, Rng& rng) {
    if (k == 0) throw ConfigError("temporal_sample: K must be >= 1");
    const auto pool = window_neighbors(g, vi, vj, t);
    std::vector<NodeId> out;
    if (pool.empty()) return out;
    out.reserve(k);
    for (std::size_t n = 0; n < k; ++n) out.push_back(pool[uniform_index(rng, pool.size())]);
    return out;
}

}  // namespace seenet
