#pragma once

#include <algorithm>
#include <map>
#include <tuple>
#include <vector>

#include "seenet/graph.hpp"

namespace seenet {

/// Ordered relation pair r1 -> r2, densely indexed as r1 * |R| + r2.
struct RelationPattern {
    RelationId first = 0;
    RelationId second = 0;
};

inline std::size_t pattern_index(RelationPattern p, std::size_t num_relations) {
    return p.first * num_relations + p.second;
}
inline RelationPattern pattern_at(std::size_t index, std::size_t num_relations) {
    return {index / num_relations, index % num_relations};
}

/// One 2-hop path i -r1-> j -r2-> k.
struct PathTriple {
    NodeId i = 0;
    NodeId j = 0;
    NodeId k = 0;
    friend auto operator<=>(const PathTriple&, const PathTriple&) = default;
};

/// Second-order neighborhoods N2_t(v_i, r1 -> r2), stored as flat triple lists per (segment, pattern),
/// sorted by (i, j, k).
class SecondOrderIndex {
public:
    SecondOrderIndex() = default;

    /// With `filter`, a pair (j, k) is kept only when k is reachable from i through at least two
    /// distinct (middle node, pattern) 2-hop paths at the same segment.
    SecondOrderIndex(const DynamicLocationGraph& g, bool filter)
        : num_nodes_(g.num_nodes()), num_relations_(g.num_relations()), num_segments_(g.num_segments()) {
        const std::size_t num_patterns = num_relations_ * num_relations_;
        triples_.assign(num_segments_, std::vector<std::vector<PathTriple>>(num_patterns));
        std::vector<std::size_t> reach(num_nodes_, 0);
        std::vector<NodeId> touched;
        for (Segment t = 0; t < num_segments_; ++t) {
            for (NodeId i = 0; i < num_nodes_; ++i) {
                if (filter) {
                    for (const Neighbor& nj : g.neighbors(i, t))
                        for (const Neighbor& nk : g.neighbors(nj.node, t)) {
                            if (nk.node == i) continue;
                            if (reach[nk.node]++ == 0) touched.push_back(nk.node);
                        }
                }
                for (const Neighbor& nj : g.neighbors(i, t))
                    for (const Neighbor& nk : g.neighbors(nj.node, t)) {
                        if (nk.node == i) continue;
                        if (filter && reach[nk.node] < 2) continue;
                        triples_[t][pattern_index({nj.relation, nk.relation}, num_relations_)].push_back(
                            {i, nj.node, nk.node});
                    }
                for (NodeId k : touched) reach[k] = 0;
                touched.clear();
            }
            for (auto& list : triples_[t]) {
                std::sort(list.begin(), list.end());
                list.erase(std::unique(list.begin(), list.end()), list.end());
            }
        }
    }

    std::size_t num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_relations() const noexcept { return num_relations_; }
    std::size_t num_segments() const noexcept { return num_segments_; }
    std::size_t num_patterns() const noexcept { return num_relations_ * num_relations_; }

    /// All triples of one (segment, pattern), sorted by i.
    const std::vector<PathTriple>& triples(Segment t, RelationPattern p) const {
        return triples_.at(t).at(pattern_index(p, num_relations_));
    }

    /// The (v_j, v_k) pairs of N2_t(v_i, p).
    std::vector<std::pair<NodeId, NodeId>> pairs(Segment t, NodeId i, RelationPattern p) const {
        const auto& list = triples(t, p);
        auto lo = std::lower_bound(list.begin(), list.end(), PathTriple{i, 0, 0});
        std::vector<std::pair<NodeId, NodeId>> out;
        for (auto it = lo; it != list.end() && it->i == i; ++it) out.emplace_back(it->j, it->k);
        return out;
    }

    std::size_t size() const {
        std::size_t s = 0;
        for (const auto& per_t : triples_)
            for (const auto& l : per_t) s += l.size();
        return s;
    }

private:
    std::size_t num_nodes_ = 0, num_relations_ = 0, num_segments_ = 0;
    std::vector<std::vector<std::vector<PathTriple>>> triples_;
};

inline SecondOrderIndex build_second_order_index(const DynamicLocationGraph& g, bool filter_enabled) {
    return SecondOrderIndex(g, filter_enabled);
}

}  // namespace seenet
