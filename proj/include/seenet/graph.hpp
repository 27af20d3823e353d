#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <compare>
#include <cstdlib>
#include <unordered_map>
#include <vector>

#include "seenet/tensor.hpp"

namespace seenet {

using NodeId = std::size_t;
using RelationId = std::size_t;
using Segment = std::size_t;

inline constexpr std::size_t kDefaultSegments = 4;
inline constexpr std::array<std::string_view, 4> kSegmentNames{"morning", "midday", "night", "midnight"};

/// The day is cyclic: the segment before 0 is T-1.
constexpr Segment prev_segment(Segment t, std::size_t num_segments) { return (t + num_segments - 1) % num_segments; }
constexpr Segment next_segment(Segment t, std::size_t num_segments) { return (t + 1) % num_segments; }

/// {t-1, t, t+1} with cyclic wrap, duplicates removed when T < 3.
inline std::vector<Segment> segment_window(Segment t, std::size_t num_segments) {
    std::vector<Segment> w{prev_segment(t, num_segments), t, next_segment(t, num_segments)};
    std::vector<Segment> out;
    for (Segment s : w)
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    return out;
}

/// Hour-of-day bucketing: [6,12) morning, [12,18) midday, [18,24) night, [0,6) midnight.
constexpr Segment segment_of_hour(int hour) {
    if (hour >= 6 && hour < 12) return 0;
    if (hour >= 12 && hour < 18) return 1;
    if (hour >= 18) return 2;
    return 3;
}

inline std::string segment_name(Segment t) {
    return t < kSegmentNames.size() ? std::string(kSegmentNames[t]) : "t" + std::to_string(t);
}

/// Accepts a segment label ("midday") or an index ("1").
inline Segment parse_segment(std::string_view s) {
    for (std::size_t i = 0; i < kSegmentNames.size(); ++i)
        if (s == kSegmentNames[i]) return i;
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return std::stoul(std::string(s));
    throw InputError("unknown time segment '" + std::string(s) + "'");
}

struct Location {
    NodeId id = 0;
    double lon = 0.0;
    double lat = 0.0;
};

struct RelationalEdge {
    NodeId src = 0;
    NodeId dst = 0;
    RelationId relation = 0;
    Segment segment = 0;

    friend bool operator==(const RelationalEdge&, const RelationalEdge&) = default;
    friend auto operator<=>(const RelationalEdge& a, const RelationalEdge& b) {
        return std::tie(a.segment, a.src, a.dst, a.relation) <=> std::tie(b.segment, b.src, b.dst, b.relation);
    }
};

struct Neighbor {
    NodeId node = 0;
    RelationId relation = 0;
};

inline std::uint64_t pair_key(NodeId a, NodeId b) { return (std::uint64_t(a) << 32) | std::uint64_t(b); }
inline std::uint64_t undirected_key(NodeId a, NodeId b) { return a < b ? pair_key(a, b) : pair_key(b, a); }

/// Locations plus one relational edge set per time segment, with an out-neighbor index.
class DynamicLocationGraph {
public:
    DynamicLocationGraph() = default;

    DynamicLocationGraph(std::vector<Location> locations, std::vector<RelationalEdge> edges, std::size_t num_relations,
                         std::size_t num_segments = kDefaultSegments, bool symmetrize = false)
        : locations_(std::move(locations)), num_relations_(num_relations), num_segments_(num_segments) {
        const std::size_t n = locations_.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (locations_[i].id != i) throw InputError("graph: node ids must be dense 0..N-1");
            if (!std::isfinite(locations_[i].lon) || !std::isfinite(locations_[i].lat))
                throw InputError("graph: node " + std::to_string(i) + " has non-finite coordinates");
        }
        if (symmetrize) {
            const std::size_t m = edges.size();
            for (std::size_t e = 0; e < m; ++e) {
                RelationalEdge r = edges[e];
                std::swap(r.src, r.dst);
                edges.push_back(r);
            }
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

        edges_.assign(num_segments_, {});
        adjacency_.assign(num_segments_, std::vector<std::vector<Neighbor>>(n));
        relations_.assign(num_segments_, {});
        for (const RelationalEdge& e : edges) {
            if (e.src >= n || e.dst >= n)
                throw InputError("graph: edge endpoint outside 0.." + std::to_string(n ? n - 1 : 0));
            if (e.src == e.dst) throw InputError("graph: self-loop on node " + std::to_string(e.src));
            if (e.relation >= num_relations_) throw InputError("graph: relation id " + std::to_string(e.relation) + " out of range");
            if (e.segment >= num_segments_) throw InputError("graph: segment " + std::to_string(e.segment) + " out of range");
            edges_[e.segment].push_back(e);
            adjacency_[e.segment][e.src].push_back({e.dst, e.relation});
            relations_[e.segment][pair_key(e.src, e.dst)].push_back(e.relation);
        }
    }

    std::size_t num_nodes() const noexcept { return locations_.size(); }
    std::size_t num_relations() const noexcept { return num_relations_; }
    std::size_t num_segments() const noexcept { return num_segments_; }

    const std::vector<Location>& locations() const noexcept { return locations_; }
    const std::vector<RelationalEdge>& edges(Segment t) const { return edges_.at(t); }
    std::size_t num_edges() const {
        std::size_t s = 0;
        for (const auto& e : edges_) s += e.size();
        return s;
    }

    /// Out-neighbors of v at segment t, sorted by (node, relation).
    const std::vector<Neighbor>& neighbors(NodeId v, Segment t) const { return adjacency_.at(t).at(v); }

    /// Relations stored on the directed pair (a -> b) at t; empty when absent.
    const std::vector<RelationId>& relations(NodeId a, NodeId b, Segment t) const {
        static const std::vector<RelationId> none;
        const auto& m = relations_.at(t);
        auto it = m.find(pair_key(a, b));
        return it == m.end() ? none : it->second;
    }

    bool has_edge(NodeId a, NodeId b, RelationId r, Segment t) const {
        const auto& rs = relations(a, b, t);
        return std::find(rs.begin(), rs.end(), r) != rs.end();
    }

private:
    std::vector<Location> locations_;
    std::size_t num_relations_ = 0;
    std::size_t num_segments_ = kDefaultSegments;
    std::vector<std::vector<RelationalEdge>> edges_;
    std::vector<std::vector<std::vector<Neighbor>>> adjacency_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<RelationId>>> relations_;
};

// ---------------------------------------------------------------------------
// CSV ingest

namespace csv {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline bool looks_numeric(const std::string& s) {
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end && *end == '\0';
}

/// Reads non-empty lines; drops a first line whose field `probe` is not numeric (a header).
inline std::vector<std::vector<std::string>> read_rows(const std::string& path, std::size_t probe = 0) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        auto fields = split(line);
        if (first && (fields.size() <= probe || !looks_numeric(fields[probe]))) {
            first = false;
            continue;
        }
        first = false;
        rows.push_back(std::move(fields));
    }
    return rows;
}

inline double to_double(const std::string& s, const std::string& what) {
    if (!looks_numeric(s)) throw InputError("malformed " + what + " '" + s + "'");
    return std::strtod(s.c_str(), nullptr);
}

inline std::size_t to_index(const std::string& s, const std::string& what) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw InputError("malformed " + what + " '" + s + "'");
    return std::stoull(s);
}

}  // namespace csv

/// `node_id,lon,lat`; ids must form 0..N-1 (any order in the file).
inline std::vector<Location> read_nodes_csv(const std::string& path) {
    std::vector<Location> locs;
    for (const auto& row : csv::read_rows(path)) {
        if (row.size() < 3) throw InputError("node file '" + path + "': expected node_id,lon,lat");
        locs.push_back({csv::to_index(row[0], "node id"), csv::to_double(row[1], "lon"), csv::to_double(row[2], "lat")});
    }
    std::sort(locs.begin(), locs.end(), [](const Location& a, const Location& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < locs.size(); ++i)
        if (locs[i].id != i) throw InputError("node file '" + path + "': ids must be dense 0..N-1");
    return locs;
}

/// `src_id,dst_id,relation_id,time_segment`; the segment may be an index or a label.
inline std::vector<RelationalEdge> read_edges_csv(const std::string& path) {
    std::vector<RelationalEdge> edges;
    for (const auto& row : csv::read_rows(path)) {
        if (row.size() < 4) throw InputError("edge file '" + path + "': expected src_id,dst_id,relation_id,time_segment");
        edges.push_back({csv::to_index(row[0], "src id"), csv::to_index(row[1], "dst id"),
                         csv::to_index(row[2], "relation id"), parse_segment(row[3])});
    }
    return edges;
}

inline void write_nodes_csv(const std::string& path, const std::vector<Location>& locs) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << "node_id,lon,lat\n";
    f.precision(17);
    for (const Location& l : locs) f << l.id << ',' << l.lon << ',' << l.lat << '\n';
}

inline void write_edges_csv(const std::string& path, const std::vector<RelationalEdge>& edges) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << "src_id,dst_id,relation_id,time_segment\n";
    for (const RelationalEdge& e : edges) f << e.src << ',' << e.dst << ',' << e.relation << ',' << e.segment << '\n';
}

}  // namespace seenet
