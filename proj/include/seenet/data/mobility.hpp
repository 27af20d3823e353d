#pragma once

// High-flow / low-flow relations from origin-destination trips.
//
// Trip format (CSV, header optional): pickup_id,dropoff_id,timestamp

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "seenet/data/business.hpp"
#include "seenet/graph.hpp"
#include "seenet/log.hpp"

namespace seenet {

inline constexpr RelationId kHighFlow = 0;
inline constexpr RelationId kLowFlow = 1;

struct Trip {
    NodeId pickup = 0;
    NodeId dropoff = 0;
    Timestamp time;
};

struct MobilityOptions {
    /// Low-flow as the whole top half (so every high-flow pair is also low-flow) instead of the second quarter.
    bool nested_low_flow = false;
    std::size_t num_nodes = 0;
    std::size_t num_segments = kDefaultSegments;
};

/// Per segment, OD pairs sorted by count (descending, ties by (src, dst)); the first ceil(n/4) are high-flow,
/// the rest of the first ceil(n/2) low-flow. Segments with fewer than 4 distinct pairs are skipped.
inline BuildResult build_mobility_relations(const std::vector<Trip>& trips, const MobilityOptions& opt) {
    std::vector<std::map<std::pair<NodeId, NodeId>, std::size_t>> counts(opt.num_segments);
    for (const Trip& tr : trips) {
        const Segment s = segment_of_hour(tr.time.hour);
        if (s >= opt.num_segments) throw ConfigError("mobility builder: needs at least 4 segments");
        ++counts[s][{tr.pickup, tr.dropoff}];
    }
    BuildResult res;
    res.records = trips.size();
    for (Segment t = 0; t < opt.num_segments; ++t) {
        std::vector<std::pair<std::pair<NodeId, NodeId>, std::size_t>> ranked(counts[t].begin(), counts[t].end());
        const std::size_t n = ranked.size();
        if (n < 4) {
            if (n > 0 || !trips.empty())
                log::warn("mobility builder: segment " + segment_name(t) + " has " + std::to_string(n) +
                          " OD pair(s), need 4; skipped");
            continue;
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        const std::size_t high = (n + 3) / 4, top_half = (n + 1) / 2;
        for (std::size_t p = 0; p < top_half; ++p) {
            const auto [src, dst] = ranked[p].first;
            if (p < high) res.edges.push_back({src, dst, kHighFlow, t});
            if (p >= high || opt.nested_low_flow) res.edges.push_back({src, dst, kLowFlow, t});
        }
    }
    std::sort(res.edges.begin(), res.edges.end());
    return res;
}

inline BuildResult build_mobility_relations_csv(const std::string& path, const MobilityOptions& opt) {
    std::vector<Trip> trips;
    std::size_t skipped = 0;
    const auto rows = csv::read_rows(path);
    auto is_id = [](const std::string& s) {
        return !s.empty() && s.size() < 19 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    for (const auto& f : rows) {
        if (f.size() < 3 || !is_id(f[0]) || !is_id(f[1])) {
            ++skipped;
            continue;
        }
        const auto ts = parse_timestamp(f[2]);
        const NodeId a = std::stoull(f[0]), b = std::stoull(f[1]);
        if (!ts || a == b || (opt.num_nodes && (a >= opt.num_nodes || b >= opt.num_nodes))) {
            ++skipped;
            continue;
        }
        trips.push_back({a, b, *ts});
    }
    BuildResult res = build_mobility_relations(trips, opt);
    res.records = rows.size();
    res.skipped = skipped;
    if (skipped) log::warn("mobility builder: skipped " + std::to_string(skipped) + " malformed record(s) in '" + path + "'");
    return res;
}

}  // namespace seenet
