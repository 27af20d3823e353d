#pragma once

// Competitive / complementary relations from user event logs.
//
// Log format (CSV, header optional): user_id,location_id,timestamp,unit_id[,category]
//   timestamp: unix seconds, or "YYYY-MM-DD HH:MM[:SS]" (a 'T' separator is accepted)
//   unit_id:   query session id (session mode); ignored in check-in mode
//   category:  location category (check-in mode)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "seenet/graph.hpp"
#include "seenet/log.hpp"

namespace seenet {

inline constexpr RelationId kCompetitive = 0;
inline constexpr RelationId kComplementary = 1;

struct Timestamp {
    long long day = 0;  // days since 1970-01-01
    int hour = 0;
    long long seconds = 0;  // seconds since the epoch, for ordering
};

/// Parses unix seconds or a "YYYY-MM-DD HH:MM[:SS]" wall-clock time (taken as-is, no zone shift).
inline std::optional<Timestamp> parse_timestamp(const std::string& s) {
    if (s.empty()) return std::nullopt;
    if (std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        if (s.size() > 15) return std::nullopt;
        const long long secs = std::stoll(s);
        return Timestamp{secs / 86400, int((secs % 86400) / 3600), secs};
    }
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
    char sep = 0;
    int consumed = 0;
    const int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
    if (n < 6 || (sep != ' ' && sep != 'T')) return std::nullopt;
    if (consumed < int(s.size())) {
        int extra = 0;
        if (std::sscanf(s.c_str() + consumed, ":%2d%n", &se, &extra) != 1 || consumed + extra != int(s.size()))
            return std::nullopt;
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{unsigned(mo)}, std::chrono::day{unsigned(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || se > 60) return std::nullopt;
    const long long days = sys_days(ymd).time_since_epoch().count();
    return Timestamp{days, h, days * 86400 + h * 3600 + mi * 60 + se};
}

enum class UnitMode { Session, Checkin };

struct BusinessOptions {
    UnitMode mode = UnitMode::Session;
    /// Locations with id >= num_nodes are rejected as malformed; 0 disables the check.
    std::size_t num_nodes = 0;
    std::size_t num_segments = kDefaultSegments;
};

struct BuildResult {
    std::vector<RelationalEdge> edges;
    std::size_t records = 0;
    std::size_t skipped = 0;
};

struct LogEvent {
    std::string user;
    NodeId location = 0;
    Timestamp time;
    std::string unit;
    std::string category;
    std::size_t order = 0;  // position in the log, for stable ordering
};

/// Parses raw log rows; malformed rows are counted in `skipped`.
inline std::vector<LogEvent> parse_event_rows(const std::vector<std::vector<std::string>>& rows,
                                              const BusinessOptions& opt, std::size_t& skipped) {
    std::vector<LogEvent> out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& f = rows[r];
        const bool need_cat = opt.mode == UnitMode::Checkin;
        if (f.size() < (need_cat ? 5u : 4u) || f[0].empty() || (need_cat && f[4].empty())) {
            ++skipped;
            continue;
        }
        const auto ts = parse_timestamp(f[2]);
        if (!ts || f[1].empty() || !std::all_of(f[1].begin(), f[1].end(), [](char c) { return c >= '0' && c <= '9'; }) ||
            f[1].size() > 18) {
            ++skipped;
            continue;
        }
        const NodeId loc = std::stoull(f[1]);
        if (opt.num_nodes && loc >= opt.num_nodes) {
            ++skipped;
            continue;
        }
        if (opt.mode == UnitMode::Session && f[3].empty()) {
            ++skipped;
            continue;
        }
        out.push_back({f[0], loc, *ts, f[3], f.size() > 4 ? f[4] : std::string(), r});
    }
    return out;
}

/// Within-unit co-occurrence gives competitive edges (canonical min -> max, stamped at the later event).
/// Consecutive units of one user on one day give complementary edges a -> b (stamped at b's first event).
inline BuildResult build_business_relations(const std::vector<LogEvent>& events, const BusinessOptions& opt) {
    using UnitKey = std::tuple<std::string, long long, std::string>;  // user, day (check-in only), unit
    std::map<UnitKey, std::vector<const LogEvent*>> units;
    for (const LogEvent& e : events) {
        UnitKey key = opt.mode == UnitMode::Session ? UnitKey{e.user, 0, e.unit} : UnitKey{e.user, e.time.day, e.category};
        units[key].push_back(&e);
    }
    auto by_time = [](const LogEvent* a, const LogEvent* b) {
        return std::tie(a->time.seconds, a->order) < std::tie(b->time.seconds, b->order);
    };
    std::set<RelationalEdge> out;
    auto seg = [&](const Timestamp& ts) {
        const Segment s = segment_of_hour(ts.hour);
        if (s >= opt.num_segments) throw ConfigError("business builder: needs at least 4 segments");
        return s;
    };
    struct UnitSpan {
        const LogEvent* first;
        const std::vector<const LogEvent*>* members;
    };
    std::map<std::pair<std::string, long long>, std::vector<UnitSpan>> per_user_day;
    for (auto& [key, list] : units) {
        std::sort(list.begin(), list.end(), by_time);
        for (std::size_t b = 0; b < list.size(); ++b)
            for (std::size_t a = 0; a < b; ++a) {
                const NodeId x = list[a]->location, y = list[b]->location;
                if (x == y) continue;
                out.insert({std::min(x, y), std::max(x, y), kCompetitive, seg(list[b]->time)});
            }
        per_user_day[{list.front()->user, list.front()->time.day}].push_back({list.front(), &list});
    }
    for (auto& [key, spans] : per_user_day) {
        std::sort(spans.begin(), spans.end(), [&](const UnitSpan& a, const UnitSpan& b) { return by_time(a.first, b.first); });
        for (std::size_t u = 0; u + 1 < spans.size(); ++u) {
            const auto& earlier = *spans[u].members;
            const auto& later = *spans[u + 1].members;
            std::map<NodeId, const LogEvent*> first_in_later;
            for (const LogEvent* e : later) first_in_later.emplace(e->location, e);
            std::set<NodeId> from;
            for (const LogEvent* e : earlier) from.insert(e->location);
            for (NodeId a : from)
                for (const auto& [b, ev] : first_in_later)
                    if (a != b) out.insert({a, b, kComplementary, seg(ev->time)});
        }
    }
    BuildResult res;
    res.edges.assign(out.begin(), out.end());
    res.records = events.size();
    return res;
}

inline BuildResult build_business_relations_csv(const std::string& path, const BusinessOptions& opt) {
    const auto rows = csv::read_rows(path, 1);
    std::size_t skipped = 0;
    const auto events = parse_event_rows(rows, opt, skipped);
    BuildResult res = build_business_relations(events, opt);
    res.records = rows.size();
    res.skipped = skipped;
    if (skipped) log::warn("business builder: skipped " + std::to_string(skipped) + " malformed record(s) in '" + path + "'");
    return res;
}

}  // namespace seenet
