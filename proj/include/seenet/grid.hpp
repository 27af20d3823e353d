#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <numbers>
#include <vector>

#include "seenet/graph.hpp"
#include "seenet/rng.hpp"

namespace seenet {

/// Equirectangular projection to local planar meters about the dataset centroid.
class Projection {
public:
    static constexpr double kEarthRadius = 6371008.8;

    Projection() = default;
    explicit Projection(const std::vector<Location>& locs) {
        if (locs.empty()) return;
        double lon = 0, lat = 0;
        for (const Location& l : locs) {
            lon += l.lon;
            lat += l.lat;
        }
        lon0_ = lon / double(locs.size());
        lat0_ = lat / double(locs.size());
        cos_lat0_ = std::cos(lat0_ * std::numbers::pi / 180.0);
    }

    struct Point {
        double x = 0;  // meters east
        double y = 0;  // meters north
    };

    Point project(const Location& l) const {
        constexpr double k = std::numbers::pi / 180.0;
        return {kEarthRadius * (l.lon - lon0_) * k * cos_lat0_, kEarthRadius * (l.lat - lat0_) * k};
    }

    std::vector<Point> project_all(const std::vector<Location>& locs) const {
        std::vector<Point> out;
        out.reserve(locs.size());
        for (const Location& l : locs) out.push_back(project(l));
        return out;
    }

private:
    double lon0_ = 0, lat0_ = 0, cos_lat0_ = 1;
};

inline double planar_distance(const Projection::Point& a, const Projection::Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

struct GridCell {
    std::int64_t row = 0;
    std::int64_t col = 0;
    friend auto operator<=>(const GridCell&, const GridCell&) = default;
};

inline std::int64_t manhattan(const GridCell& a, const GridCell& b) {
    return std::llabs(a.row - b.row) + std::llabs(a.col - b.col);
}

/// Fixed-size urban grid over projected coordinates.
class GridPartition {
public:
    GridPartition() = default;

    GridPartition(const std::vector<Location>& locs, double cell_size_m) : cell_size_(cell_size_m) {
        if (!(cell_size_m > 0)) throw ConfigError("grid: cell size must be positive");
        const Projection proj(locs);
        cell_of_.reserve(locs.size());
        for (const Location& l : locs) {
            const auto p = proj.project(l);
            GridCell c{std::int64_t(std::floor(p.y / cell_size_m)), std::int64_t(std::floor(p.x / cell_size_m))};
            cell_of_.push_back(c);
            members_[c].push_back(l.id);
        }
        cells_.reserve(members_.size());
        index_of_.reserve(cell_of_.size());
        for (const auto& [c, _] : members_) cells_.push_back(c);
        for (const GridCell& c : cell_of_)
            index_of_.push_back(std::size_t(std::lower_bound(cells_.begin(), cells_.end(), c) - cells_.begin()));
    }

    double cell_size() const noexcept { return cell_size_; }
    std::size_t num_nodes() const noexcept { return cell_of_.size(); }
    const GridCell& cell_of(NodeId v) const { return cell_of_.at(v); }
    const std::map<GridCell, std::vector<NodeId>>& cells() const noexcept { return members_; }
    std::size_t num_cells() const noexcept { return cells_.size(); }

    /// Dense index of a node's cell in [0, num_cells()), ordered by (row, col).
    std::size_t cell_index(NodeId v) const { return index_of_.at(v); }

    const std::vector<NodeId>& members(const GridCell& c) const {
        static const std::vector<NodeId> none;
        auto it = members_.find(c);
        return it == members_.end() ? none : it->second;
    }

private:
    double cell_size_ = 1000.0;
    std::vector<GridCell> cell_of_;
    std::vector<std::size_t> index_of_;
    std::vector<GridCell> cells_;
    std::map<GridCell, std::vector<NodeId>> members_;
};

inline GridPartition assign_grid(const std::vector<Location>& locs, double cell_size_m) {
    return GridPartition(locs, cell_size_m);
}

/// Nodes whose cell lies strictly between d1 and d2 grid units (Manhattan) from v's cell.
/// An empty result means "no valid negatives"; GridNegativeSampler::sample falls back to uniform draws.
inline std::vector<NodeId> grid_negative_candidates(const GridPartition& grid, NodeId v, std::int64_t d1,
                                                    std::int64_t d2) {
    if (d1 >= d2) throw ConfigError("grid sampler: need d1 < d2");
    const GridCell c = grid.cell_of(v);
    std::vector<NodeId> out;
    for (std::int64_t dr = -(d2 - 1); dr <= d2 - 1; ++dr) {
        const std::int64_t rem = d2 - 1 - std::llabs(dr);
        for (std::int64_t dc = -rem; dc <= rem; ++dc) {
            const std::int64_t m = std::llabs(dr) + std::llabs(dc);
            if (m <= d1 || m >= d2) continue;
            const auto& mem = grid.members({c.row + dr, c.col + dc});
            out.insert(out.end(), mem.begin(), mem.end());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Per-node candidate sets, computed once per partition.
class GridNegativeSampler {
public:
    GridNegativeSampler() = default;
    GridNegativeSampler(const GridPartition& grid, std::int64_t d1, std::int64_t d2) : num_nodes_(grid.num_nodes()) {
        candidates_.reserve(grid.num_nodes());
        for (NodeId v = 0; v < grid.num_nodes(); ++v) candidates_.push_back(grid_negative_candidates(grid, v, d1, d2));
    }

    const std::vector<NodeId>& candidates(NodeId v) const { return candidates_.at(v); }

    /// `count` draws with replacement from S_v; when S_v is empty, uniform over all nodes except v.
    std::vector<NodeId> sample(NodeId v, std::size_t count, Rng& rng) const {
        std::vector<NodeId> out;
        out.reserve(count);
        const auto& s = candidates_.at(v);
        for (std::size_t i = 0; i < count; ++i) {
            if (!s.empty()) {
                out.push_back(s[uniform_index(rng, s.size())]);
            } else if (num_nodes_ > 1) {
                NodeId u = uniform_index(rng, num_nodes_ - 1);
                out.push_back(u >= v ? u + 1 : u);
            }
        }
        return out;
    }

private:
    std::size_t num_nodes_ = 0;
    std::vector<std::vector<NodeId>> candidates_;
};

}  // namespace seenet
