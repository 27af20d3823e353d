#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "seenet/graph.hpp"
#include "seenet/rng.hpp"

namespace seenet {

struct SplitRatios {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

/// Per-segment train/valid/test edge lists. Node pairs held out anywhere never appear in training.
struct DatasetSplit {
    std::vector<std::vector<RelationalEdge>> train, valid, test;
    /// Training edges dropped by cross-time exclusion.
    std::vector<std::vector<RelationalEdge>> excluded;

    std::size_t num_segments() const noexcept { return train.size(); }

    static std::vector<RelationalEdge> flatten(const std::vector<std::vector<RelationalEdge>>& parts) {
        std::vector<RelationalEdge> out;
        for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
        return out;
    }
};

/// Splits each segment's edges by the ratios, then removes every training edge whose unordered node
/// pair occurs in any held-out set at any segment.
inline DatasetSplit split_dataset(const std::vector<RelationalEdge>& edges, std::size_t num_segments,
                                  const SplitRatios& ratios, Rng& rng) {
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
        throw ConfigError("split: ratios must be non-negative and sum to 1");
    std::vector<std::vector<RelationalEdge>> by_segment(num_segments);
    for (const RelationalEdge& e : edges) {
        if (e.segment >= num_segments) throw InputError("split: segment " + std::to_string(e.segment) + " out of range");
        by_segment[e.segment].push_back(e);
    }
    DatasetSplit s;
    s.train.resize(num_segments);
    s.valid.resize(num_segments);
    s.test.resize(num_segments);
    s.excluded.resize(num_segments);
    std::unordered_set<std::uint64_t> held_out;
    for (Segment t = 0; t < num_segments; ++t) {
        auto& list = by_segment[t];
        if (list.size() < 10)
            throw ConfigError("split: segment " + std::to_string(t) + " has " + std::to_string(list.size()) +
                              " edges, need at least 10");
        std::sort(list.begin(), list.end());
        std::shuffle(list.begin(), list.end(), rng);
        const auto n = list.size();
        const auto n_test = std::size_t(std::llround(double(n) * ratios.test));
        const auto n_valid = std::size_t(std::llround(double(n) * ratios.valid));
        s.test[t].assign(list.begin(), list.begin() + std::ptrdiff_t(n_test));
        s.valid[t].assign(list.begin() + std::ptrdiff_t(n_test), list.begin() + std::ptrdiff_t(n_test + n_valid));
        s.train[t].assign(list.begin() + std::ptrdiff_t(n_test + n_valid), list.end());
        for (const auto& e : s.test[t]) held_out.insert(undirected_key(e.src, e.dst));
        for (const auto& e : s.valid[t]) held_out.insert(undirected_key(e.src, e.dst));
    }
    for (Segment t = 0; t < num_segments; ++t) {
        std::vector<RelationalEdge> kept;
        for (const auto& e : s.train[t]) {
            if (held_out.count(undirected_key(e.src, e.dst))) s.excluded[t].push_back(e);
            else kept.push_back(e);
        }
        s.train[t] = std::move(kept);
        for (auto* part : {&s.train[t], &s.valid[t], &s.test[t], &s.excluded[t]}) std::sort(part->begin(), part->end());
    }
    return s;
}

/// Split manifest: `src_id,dst_id,relation_id,time_segment,split` with split in {train,valid,test}.
inline void write_split_csv(const std::string& path, const DatasetSplit& s) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << "src_id,dst_id,relation_id,time_segment,split\n";
    auto dump = [&](const std::vector<std::vector<RelationalEdge>>& parts, const char* name) {
        for (const auto& part : parts)
            for (const auto& e : part) f << e.src << ',' << e.dst << ',' << e.relation << ',' << e.segment << ',' << name << '\n';
    };
    dump(s.train, "train");
    dump(s.valid, "valid");
    dump(s.test, "test");
}

inline DatasetSplit read_split_csv(const std::string& path, std::size_t num_segments) {
    DatasetSplit s;
    s.train.resize(num_segments);
    s.valid.resize(num_segments);
    s.test.resize(num_segments);
    s.excluded.resize(num_segments);
    for (const auto& row : csv::read_rows(path)) {
        if (row.size() < 5) throw InputError("split file '" + path + "': expected 5 columns");
        RelationalEdge e{csv::to_index(row[0], "src id"), csv::to_index(row[1], "dst id"),
                         csv::to_index(row[2], "relation id"), parse_segment(row[3])};
        if (e.segment >= num_segments) throw InputError("split file: segment out of range");
        if (row[4] == "train") s.train[e.segment].push_back(e);
        else if (row[4] == "valid") s.valid[e.segment].push_back(e);
        else if (row[4] == "test") s.test[e.segment].push_back(e);
        else throw InputError("split file: unknown split '" + row[4] + "'");
    }
    return s;
}

}  // namespace seenet
