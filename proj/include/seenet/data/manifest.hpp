#pragma once

#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seenet/graph.hpp"
#include "seenet/rng.hpp"

namespace seenet {

/// Counts of an emitted dataset plus the parameters that produced it.
struct DatasetManifest {
    std::size_t num_nodes = 0;
    std::size_t num_relations = 0;
    std::size_t num_segments = kDefaultSegments;
    std::vector<std::string> relation_labels;
    /// edges[t][r]
    std::vector<std::vector<std::size_t>> edges;
    nlohmann::json parameters = nlohmann::json::object();
    std::string content_hash;

    std::size_t total_edges() const {
        std::size_t n = 0;
        for (const auto& per_t : edges)
            for (std::size_t c : per_t) n += c;
        return n;
    }
};

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// FNV-1a over the concatenated bytes of the given files, each prefixed by its length.
inline std::string content_hash(const std::vector<std::string>& paths) {
    std::string all;
    for (const auto& p : paths) {
        const std::string b = file_bytes(p);
        all += std::to_string(b.size()) + ":" + b;
    }
    return hex64(stable_hash(all));
}

inline DatasetManifest make_manifest(std::size_t num_nodes, std::size_t num_relations, std::size_t num_segments,
                                     const std::vector<RelationalEdge>& edges) {
    DatasetManifest m;
    m.num_nodes = num_nodes;
    m.num_relations = num_relations;
    m.num_segments = num_segments;
    m.edges.assign(num_segments, std::vector<std::size_t>(num_relations, 0));
    for (const RelationalEdge& e : edges) ++m.edges.at(e.segment).at(e.relation);
    return m;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["nodes"] = m.num_nodes;
    j["relations"] = m.num_relations;
    j["segments"] = m.num_segments;
    j["relation_labels"] = m.relation_labels;
    std::vector<std::string> names;
    for (Segment t = 0; t < m.num_segments; ++t) names.push_back(segment_name(t));
    j["segment_labels"] = names;
    j["edges_per_segment_relation"] = m.edges;
    j["edges_total"] = m.total_edges();
    j["parameters"] = m.parameters;
    j["content_hash"] = m.content_hash;
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.num_nodes = j.at("nodes").get<std::size_t>();
    m.num_relations = j.at("relations").get<std::size_t>();
    m.num_segments = j.at("segments").get<std::size_t>();
    if (j.contains("relation_labels")) m.relation_labels = j["relation_labels"].get<std::vector<std::string>>();
    if (j.contains("edges_per_segment_relation"))
        m.edges = j["edges_per_segment_relation"].get<std::vector<std::vector<std::size_t>>>();
    if (j.contains("parameters")) m.parameters = j["parameters"];
    if (j.contains("content_hash")) m.content_hash = j["content_hash"].get<std::string>();
    return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << to_json(m).dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
    try {
        return manifest_from_json(nlohmann::json::parse(file_bytes(path)));
    } catch (const nlohmann::json::exception& e) {
        throw InputError("manifest '" + path + "': " + e.what());
    }
}

/// A dataset directory: nodes.csv, edges.csv and an optional manifest.json.
struct Dataset {
    std::vector<Location> locations;
    std::vector<RelationalEdge> edges;
    std::size_t num_relations = 0;
    std::size_t num_segments = kDefaultSegments;
};

inline Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.locations = read_nodes_csv(dir + "/nodes.csv");
    d.edges = read_edges_csv(dir + "/edges.csv");
    std::ifstream probe(dir + "/manifest.json");
    if (probe) {
        const DatasetManifest m = read_manifest(dir + "/manifest.json");
        d.num_relations = m.num_relations;
        d.num_segments = m.num_segments;
    } else {
        for (const RelationalEdge& e : d.edges) d.num_relations = std::max(d.num_relations, e.relation + 1);
    }
    return d;
}

}  // namespace seenet
