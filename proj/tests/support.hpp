#pragma once

// Shared helpers for the test binaries: finite-difference gradient checks,
// random graphs and scratch directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "seenet/seenet.hpp"

namespace seenet {

inline void PrintTo(const Tensor& t, std::ostream* os) {
    *os << shape_str(t.shape()) << " {";
    for (std::size_t i = 0; i < t.size() && i < 16; ++i) *os << (i ? ", " : "") << t[i];
    *os << (t.size() > 16 ? ", ...}" : "}");
}

}  // namespace seenet

namespace testing_support {

using namespace seenet;

/// Builds a scalar loss from named leaves placed on a fresh tape.
using LossFn = std::function<ad::Var(ad::Tape&, const std::map<std::string, ad::Var>&)>;

inline double eval_loss(const LossFn& f, const std::map<std::string, Tensor>& params) {
    ad::Tape tape;
    std::map<std::string, ad::Var> leaves;
    for (const auto& [n, t] : params) leaves.emplace(n, tape.leaf(t, n));
    return f(tape, leaves).value().item();
}

inline ad::GradMap analytic_grads(const LossFn& f, const std::map<std::string, Tensor>& params) {
    ad::Tape tape;
    std::map<std::string, ad::Var> leaves;
    for (const auto& [n, t] : params) leaves.emplace(n, tape.leaf(t, n));
    return tape.backward(f(tape, leaves));
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

/// Central differences with step `eps` against the tape gradient. The relative error of one entry is
/// |a - n| / max(|a|, |n|, floor); entries are subsampled to at most `per_param` per tensor.
inline GradCheck check_gradients(const LossFn& f, std::map<std::string, Tensor> params, double eps = 1e-5,
                                 std::size_t per_param = 40, double floor = 1e-6, std::uint64_t seed = 1) {
    const ad::GradMap g = analytic_grads(f, params);
    GradCheck out;
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : params) {
        std::vector<std::size_t> idx(t.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        if (idx.size() > per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(per_param);
        }
        for (std::size_t k : idx) {
            const double orig = t[k];
            t[k] = orig + eps;
            const double up = eval_loss(f, params);
            t[k] = orig - eps;
            const double down = eval_loss(f, params);
            t[k] = orig;
            const double numeric = (up - down) / (2 * eps);
            const double analytic = g.at(name)[k];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = name + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) + " numeric " +
                            std::to_string(numeric);
            }
        }
    }
    return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = u(rng);
    return t;
}

/// Locations scattered over roughly `extent_m` metres around a fixed centre.
inline std::vector<Location> random_locations(std::size_t n, std::mt19937_64& rng, double extent_m = 8000.0) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<Location> out;
    const double dlat = extent_m / 111320.0, dlon = extent_m / (111320.0 * std::cos(39.9 * 3.14159265358979 / 180));
    for (NodeId v = 0; v < n; ++v) out.push_back({v, 116.4 + u(rng) * dlon, 39.9 + u(rng) * dlat});
    return out;
}

/// Distinct directed edges (no self loops) with uniformly drawn endpoints, relations and segments.
inline std::vector<RelationalEdge> random_edges(std::size_t n, std::size_t count, std::size_t num_relations,
                                                std::size_t num_segments, std::mt19937_64& rng) {
    std::set<RelationalEdge> out;
    std::size_t guard = 0;
    while (out.size() < count && guard++ < count * 50) {
        const NodeId a = rng() % n, b = rng() % n;
        if (a == b) continue;
        out.insert({a, b, RelationId(rng() % num_relations), Segment(rng() % num_segments)});
    }
    return {out.begin(), out.end()};
}

/// A fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& tag) {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / ("seenet_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

}  // namespace testing_support
