#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "seenet/autodiff.hpp"
#include "seenet/rng.hpp"

namespace seenet {

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Parameters placed on a tape, by name.
using BoundParams = std::map<std::string, ad::Var>;

inline const ad::Var& lookup(const BoundParams& bound, const std::string& name) {
    auto it = bound.find(name);
    if (it == bound.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
}

/// Named trainable tensors plus their Adam moments.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor m;
        Tensor v;
    };

    void add(const std::string& name, Tensor value) {
        if (entries_.count(name)) throw ContractError("param store: duplicate parameter '" + name + "'");
        Tensor zeros(value.shape(), 0.0);
        entries_.emplace(name, Entry{std::move(value), zeros, zeros});
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& value(const std::string& name) { return entry(name).value; }

    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
    std::map<std::string, Entry>& entries() noexcept { return entries_; }
    std::uint64_t step() const noexcept { return step_; }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    /// Zeroes the moments and step counter, keeping the values (e.g. between pretraining and fine-tuning).
    void reset_optimizer() {
        for (auto& [_, e] : entries_) {
            e.m.fill(0.0);
            e.v.fill(0.0);
        }
        step_ = 0;
    }

    /// Places a parameter on a tape as a named differentiable leaf.
    ad::Var bind(ad::Tape& tape, const std::string& name) const { return tape.leaf(entry(name).value, name); }

    /// Every parameter as a named leaf on the tape.
    BoundParams bind_all(ad::Tape& tape) const {
        BoundParams out;
        for (const auto& [name, e] : entries_) out.emplace(name, tape.leaf(e.value, name));
        return out;
    }

    void adam_step(const ad::GradMap& grads, const AdamConfig& cfg);

private:
    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("param store: unknown parameter '" + name + "'");
        return it->second;
    }
    const Entry& entry(const std::string& name) const { return const_cast<ParamStore*>(this)->entry(name); }

    std::map<std::string, Entry> entries_;
    std::uint64_t step_ = 0;
};

/// Bias-corrected Adam. Parameters without a gradient entry are left untouched (their moments too).
inline void ParamStore::adam_step(const ad::GradMap& grads, const AdamConfig& cfg) {
    for (const auto& [name, g] : grads) {
        const Entry& e = entry(name);
        if (g.shape() != e.value.shape())
            throw DimensionError("adam_step: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                                 ", parameter " + shape_str(e.value.shape()));
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step_));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step_));
    for (const auto& [name, g] : grads) {
        Entry& e = entry(name);
        for (std::size_t i = 0; i < g.size(); ++i) {
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = e.m[i] / c1;
            const double vhat = e.v[i] / c2;
            e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Glorot-uniform matrix (rows x cols).
inline Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    const double lim = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> u(-lim, lim);
    Tensor t(Shape{rows, cols});
    for (double& v : t.values()) v = u(rng);
    return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = n(rng);
    return t;
}

}  // namespace seenet
