#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "swin3d/tensor.hpp"

namespace swin3d {

/// A named trainable tensor. The name is the dotted module path
/// (e.g. "encoder.1.layers.0.attn.qkv.weight").
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

/// Name-ordered view over a model's parameters. Iteration order is the
/// lexicographic name order, independent of construction order.
template <typename T>
class ParameterSet {
public:
    void add(std::string name, Tensor<T> tensor) {
        if (!tensor.requires_grad()) {
            throw ContractError("parameter '" + name + "' must require grad");
        }
        auto [it, inserted] = by_name_.emplace(std::move(name), tensor);
        if (!inserted) {
            throw ContractError("duplicate parameter name '" + it->first + "'");
        }
    }

    std::size_t size() const { return by_name_.size(); }
    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) {
            throw ContractError("no parameter named '" + name + "'");
        }
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const { return const_cast<ParameterSet*>(this)->at(name); }

    auto begin() { return by_name_.begin(); }
    auto end() { return by_name_.end(); }
    auto begin() const { return by_name_.begin(); }
    auto end() const { return by_name_.end(); }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : by_name_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : by_name_) t.zero_grad();
    }

    /// Deep copy of every value, keyed by name.
    std::map<std::string, std::vector<T>> snapshot() const {
        std::map<std::string, std::vector<T>> out;
        for (const auto& [name, t] : by_name_) out.emplace(name, t.values());
        return out;
    }

    void restore(const std::map<std::string, std::vector<T>>& snap) {
        for (auto& [name, t] : by_name_) {
            const auto& v = snap.at(name);
            std::copy(v.begin(), v.end(), t.mutable_data().begin());
        }
    }

    /// FNV-1a over names and raw value bytes; changes iff any bit changes.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ULL;
            }
        };
        for (const auto& [name, t] : by_name_) {
            mix(name.data(), name.size());
            mix(t.values().data(), t.values().size() * sizeof(T));
        }
        return h;
    }

private:
    std::map<std::string, Tensor<T>> by_name_;
};

/// Seeded source of initial parameter values.
template <typename T>
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    /// Normal(0, std) redrawn until within two standard deviations.
    Tensor<T> truncated_normal(Shape shape, double std) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<T> v(numel(shape));
        for (auto& x : v) {
            double z;
            do {
                z = dist(rng_);
            } while (std::abs(z) > 2.0);
            x = static_cast<T>(z * std);
        }
        return leaf(Tensor<T>(std::move(shape), std::move(v)));
    }

    Tensor<T> constant(Shape shape, T value) { return leaf(Tensor<T>::full(std::move(shape), value)); }

    Tensor<T> identity(std::size_t n) {
        Tensor<T> t(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = T(1);
        return leaf(std::move(t));
    }

    std::mt19937_64& rng() { return rng_; }

private:
    static Tensor<T> leaf(Tensor<T> t) {
        t.set_requires_grad(true);
        return t;
    }

    std::mt19937_64 rng_;
};

}  // namespace swin3d
