#pragma once

#include <cstdint>
#include <random>

#include "swin3d/tensor.hpp"

namespace swin3d::testing {

/// Tensor with entries drawn uniformly from [-scale, scale].
template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(shape, std::move(v));
}

}  // namespace swin3d::testing
