#pragma once

// Central-difference gradient checking against the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "swin3d/parameter.hpp"
#include "swin3d/tensor.hpp"

namespace swin3d {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "<label>[<flat index>]" of the worst coordinate
    std::size_t checked = 0;
};

/// Below this magnitude the comparison is absolute rather than relative.
inline constexpr double kGradCheckFloor = 1e-6;

/// Rounding in a central difference is about ulp(loss) / eps. Gradients below
/// this many such units are also compared absolutely.
inline constexpr double kNoiseUnits = 1e5;

inline double relative_error(double analytic, double numeric, double floor = kGradCheckFloor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Comparison floor for central differences of a loss of magnitude `loss` with step `eps`.
template <typename T>
double difference_floor(double loss, T eps) {
    const double ulp = std::numeric_limits<T>::epsilon() * std::max(std::abs(loss), 1.0);
    return std::max(kGradCheckFloor, kNoiseUnits * ulp / static_cast<double>(eps));
}

namespace detail {

template <typename T, typename Loss>
void check_coordinates(Loss&& loss, Tensor<T>& x, const std::vector<T>& analytic, const std::vector<std::size_t>& coords,
                       T eps, double floor, const std::string& label, GradCheckResult& result) {
    NoGradGuard no_grad;
    auto values = x.mutable_data();
    for (std::size_t i : coords) {
        const T saved = values[i];
        values[i] = saved + eps;
        const double up = static_cast<double>(loss().item());
        values[i] = saved - eps;
        const double down = static_cast<double>(loss().item());
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
        const double err = relative_error(static_cast<double>(analytic[i]), numeric, floor);
        ++result.checked;
        if (result.worst.empty() || err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst = label + "[" + std::to_string(i) + "]";
        }
    }
}

}  // namespace detail

/// Compares the tape gradient of scalar `f(x)` with central differences at
/// every coordinate of `x`.
template <typename T, typename F>
GradCheckResult finite_diff_check(F&& f, Tensor<T> x, T eps = T(1e-5)) {
    if (!(eps > T(0))) {
        throw ContractError("finite_diff_check: eps must be positive");
    }
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<T> y = f(x);
    if (y.numel() != 1) {
        throw ContractError("finite_diff_check: function must return a scalar, got " + to_string(y.shape()));
    }
    std::vector<T> analytic(x.numel(), T(0));
    if (y.requires_grad()) {
        backward(y);
        if (x.has_grad()) {
            analytic.assign(x.grad().begin(), x.grad().end());
        }
    }
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    GradCheckResult result;
    const double floor = difference_floor(static_cast<double>(y.item()), eps);
    detail::check_coordinates<T>([&] { return f(x); }, x, analytic, coords, eps, floor, "x", result);
    return result;
}

/// A tensor under check plus a label for reporting.
template <typename T>
struct CheckTarget {
    std::string label;
    Tensor<T> tensor;
};

/// Checks d(loss)/d(target) for each target. `loss` takes no arguments and
/// reads the targets through shared storage. With `samples_per_tensor` == 0
/// every coordinate is checked, otherwise that many distinct coordinates are
/// drawn per tensor with `seed`.
template <typename T, typename Loss>
GradCheckResult finite_diff_check(Loss&& loss, std::vector<CheckTarget<T>> targets, std::size_t samples_per_tensor,
                                  std::uint64_t seed, T eps = T(1e-5)) {
    for (auto& t : targets) {
        if (!t.tensor.requires_grad()) {
            throw ContractError("finite_diff_check: target '" + t.label + "' does not require grad");
        }
        t.tensor.zero_grad();
    }
    Tensor<T> y = loss();
    backward(y);
    const double floor = difference_floor(static_cast<double>(y.item()), eps);
    std::mt19937_64 rng(seed);
    GradCheckResult result;
    for (auto& t : targets) {
        std::vector<T> analytic(t.tensor.numel(), T(0));
        if (t.tensor.has_grad()) {
            analytic.assign(t.tensor.grad().begin(), t.tensor.grad().end());
        }
        std::vector<std::size_t> coords(t.tensor.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (samples_per_tensor != 0 && samples_per_tensor < coords.size()) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(samples_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        detail::check_coordinates<T>(loss, t.tensor, analytic, coords, eps, floor, t.label, result);
    }
    return result;
}

/// One check target per parameter, labelled by name.
template <typename T>
std::vector<CheckTarget<T>> targets_of(const ParameterSet<T>& params) {
    std::vector<CheckTarget<T>> out;
    for (const auto& [name, t] : params) out.push_back({name, t});
    return out;
}

}  // namespace swin3d
