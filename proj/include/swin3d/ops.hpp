#pragma once

// Differentiable primitives. Every op here records a backward rule on the
// tape when any input requires grad.
//
// Broadcasting is narrow: the second operand of a binary op may
// match the first exactly, be a trailing suffix of its shape, or hold a
// single value. Anything else is a DimensionError.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "swin3d/tensor.hpp"

namespace swin3d {

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatIn = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MatOut = Eigen::Map<RowMajor<T>>;

inline constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Per-axis offset tables describing an injective re-indexing: output element
/// at multi-index o reads input offset sum_k table[k][o_k], or zero if any
/// table entry is kInvalid. Covers permute, roll, pad and crop.
struct AxisMap {
    Shape out_shape;
    std::vector<std::vector<std::size_t>> table;
};

template <typename T, typename Visit>
void for_each_mapped(const AxisMap& map, Visit&& visit) {
    const std::size_t r = map.out_shape.size();
    const std::size_t total = numel(map.out_shape);
    if (total == 0) {
        return;
    }
    if (r == 0) {
        visit(std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = map.out_shape[r - 1];
    const auto& last = map.table[r - 1];
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < total; o += inner) {
        std::size_t base = 0;
        bool valid = true;
        for (std::size_t k = 0; k + 1 < r; ++k) {
            std::size_t t = map.table[k][idx[k]];
            if (t == kInvalid) {
                valid = false;
                break;
            }
            base += t;
        }
        if (valid) {
            for (std::size_t j = 0; j < inner; ++j) {
                if (last[j] != kInvalid) {
                    visit(o + j, base + last[j]);
                }
            }
        }
        for (std::size_t k = r - 1; k-- > 0;) {
            if (++idx[k] < map.out_shape[k]) {
                break;
            }
            idx[k] = 0;
        }
    }
}

template <typename T>
Tensor<T> apply_axis_map(const Tensor<T>& x, AxisMap map, const char* op) {
    std::vector<T> out(numel(map.out_shape), T(0));
    const auto& in = x.values();
    for_each_mapped<T>(map, [&](std::size_t o, std::size_t i) { out[o] = in[i]; });
    Shape shape = map.out_shape;
    return make_result<T>(std::move(shape), std::move(out), {x.impl()}, op,
                          [xi = x.impl(), map = std::move(map)](const TensorImpl<T>& y) {
                              auto& g = xi->grad_buffer();
                              for_each_mapped<T>(map, [&](std::size_t o, std::size_t i) { g[i] += y.grad[o]; });
                          });
}

enum class Broadcast { Same, Trailing, Scalar };

inline Broadcast classify(const Shape& a, const Shape& b, const char* op) {
    if (a == b) {
        return Broadcast::Same;
    }
    if (numel(b) == 1) {
        return Broadcast::Scalar;
    }
    if (is_suffix(b, a)) {
        return Broadcast::Trailing;
    }
    throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " + to_string(a));
}

}  // namespace detail

/// Elementwise a + b; b may broadcast (see header comment). Either operand may
/// be the smaller one.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() < b.numel() || (a.numel() == b.numel() && a.rank() < b.rank())) {
        return add(b, a);
    }
    detail::classify(a.shape(), b.shape(), "add");
    const std::size_t n = a.numel();
    const std::size_t bn = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; i += bn) {
        for (std::size_t j = 0; j < bn; ++j) {
            out[i + j] = av[i + j] + bv[j];
        }
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, "add",
                                  [ai = a.impl(), bi = b.impl(), n, bn](const detail::TensorImpl<T>& y) {
                                      if (ai->requires_grad) {
                                          auto& g = ai->grad_buffer();
                                          for (std::size_t i = 0; i < n; ++i) g[i] += y.grad[i];
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->grad_buffer();
                                          for (std::size_t i = 0; i < n; i += bn)
                                              for (std::size_t j = 0; j < bn; ++j) g[j] += y.grad[i + j];
                                      }
                                  });
}

/// Elementwise a * b with the same broadcasting as add().
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() < b.numel() || (a.numel() == b.numel() && a.rank() < b.rank())) {
        return mul(b, a);
    }
    detail::classify(a.shape(), b.shape(), "mul");
    const std::size_t n = a.numel();
    const std::size_t bn = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; i += bn) {
        for (std::size_t j = 0; j < bn; ++j) {
            out[i + j] = av[i + j] * bv[j];
        }
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, "mul",
                                  [ai = a.impl(), bi = b.impl(), n, bn](const detail::TensorImpl<T>& y) {
                                      if (ai->requires_grad) {
                                          auto& g = ai->grad_buffer();
                                          for (std::size_t i = 0; i < n; i += bn)
                                              for (std::size_t j = 0; j < bn; ++j)
                                                  g[i + j] += y.grad[i + j] * bi->data[j];
                                      }
                                      if (bi->requires_grad) {
                                          auto& g = bi->grad_buffer();
                                          for (std::size_t i = 0; i < n; i += bn)
                                              for (std::size_t j = 0; j < bn; ++j)
                                                  g[j] += y.grad[i + j] * ai->data[i + j];
                                      }
                                  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.values());
    for (auto& v : out) v *= factor;
    return detail::make_result<T>(x.shape(), std::move(out), {x.impl()}, "scale",
                                  [xi = x.impl(), factor](const detail::TensorImpl<T>& y) {
                                      auto& g = xi->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * y.grad[i];
                                  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

/// Matrix product over the last two axes.
///
/// `b` is either a single [k, n] matrix shared by every leading index of `a`
/// (the linear-layer case), or carries the same leading axes as `a` (batched).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    auto fail = [&] {
        throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    };
    if (a.rank() < 2 || b.rank() < 2) fail();
    const std::size_t m = a.dim(a.rank() - 2);
    const std::size_t k = a.dim(a.rank() - 1);
    const std::size_t n = b.dim(b.rank() - 1);
    if (b.dim(b.rank() - 2) != k) fail();
    const bool shared = b.rank() == 2;
    if (!shared) {
        if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) fail();
    }
    const std::size_t batches = shared ? 1 : a.numel() / (m * k);
    const std::size_t rows = shared ? a.numel() / k : m;  // rows per batch

    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<T> out(numel(out_shape));
    // Shared weights fold every leading axis into one tall product.
    const std::size_t bcount = shared ? 1 : batches;
    const std::size_t brows = shared ? batches * rows : rows;
    for (std::size_t bt = 0; bt < bcount; ++bt) {
        detail::MatOut<T>(out.data() + bt * brows * n, brows, n).noalias() =
            detail::MatIn<T>(a.values().data() + bt * brows * k, brows, k) *
            detail::MatIn<T>(b.values().data() + bt * k * n, k, n);
    }
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {a.impl(), b.impl()}, "matmul",
        [ai = a.impl(), bi = b.impl(), bcount, brows, k, n](const detail::TensorImpl<T>& y) {
            for (std::size_t bt = 0; bt < bcount; ++bt) {
                detail::MatIn<T> G(y.grad.data() + bt * brows * n, brows, n);
                if (ai->requires_grad) {
                    detail::MatOut<T>(ai->grad_buffer().data() + bt * brows * k, brows, k).noalias() +=
                        G * detail::MatIn<T>(bi->data.data() + bt * k * n, k, n).transpose();
                }
                if (bi->requires_grad) {
                    detail::MatOut<T>(bi->grad_buffer().data() + bt * k * n, k, n).noalias() +=
                        detail::MatIn<T>(ai->data.data() + bt * brows * k, brows, k).transpose() * G;
                }
            }
        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return detail::make_result<T>(std::move(shape), x.values(), {x.impl()}, "reshape",
                                  [xi = x.impl()](const detail::TensorImpl<T>& y) {
                                      auto& g = xi->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
                                  });
}

/// Output axis k is input axis axes[k].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    std::vector<bool> used(r, false);
    if (axes.size() != r) {
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + to_string(x.shape()));
    }
    for (std::size_t a : axes) {
        if (a >= r || used[a]) {
            throw DimensionError("permute: invalid axis list for shape " + to_string(x.shape()));
        }
        used[a] = true;
    }
    const auto strides = strides_of(x.shape());
    detail::AxisMap map;
    map.out_shape.resize(r);
    map.table.resize(r);
    for (std::size_t k = 0; k < r; ++k) {
        map.out_shape[k] = x.dim(axes[k]);
        map.table[k].resize(map.out_shape[k]);
        for (std::size_t o = 0; o < map.out_shape[k]; ++o) map.table[k][o] = o * strides[axes[k]];
    }
    return detail::apply_axis_map(x, std::move(map), "permute");
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

/// Cyclic shift: element at index i along axis k moves to (i + shifts[k]) mod extent.
template <typename T>
Tensor<T> roll(const Tensor<T>& x, const std::vector<long>& shifts) {
    const std::size_t r = x.rank();
    if (shifts.size() != r) {
        throw DimensionError("roll: " + std::to_string(shifts.size()) + " shifts for shape " + to_string(x.shape()));
    }
    const auto strides = strides_of(x.shape());
    detail::AxisMap map;
    map.out_shape = x.shape();
    map.table.resize(r);
    for (std::size_t k = 0; k < r; ++k) {
        const long n = static_cast<long>(x.dim(k));
        map.table[k].resize(x.dim(k));
        for (long o = 0; o < n; ++o) {
            const long src = (((o - shifts[k]) % n) + n) % n;
            map.table[k][o] = static_cast<std::size_t>(src) * strides[k];
        }
    }
    return detail::apply_axis_map(x, std::move(map), "roll");
}

/// Zero padding: `before[k]` and `after[k]` zeros added along axis k.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::size_t>& before, const std::vector<std::size_t>& after) {
    const std::size_t r = x.rank();
    if (before.size() != r || after.size() != r) {
        throw DimensionError("pad: padding rank does not match shape " + to_string(x.shape()));
    }
    const auto strides = strides_of(x.shape());
    detail::AxisMap map;
    map.out_shape.resize(r);
    map.table.resize(r);
    for (std::size_t k = 0; k < r; ++k) {
        map.out_shape[k] = before[k] + x.dim(k) + after[k];
        map.table[k].assign(map.out_shape[k], detail::kInvalid);
        for (std::size_t i = 0; i < x.dim(k); ++i) map.table[k][before[k] + i] = i * strides[k];
    }
    return detail::apply_axis_map(x, std::move(map), "pad");
}

/// Sub-block starting at `start` with the given extents.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<std::size_t>& start, const Shape& extent) {
    const std::size_t r = x.rank();
    if (start.size() != r || extent.size() != r) {
        throw DimensionError("crop: window rank does not match shape " + to_string(x.shape()));
    }
    const auto strides = strides_of(x.shape());
    detail::AxisMap map;
    map.out_shape = extent;
    map.table.resize(r);
    for (std::size_t k = 0; k < r; ++k) {
        if (start[k] + extent[k] > x.dim(k)) {
            throw DimensionError("crop: window " + to_string(extent) + " exceeds shape " + to_string(x.shape()));
        }
        map.table[k].resize(extent[k]);
        for (std::size_t o = 0; o < extent[k]; ++o) map.table[k][o] = (start[k] + o) * strides[k];
    }
    return detail::apply_axis_map(x, std::move(map), "crop");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) {
        throw DimensionError("concat: axis out of range for shape " + to_string(ref));
    }
    Shape out_shape = ref;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    std::vector<detail::ImplPtr<T>> inputs;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != ref.size()) {
            throw DimensionError("concat: rank mismatch " + to_string(s) + " vs " + to_string(ref));
        }
        s[axis] = ref[axis];
        if (s != ref) {
            throw DimensionError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
        }
        out_shape[axis] += p.dim(axis);
        inputs.push_back(p.impl());
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= ref[k];
    for (std::size_t k = axis + 1; k < ref.size(); ++k) inner *= ref[k];
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    const std::size_t row = out_shape[axis] * inner;

    std::vector<T> out(numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = o * row;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const T* src = parts[i].values().data() + o * widths[i];
            std::copy(src, src + widths[i], out.begin() + off);
            off += widths[i];
        }
    }
    return detail::make_result<T>(std::move(out_shape), std::move(out), inputs, "concat",
                                  [inputs, widths, outer, row](const detail::TensorImpl<T>& y) {
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          std::size_t off = o * row;
                                          for (std::size_t i = 0; i < inputs.size(); ++i) {
                                              if (inputs[i]->requires_grad) {
                                                  auto& g = inputs[i]->grad_buffer();
                                                  for (std::size_t j = 0; j < widths[i]; ++j)
                                                      g[o * widths[i] + j] += y.grad[off + j];
                                              }
                                              off += widths[i];
                                          }
                                      }
                                  });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
    if (axis >= x.rank()) {
        throw DimensionError("split: axis out of range for shape " + to_string(x.shape()));
    }
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != x.dim(axis)) {
        throw DimensionError("split: sizes do not sum to extent of axis " + std::to_string(axis) + " in " +
                             to_string(x.shape()));
    }
    std::vector<Tensor<T>> out;
    std::vector<std::size_t> start(x.rank(), 0);
    for (std::size_t s : sizes) {
        Shape extent = x.shape();
        extent[axis] = s;
        out.push_back(crop(x, start, extent));
        start[axis] += s;
    }
    return out;
}

/// Rows of `table` (first axis) selected by `index`; result has shape
/// (index.size(), table.shape[1:]...).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> index) {
    if (table.rank() < 1) {
        throw DimensionError("gather_rows: table must have rank >= 1");
    }
    const std::size_t rows = table.dim(0);
    const std::size_t width = rows ? table.numel() / rows : 0;
    for (std::size_t i : index) {
        if (i >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range for table " +
                                 to_string(table.shape()));
        }
    }
    Shape out_shape = table.shape();
    out_shape[0] = index.size();
    std::vector<T> out(numel(out_shape));
    const auto& tv = table.values();
    for (std::size_t r = 0; r < index.size(); ++r) {
        std::copy_n(tv.begin() + index[r] * width, width, out.begin() + r * width);
    }
    return detail::make_result<T>(std::move(out_shape), std::move(out), {table.impl()}, "gather_rows",
                                  [ti = table.impl(), index = std::move(index), width](const detail::TensorImpl<T>& y) {
                                      auto& g = ti->grad_buffer();
                                      for (std::size_t r = 0; r < index.size(); ++r)
                                          for (std::size_t j = 0; j < width; ++j)
                                              g[index[r] * width + j] += y.grad[r * width + j];
                                  });
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw DimensionError("softmax_last: empty last axis in " + to_string(x.shape()));
    }
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x.impl()}, "softmax",
                                  [xi = x.impl(), n, rows](const detail::TensorImpl<T>& y) {
                                      auto& g = xi->grad_buffer();
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T* yr = y.data.data() + r * n;
                                          const T* gr = y.grad.data() + r * n;
                                          T dot = T(0);
                                          for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                                          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += yr[j] * (gr[j] - dot);
                                      }
                                  });
}

/// Normalizes over the last axis, then applies gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw DimensionError("layer_norm: empty normalized axis in " + to_string(x.shape()));
    }
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layer_norm: affine shapes " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                             " for input " + to_string(x.shape()));
    }
    if (!(eps > T(0))) {
        throw ContractError("layer_norm: eps must be positive");
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    std::vector<T> out(x.numel());
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= T(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), {x.impl(), gamma.impl(), beta.impl()}, "layer_norm",
        [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat), rstd = std::move(rstd), d,
         rows](const detail::TensorImpl<T>& y) {
            if (gi->requires_grad) {
                auto& gg = gi->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += y.grad[r * d + j] * xhat[r * d + j];
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += y.grad[r * d + j];
            }
            if (xi->requires_grad) {
                auto& gx = xi->grad_buffer();
                std::vector<T> dh(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = T(0), mean_dh_h = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = y.grad[r * d + j] * gi->data[j];
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * xhat[r * d + j];
                    }
                    mean_dh /= T(d);
                    mean_dh_h /= T(d);
                    for (std::size_t j = 0; j < d; ++j)
                        gx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                }
            }
        });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    std::vector<T> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    return detail::make_result<T>(x.shape(), std::move(out), {x.impl()}, "gelu",
                                  [xi = x.impl(), inv_sqrt2](const detail::TensorImpl<T>& y) {
                                      const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
                                      auto& g = xi->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) {
                                          const T v = xi->data[i];
                                          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                                          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                                          g[i] += y.grad[i] * (cdf + v * pdf);
                                      }
                                  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.values()) total += v;
    return detail::make_result<T>(Shape{}, {total}, {x.impl()}, "sum", [xi = x.impl()](const detail::TensorImpl<T>& y) {
        auto& g = xi->grad_buffer();
        for (auto& v : g) v += y.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

/// Mean of squared differences over all elements.
template <typename T>
Tensor<T> mean_square_error(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ContractError("mse: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
    }
    const std::size_t n = pred.numel();
    const auto& p = pred.values();
    const auto& t = target.values();
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
    return detail::make_result<T>(Shape{}, {total / T(n)}, {pred.impl(), target.impl()}, "mse",
                                  [pi = pred.impl(), ti = target.impl(), n](const detail::TensorImpl<T>& y) {
                                      const T c = T(2) * y.grad[0] / T(n);
                                      if (pi->requires_grad) {
                                          auto& g = pi->grad_buffer();
                                          for (std::size_t i = 0; i < n; ++i) g[i] += c * (pi->data[i] - ti->data[i]);
                                      }
                                      if (ti->requires_grad) {
                                          auto& g = ti->grad_buffer();
                                          for (std::size_t i = 0; i < n; ++i) g[i] -= c * (pi->data[i] - ti->data[i]);
                                      }
                                  });
}

}  // namespace swin3d
