#pragma once

// 3D (temporal, height, width) window partitioning, shifted-window masks and
// relative-position index tables.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "swin3d/ops.hpp"

namespace swin3d {

using Extent3 = std::array<std::size_t, 3>;

inline std::string to_string(const Extent3& e) {
    return "(" + std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) + ")";
}

/// Additive pre-softmax logit for forbidden token pairs.
inline constexpr double kMaskValue = -1e9;

struct WindowSpec {
    Extent3 window{1, 8, 8};
    Extent3 shift{0, 0, 0};

    void validate() const {
        for (std::size_t k = 0; k < 3; ++k) {
            if (window[k] == 0) {
                throw ConfigError("window extents must be positive, got " + to_string(window));
            }
            if (shift[k] >= window[k]) {
                throw ConfigError("shift " + to_string(shift) + " must be smaller than window " + to_string(window));
            }
        }
    }

    bool shifted() const { return shift[0] || shift[1] || shift[2]; }
    std::size_t tokens() const { return window[0] * window[1] * window[2]; }
    bool operator==(const WindowSpec&) const = default;
};

/// Window clamped to a feature map: any axis shorter than the window uses the
/// full axis and no shift.
inline WindowSpec effective_window(const WindowSpec& spec, const Extent3& dims) {
    spec.validate();
    WindowSpec out = spec;
    for (std::size_t k = 0; k < 3; ++k) {
        if (dims[k] < spec.window[k]) {
            out.window[k] = dims[k];
            out.shift[k] = 0;
        }
    }
    return out;
}

/// Extents rounded up to whole windows.
inline Extent3 padded_extent(const Extent3& dims, const Extent3& window) {
    Extent3 out{};
    for (std::size_t k = 0; k < 3; ++k) out[k] = (dims[k] + window[k] - 1) / window[k] * window[k];
    return out;
}

inline std::size_t window_count(const Extent3& dims, const Extent3& window) {
    return (dims[0] / window[0]) * (dims[1] / window[1]) * (dims[2] / window[2]);
}

namespace detail {

inline void require_tiling(const Extent3& dims, const Extent3& window) {
    for (std::size_t k = 0; k < 3; ++k) {
        if (window[k] == 0 || dims[k] % window[k] != 0) {
            throw PartitionError("extents " + to_string(dims) + " are not divisible by window " + to_string(window));
        }
    }
}

}  // namespace detail

/// Splits [T,H,W,C] (or batched [B,T,H,W,C]) into non-overlapping windows,
/// returning [B*nW, wt*wh*ww, C]. Windows are ordered batch-major then
/// row-major over the window grid; tokens row-major in (t,h,w).
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const Extent3& window) {
    if (x.rank() != 4 && x.rank() != 5) {
        throw DimensionError("window_partition expects [T,H,W,C] or [B,T,H,W,C], got " + to_string(x.shape()));
    }
    const std::size_t off = x.rank() - 4;
    const std::size_t B = off ? x.dim(0) : 1;
    const Extent3 dims{x.dim(off), x.dim(off + 1), x.dim(off + 2)};
    const std::size_t C = x.dim(off + 3);
    detail::require_tiling(dims, window);
    auto v = reshape(x, {B, dims[0] / window[0], window[0], dims[1] / window[1], window[1], dims[2] / window[2],
                         window[2], C});
    v = permute(v, {0, 1, 3, 5, 2, 4, 6, 7});
    return reshape(v, {B * window_count(dims, window), window[0] * window[1] * window[2], C});
}

/// Inverse of window_partition. `feature_shape` is the shape of the original
/// feature map, [T,H,W,C] or [B,T,H,W,C].
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const Shape& feature_shape, const Extent3& window) {
    if (feature_shape.size() != 4 && feature_shape.size() != 5) {
        throw DimensionError("window_reverse: feature shape must be rank 4 or 5, got " + to_string(feature_shape));
    }
    const std::size_t off = feature_shape.size() - 4;
    const std::size_t B = off ? feature_shape[0] : 1;
    const Extent3 dims{feature_shape[off], feature_shape[off + 1], feature_shape[off + 2]};
    const std::size_t C = feature_shape[off + 3];
    detail::require_tiling(dims, window);
    const std::size_t L = window[0] * window[1] * window[2];
    if (windows.rank() != 3 || windows.dim(1) != L || windows.dim(2) != C ||
        windows.dim(0) * L != B * dims[0] * dims[1] * dims[2]) {
        throw PartitionError("window_reverse: windows " + to_string(windows.shape()) + " do not tile " +
                             to_string(feature_shape) + " with window " + to_string(window));
    }
    auto v = reshape(windows, {B, dims[0] / window[0], dims[1] / window[1], dims[2] / window[2], window[0], window[1],
                               window[2], C});
    v = permute(v, {0, 1, 4, 2, 5, 3, 6, 7});
    return reshape(v, feature_shape);
}

/// Mapping from token pairs inside a window to rows of a relative-position
/// bias table.
struct RelPosTable {
    Extent3 window{};        // window whose tokens are indexed
    Extent3 table_window{};  // window the bias table was sized for
    std::size_t rows = 0;    // (2a-1)(2b-1)(2c-1) over table_window
    std::size_t tokens = 0;  // tokens per window
    std::vector<std::size_t> index;  // tokens*tokens, row-major (query, key)
};

inline std::size_t relative_table_rows(const Extent3& window) {
    return (2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1);
}

/// Builds the pair -> bias-row index. A window smaller than `table_window`
/// (a clamped window) reuses the larger table: its displacements form a
/// subset of the larger window's displacement range.
inline RelPosTable relative_position_index(const Extent3& window, std::optional<Extent3> table_window = std::nullopt) {
    RelPosTable table;
    table.window = window;
    table.table_window = table_window.value_or(window);
    for (std::size_t k = 0; k < 3; ++k) {
        if (window[k] == 0 || window[k] > table.table_window[k]) {
            throw ConfigError("window " + to_string(window) + " does not fit bias table window " +
                              to_string(table.table_window));
        }
    }
    const auto& tw = table.table_window;
    table.rows = relative_table_rows(tw);
    table.tokens = window[0] * window[1] * window[2];
    const long sh = static_cast<long>(2 * tw[1] - 1);
    const long sw = static_cast<long>(2 * tw[2] - 1);
    std::vector<std::array<long, 3>> coords;
    for (std::size_t t = 0; t < window[0]; ++t)
        for (std::size_t h = 0; h < window[1]; ++h)
            for (std::size_t w = 0; w < window[2]; ++w) coords.push_back({long(t), long(h), long(w)});
    table.index.resize(table.tokens * table.tokens);
    for (std::size_t i = 0; i < table.tokens; ++i) {
        for (std::size_t j = 0; j < table.tokens; ++j) {
            const long dt = coords[i][0] - coords[j][0] + long(tw[0]) - 1;
            const long dh = coords[i][1] - coords[j][1] + long(tw[1]) - 1;
            const long dw = coords[i][2] - coords[j][2] + long(tw[2]) - 1;
            table.index[i * table.tokens + j] = static_cast<std::size_t>((dt * sh + dh) * sw + dw);
        }
    }
    return table;
}

namespace detail {

/// Per-axis facts about a position in the padded, cyclically shifted grid.
struct AxisInfo {
    std::vector<int> region;  // 0 before the split at extent-shift, 1 after
    std::vector<bool> valid;  // false for padding
};

inline AxisInfo axis_info(std::size_t real, std::size_t padded, std::size_t shift) {
    AxisInfo info;
    info.region.resize(padded);
    info.valid.resize(padded);
    for (std::size_t r = 0; r < padded; ++r) {
        info.region[r] = (shift > 0 && r >= padded - shift) ? 1 : 0;
        info.valid[r] = (r + shift) % padded < real;
    }
    return info;
}

}  // namespace detail

/// Additive attention mask for the feature map of extents `dims` after it has
/// been zero-padded to whole windows and cyclically shifted by -shift.
/// mask[w][i][j] is 0 when key j is a real (non-padding) token from the same
/// contiguous pre-shift region as query i, and kMaskValue otherwise.
/// `spec` is clamped to `dims` first. Result: [nW, L, L].
template <typename T>
Tensor<T> compute_shift_mask(const Extent3& dims, const WindowSpec& spec) {
    const WindowSpec eff = effective_window(spec, dims);
    const Extent3 padded = padded_extent(dims, eff.window);
    std::array<detail::AxisInfo, 3> axes;
    for (std::size_t k = 0; k < 3; ++k) axes[k] = detail::axis_info(dims[k], padded[k], eff.shift[k]);

    const std::size_t L = eff.tokens();
    const std::size_t nW = window_count(padded, eff.window);
    std::vector<T> mask(nW * L * L, T(0));
    std::vector<int> region(L);
    std::vector<bool> valid(L);
    std::size_t w = 0;
    for (std::size_t bt = 0; bt < padded[0] / eff.window[0]; ++bt)
        for (std::size_t bh = 0; bh < padded[1] / eff.window[1]; ++bh)
            for (std::size_t bw = 0; bw < padded[2] / eff.window[2]; ++bw, ++w) {
                std::size_t i = 0;
                for (std::size_t t = 0; t < eff.window[0]; ++t)
                    for (std::size_t h = 0; h < eff.window[1]; ++h)
                        for (std::size_t x = 0; x < eff.window[2]; ++x, ++i) {
                            const std::size_t pt = bt * eff.window[0] + t;
                            const std::size_t ph = bh * eff.window[1] + h;
                            const std::size_t pw = bw * eff.window[2] + x;
                            region[i] = (axes[0].region[pt] * 2 + axes[1].region[ph]) * 2 + axes[2].region[pw];
                            valid[i] = axes[0].valid[pt] && axes[1].valid[ph] && axes[2].valid[pw];
                        }
                T* m = mask.data() + w * L * L;
                for (std::size_t q = 0; q < L; ++q)
                    for (std::size_t k = 0; k < L; ++k)
                        if (region[q] != region[k] || !valid[k]) m[q * L + k] = T(kMaskValue);
            }
    return Tensor<T>(Shape{nW, L, L}, std::move(mask));
}

/// Mask needed by a window attention layer on a map of extents `dims`, or
/// nullopt when neither shifting nor padding occurs.
template <typename T>
std::optional<Tensor<T>> attention_mask(const Extent3& dims, const WindowSpec& spec) {
    const WindowSpec eff = effective_window(spec, dims);
    if (!eff.shifted() && padded_extent(dims, eff.window) == dims) {
        return std::nullopt;
    }
    return compute_shift_mask<T>(dims, eff);
}

}  // namespace swin3d
