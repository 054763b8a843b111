#pragma once

// Window multi-head self-attention with relative position bias, the
// transformer MLP, and the (W-MSA, SW-MSA) layer pair.

#include <cmath>
#include <optional>
#include <string>

#include "swin3d/ops.hpp"
#include "swin3d/parameter.hpp"
#include "swin3d/windowing.hpp"

namespace swin3d {

inline constexpr double kProjectionInitStd = 0.02;
inline constexpr double kLayerNormEps = 1e-5;

/// Affine map over the last axis: x W + b, W stored as [in, out].
template <typename T>
struct Linear {
    Tensor<T> weight;
    std::optional<Tensor<T>> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Initializer<T>& init, bool with_bias = true)
        : weight(init.truncated_normal({in, out}, kProjectionInitStd)) {
        if (with_bias) {
            bias = init.constant({out}, T(0));
        }
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() == 0 || x.shape().back() != in_features()) {
            throw DimensionError("linear: input " + to_string(x.shape()) + " does not end in " +
                                 std::to_string(in_features()));
        }
        auto y = matmul(x, weight);
        return bias ? add(y, *bias) : y;
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        set.add(prefix + ".weight", weight);
        if (bias) set.add(prefix + ".bias", *bias);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    T eps = T(kLayerNormEps);

    LayerNorm() = default;
    LayerNorm(std::size_t dim, Initializer<T>& init)
        : gamma(init.constant({dim}, T(1))), beta(init.constant({dim}, T(0))) {}

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        set.add(prefix + ".weight", gamma);
        set.add(prefix + ".bias", beta);
    }
};

struct AttentionConfig {
    std::size_t dim = 96;
    std::size_t heads = 3;
    bool qkv_bias = true;

    void validate() const {
        if (dim == 0 || heads == 0 || dim % heads != 0) {
            throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
    }
    std::size_t head_dim() const { return dim / heads; }
    double scale() const { return 1.0 / std::sqrt(static_cast<double>(head_dim())); }
};

/// Multi-head self-attention applied independently within each window.
template <typename T>
struct WindowAttention {
    AttentionConfig cfg;
    Extent3 table_window{};
    Linear<T> qkv;
    Linear<T> proj;
    Tensor<T> bias_table;  // [relative_table_rows(table_window), heads]

    WindowAttention() = default;
    WindowAttention(const AttentionConfig& c, const Extent3& window, Initializer<T>& init)
        : cfg((c.validate(), c)),
          table_window(window),
          qkv(c.dim, 3 * c.dim, init, c.qkv_bias),
          proj(c.dim, c.dim, init),
          bias_table(init.constant({relative_table_rows(window), c.heads}, T(0))) {}

    /// tokens: [N, L, C] with N = batch * windows. `mask`, when given, is
    /// [nW, L, L] and is applied to window n as mask[n % nW].
    Tensor<T> forward(const Tensor<T>& tokens, const RelPosTable& rel,
                      const std::optional<Tensor<T>>& mask = std::nullopt) const {
        if (tokens.rank() != 3 || tokens.dim(2) != cfg.dim) {
            throw DimensionError("window attention expects [N, L, " + std::to_string(cfg.dim) + "], got " +
                                 to_string(tokens.shape()));
        }
        const std::size_t N = tokens.dim(0), L = tokens.dim(1), C = cfg.dim, H = cfg.heads, D = cfg.head_dim();
        if (rel.tokens != L || rel.table_window != table_window) {
            throw DimensionError("relative position index for " + std::to_string(rel.tokens) +
                                 " tokens does not match windows of " + std::to_string(L));
        }
        auto packed = permute(reshape(qkv.forward(tokens), {N, L, 3, H, D}), {2, 0, 3, 1, 4});
        auto parts = split(packed, 0, {1, 1, 1});
        auto q = scale(reshape(parts[0], {N, H, L, D}), T(cfg.scale()));
        auto k = reshape(parts[1], {N, H, L, D});
        auto v = reshape(parts[2], {N, H, L, D});

        auto logits = matmul(q, transpose_last(k));  // [N, H, L, L]
        auto bias = permute(reshape(gather_rows(bias_table, rel.index), {L, L, H}), {2, 0, 1});
        logits = add(logits, bias);
        if (mask) {
            const std::size_t nW = mask->dim(0);
            if (mask->shape() != Shape{nW, L, L} || N % nW != 0) {
                throw DimensionError("attention mask " + to_string(mask->shape()) + " does not fit " +
                                     std::to_string(N) + " windows of " + std::to_string(L) + " tokens");
            }
            std::vector<T> expanded(nW * H * L * L);
            const auto& mv = mask->values();
            for (std::size_t w = 0; w < nW; ++w)
                for (std::size_t h = 0; h < H; ++h)
                    std::copy_n(mv.begin() + w * L * L, L * L, expanded.begin() + (w * H + h) * L * L);
            Tensor<T> m(Shape{nW, H, L, L}, std::move(expanded));
            logits = reshape(add(reshape(logits, {N / nW, nW, H, L, L}), m), {N, H, L, L});
        }
        auto weights = softmax_last(logits);
        auto out = permute(matmul(weights, v), {0, 2, 1, 3});  // [N, L, H, D]
        return proj.forward(reshape(out, {N, L, C}));
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        qkv.collect(set, prefix + ".qkv");
        proj.collect(set, prefix + ".proj");
        set.add(prefix + ".relative_position_bias_table", bias_table);
    }
};

/// (S)W-MSA over a [B, T, H, W, C] map: pad to whole windows, shift by -shift,
/// attend within windows under the shift/padding mask, then undo all three.
/// `spec` is clamped to the map first.
template <typename T>
Tensor<T> shifted_window_attention(const Tensor<T>& x, const WindowAttention<T>& attn, const WindowSpec& spec) {
    if (x.rank() != 5) {
        throw DimensionError("windowed attention expects [B,T,H,W,C], got " + to_string(x.shape()));
    }
    const Extent3 dims{x.dim(1), x.dim(2), x.dim(3)};
    const WindowSpec eff = effective_window(spec, dims);
    const Extent3 padded = padded_extent(dims, eff.window);

    Tensor<T> h = x;
    if (padded != dims) {
        h = pad(h, {0, 0, 0, 0, 0}, {0, padded[0] - dims[0], padded[1] - dims[1], padded[2] - dims[2], 0});
    }
    const std::vector<long> back{0, -long(eff.shift[0]), -long(eff.shift[1]), -long(eff.shift[2]), 0};
    const std::vector<long> fwd{0, long(eff.shift[0]), long(eff.shift[1]), long(eff.shift[2]), 0};
    if (eff.shifted()) h = roll(h, back);
    const Shape padded_shape = h.shape();
    auto windows = window_partition(h, eff.window);
    windows = attn.forward(windows, relative_position_index(eff.window, attn.table_window), attention_mask<T>(dims, eff));
    h = window_reverse(windows, padded_shape, eff.window);
    if (eff.shifted()) h = roll(h, fwd);
    if (padded != dims) h = crop(h, {0, 0, 0, 0, 0}, x.shape());
    return h;
}

inline std::size_t mlp_hidden_width(std::size_t dim, double ratio) {
    const auto hidden = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(dim)));
    if (!(ratio > 0.0) || hidden == 0) {
        throw ConfigError("mlp ratio " + std::to_string(ratio) + " gives an empty hidden layer at width " +
                          std::to_string(dim));
    }
    return hidden;
}

/// Two affine layers, with GELU between them unless `activation` is false.
template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;
    bool activation = true;

    Mlp() = default;
    Mlp(std::size_t dim, double ratio, bool act, Initializer<T>& init)
        : fc1(dim, mlp_hidden_width(dim, ratio), init), fc2(mlp_hidden_width(dim, ratio), dim, init), activation(act) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h = fc1.forward(x);
        if (activation) h = gelu(h);
        return fc2.forward(h);
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        fc1.collect(set, prefix + ".fc1");
        fc2.collect(set, prefix + ".fc2");
    }
};

struct LayerOptions {
    double mlp_ratio = 1.0;
    bool mlp_activation = true;
};

/// One pre-norm transformer layer: (S)W-MSA with residual, then MLP with residual.
template <typename T>
struct SwinLayer {
    LayerNorm<T> norm1;
    WindowAttention<T> attn;
    LayerNorm<T> norm2;
    Mlp<T> mlp;
    bool shifted = false;

    SwinLayer() = default;
    SwinLayer(const AttentionConfig& cfg, const Extent3& window, bool shift, const LayerOptions& opt,
              Initializer<T>& init)
        : norm1(cfg.dim, init),
          attn(cfg, window, init),
          norm2(cfg.dim, init),
          mlp(cfg.dim, opt.mlp_ratio, opt.mlp_activation, init),
          shifted(shift) {}

    /// Attention sublayer only (residual included).
    Tensor<T> attention_forward(const Tensor<T>& x, WindowSpec spec) const {
        if (!shifted) spec.shift = {0, 0, 0};
        return add(x, shifted_window_attention(norm1.forward(x), attn, spec));
    }

    /// x: [B, T, H, W, C] -> same shape.
    Tensor<T> forward(const Tensor<T>& x, const WindowSpec& spec) const {
        if (x.rank() != 5 || x.dim(4) != attn.cfg.dim) {
            throw DimensionError("swin layer expects [B,T,H,W," + std::to_string(attn.cfg.dim) + "], got " +
                                 to_string(x.shape()));
        }
        auto y = attention_forward(x, spec);
        return add(y, mlp.forward(norm2.forward(y)));
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        norm1.collect(set, prefix + ".norm1");
        attn.collect(set, prefix + ".attn");
        norm2.collect(set, prefix + ".norm2");
        mlp.collect(set, prefix + ".mlp");
    }
};

/// Two consecutive layers sharing one window: by default windowed first, then
/// shifted. `shifted_first` swaps the order.
template <typename T>
struct SwinBlockPair {
    SwinLayer<T> first;
    SwinLayer<T> second;

    SwinBlockPair() = default;
    SwinBlockPair(const AttentionConfig& cfg, const Extent3& window, const LayerOptions& opt, Initializer<T>& init,
                  bool shifted_first = false)
        : first(cfg, window, shifted_first, opt, init), second(cfg, window, !shifted_first, opt, init) {}

    Tensor<T> forward(const Tensor<T>& z, const WindowSpec& spec) const {
        return second.forward(first.forward(z, spec), spec);
    }

    void collect(ParameterSet<T>& set, const std::string& prefix, std::size_t first_index) const {
        first.collect(set, prefix + "." + std::to_string(first_index));
        second.collect(set, prefix + "." + std::to_string(first_index + 1));
    }
};

/// Runs a layer pair on [T,H,W,C] or [B,T,H,W,C]; output has the input's shape.
template <typename T>
Tensor<T> swin_block_forward(const Tensor<T>& z, const SwinBlockPair<T>& pair, const WindowSpec& spec) {
    if (z.rank() == 4) {
        Shape batched{1, z.dim(0), z.dim(1), z.dim(2), z.dim(3)};
        return reshape(pair.forward(reshape(z, batched), spec), z.shape());
    }
    return pair.forward(z, spec);
}

}  // namespace swin3d
