#pragma once

// SwinUNet3D: feature mixing, patch embedding, a shifted-window transformer
// encoder, neck and decoder joined by skip merges, and a prediction head.
//
// Tensor layouts:
//   model input    [B, in_frames, in_channels + static_channels, H, W]
//   token grids    [B, T', H', W', C]
//   model output   [B, out_frames, out_channels, H, W]

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swin3d/attention.hpp"

namespace swin3d {

enum class MergeMode { Concat, Add, Both };

inline std::string to_string(MergeMode m) {
    switch (m) {
        case MergeMode::Concat: return "concat";
        case MergeMode::Add: return "add";
        case MergeMode::Both: return "both";
    }
    return "?";
}

inline MergeMode parse_merge_mode(const std::string& s) {
    if (s == "concat") return MergeMode::Concat;
    if (s == "add") return MergeMode::Add;
    if (s == "both") return MergeMode::Both;
    throw ConfigError("unknown merge mode '" + s + "' (expected concat, add or both)");
}

struct ModelConfig {
    std::size_t in_frames = 12;
    std::size_t in_channels = 8;
    std::size_t out_frames = 6;
    std::size_t out_channels = 8;
    std::size_t static_channels = 0;
    std::size_t embed_dim = 96;
    std::size_t heads = 0;  // heads at stage 0; 0 selects embed_dim / 32
    Extent3 patch_size{1, 4, 4};
    Extent3 window{1, 8, 8};
    Extent3 shift{0, 2, 2};
    std::vector<std::size_t> encoder_depths{4, 4, 4, 4};
    std::size_t neck_depth = 2;
    std::vector<std::size_t> decoder_depths{1, 1, 1, 1};
    double mlp_ratio = 1.0;
    bool mlp_activation = true;
    bool qkv_bias = true;
    bool shifted_first = false;
    MergeMode merge_mode = MergeMode::Both;
    bool mix_features = false;

    std::size_t stages() const { return encoder_depths.size(); }
    std::size_t input_channels() const { return in_channels + static_channels; }
    std::size_t embed_frames() const { return in_frames / patch_size[0]; }
    std::size_t stage_width(std::size_t s) const { return embed_dim << s; }
    std::size_t base_heads() const { return heads ? heads : std::max<std::size_t>(1, embed_dim / 32); }
    std::size_t stage_heads(std::size_t s) const { return base_heads() << s; }
    /// Input extents are padded up to a multiple of this.
    std::size_t spatial_granularity(std::size_t axis) const { return patch_size[axis] << (stages() - 1); }
    /// Smallest accepted input height/width.
    std::size_t min_extent(std::size_t axis) const {
        return stages() >= 2 ? patch_size[axis] << (stages() - 2) : patch_size[axis];
    }
    WindowSpec window_spec() const { return WindowSpec{window, shift}; }
    LayerOptions layer_options() const { return LayerOptions{mlp_ratio, mlp_activation}; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (in_frames == 0 || in_channels == 0 || out_frames == 0 || out_channels == 0) fail("frame and channel counts must be positive");
        if (embed_dim == 0) fail("embed_dim must be positive");
        if (encoder_depths.empty()) fail("at least one encoder stage is required");
        if (decoder_depths.size() != encoder_depths.size())
            fail("decoder_depths must have one entry per encoder stage (" + std::to_string(stages()) + ")");
        for (std::size_t k = 0; k < 3; ++k)
            if (patch_size[k] == 0) fail("patch_size extents must be positive");
        if (in_frames % patch_size[0] != 0)
            fail("in_frames " + std::to_string(in_frames) + " not divisible by temporal patch " + std::to_string(patch_size[0]));
        window_spec().validate();
        for (std::size_t s = 0; s < stages(); ++s)
            AttentionConfig{stage_width(s), stage_heads(s), qkv_bias}.validate();
        mlp_hidden_width(embed_dim, mlp_ratio);
    }
};

template <typename T>
struct FeatureMixer {
    Linear<T> fc;

    FeatureMixer() = default;
    /// Identity-initialized: an exact no-op until trained.
    FeatureMixer(std::size_t width, Initializer<T>& init) {
        fc.weight = init.identity(width);
        fc.bias = init.constant({width}, T(0));
    }

    /// x: [B, t, c, H, W] with t*c == width.
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 5 || x.dim(1) * x.dim(2) != fc.in_features()) {
            throw ConfigError("feature mixer of width " + std::to_string(fc.in_features()) + " cannot mix input " +
                              to_string(x.shape()));
        }
        const std::size_t B = x.dim(0), t = x.dim(1), c = x.dim(2), H = x.dim(3), W = x.dim(4);
        auto sites = reshape(permute(x, {0, 3, 4, 1, 2}), {B, H, W, t * c});
        return permute(reshape(fc.forward(sites), {B, H, W, t, c}), {0, 3, 4, 1, 2});
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const { fc.collect(set, prefix + ".fc"); }
};

/// Non-overlapping patch flattening + affine map (a stride == kernel
/// convolution), then a per-token affine map (a kernel-1 convolution).
template <typename T>
struct PatchEmbed {
    Extent3 patch{};
    Linear<T> proj1;
    Linear<T> proj2;

    PatchEmbed() = default;
    PatchEmbed(std::size_t channels, const Extent3& p, std::size_t dim, Initializer<T>& init)
        : patch(p), proj1(channels * p[0] * p[1] * p[2], dim, init), proj2(dim, dim, init) {}

    /// x: [B, t, c, H, W] -> [B, t/pt, H/ph, W/pw, C]
    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t B = x.dim(0), t = x.dim(1), c = x.dim(2), H = x.dim(3), W = x.dim(4);
        if (t % patch[0] || H % patch[1] || W % patch[2]) {
            throw DimensionError("patch embed: input " + to_string(x.shape()) + " not divisible by patch " +
                                 to_string(patch));
        }
        const std::size_t tp = t / patch[0], hp = H / patch[1], wp = W / patch[2];
        auto v = reshape(x, {B, tp, patch[0], c, hp, patch[1], wp, patch[2]});
        v = permute(v, {0, 1, 4, 6, 3, 2, 5, 7});
        v = reshape(v, {B, tp, hp, wp, c * patch[0] * patch[1] * patch[2]});
        return proj2.forward(proj1.forward(v));
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        proj1.collect(set, prefix + ".proj1");
        proj2.collect(set, prefix + ".proj2");
    }
};

/// Concatenates each 2x2 spatial neighborhood (h0w0, h0w1, h1w0, h1w1) to 4C
/// and maps it to 2C.
template <typename T>
struct PatchMerge {
    Linear<T> fc;

    PatchMerge() = default;
    PatchMerge(std::size_t dim, Initializer<T>& init) : fc(4 * dim, 2 * dim, init) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t B = x.dim(0), T_ = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
        if (H % 2 || W % 2) {
            throw DimensionError("patch merge needs even spatial extents, got " + to_string(x.shape()));
        }
        auto v = reshape(x, {B, T_, H / 2, 2, W / 2, 2, C});
        v = permute(v, {0, 1, 2, 4, 3, 5, 6});
        return fc.forward(reshape(v, {B, T_, H / 2, W / 2, 4 * C}));
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const { fc.collect(set, prefix + ".fc"); }
};

/// Maps C to fh*fw*C_out and rearranges the result into an fh x fw spatial
/// cell of C_out channels.
template <typename T>
struct PatchExpand {
    std::size_t fh = 2, fw = 2, out_dim = 0;
    Linear<T> fc;

    PatchExpand() = default;
    PatchExpand(std::size_t dim, std::size_t factor_h, std::size_t factor_w, std::size_t out, Initializer<T>& init)
        : fh(factor_h), fw(factor_w), out_dim(out), fc(dim, factor_h * factor_w * out, init) {}

    /// The decoder variant: doubles H and W, halves channels.
    static PatchExpand halving(std::size_t dim, Initializer<T>& init) {
        if (dim % 2) {
            throw ConfigError("patch expand needs an even channel count, got " + std::to_string(dim));
        }
        return PatchExpand(dim, 2, 2, dim / 2, init);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t B = x.dim(0), T_ = x.dim(1), H = x.dim(2), W = x.dim(3);
        auto v = reshape(fc.forward(x), {B, T_, H, W, fh, fw, out_dim});
        v = permute(v, {0, 1, 2, 4, 3, 5, 6});
        return reshape(v, {B, T_, H * fh, W * fw, out_dim});
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const { fc.collect(set, prefix + ".fc"); }
};

/// Joins decoder features with the matching encoder skip.
template <typename T>
struct SkipMerge {
    MergeMode mode = MergeMode::Both;
    std::optional<Linear<T>> fc;  // 2C -> C for concat and both

    SkipMerge() = default;
    SkipMerge(MergeMode m, std::size_t dim, Initializer<T>& init) : mode(m) {
        if (m != MergeMode::Add) fc.emplace(2 * dim, dim, init);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip) const {
        if (x.shape() != skip.shape()) {
            throw ContractError("skip merge: decoder " + to_string(x.shape()) + " vs skip " + to_string(skip.shape()));
        }
        if (mode == MergeMode::Add) return add(x, skip);
        auto joined = fc->forward(concat<T>({x, skip}, x.rank() - 1));
        return mode == MergeMode::Both ? add(joined, skip) : joined;
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        if (fc) fc->collect(set, prefix + ".fc");
    }
};

/// Recovers full resolution, folds the temporal axis into features and maps
/// each pixel to out_frames * out_channels values.
template <typename T>
struct PredictionHead {
    PatchExpand<T> expand;
    Linear<T> fc;
    std::size_t out_frames = 0, out_channels = 0;

    PredictionHead() = default;
    PredictionHead(const ModelConfig& cfg, Initializer<T>& init)
        : expand(cfg.embed_dim, cfg.patch_size[1], cfg.patch_size[2], cfg.embed_dim, init),
          fc(cfg.embed_frames() * cfg.embed_dim, cfg.out_frames * cfg.out_channels, init),
          out_frames(cfg.out_frames),
          out_channels(cfg.out_channels) {}

    /// [B, T', H', W', C] -> [B, out_frames, out_channels, H'*ph, W'*pw], cropped
    /// to `crop_h` x `crop_w` when those are nonzero.
    Tensor<T> forward(const Tensor<T>& x, std::size_t crop_h = 0, std::size_t crop_w = 0) const {
        auto v = expand.forward(x);
        if (crop_h && crop_w && (crop_h != v.dim(2) || crop_w != v.dim(3))) {
            v = crop(v, {0, 0, 0, 0, 0}, {v.dim(0), v.dim(1), crop_h, crop_w, v.dim(4)});
        }
        const std::size_t B = v.dim(0), T_ = v.dim(1), H = v.dim(2), W = v.dim(3), C = v.dim(4);
        v = reshape(permute(v, {0, 2, 3, 1, 4}), {B, H, W, T_ * C});
        v = reshape(fc.forward(v), {B, H, W, out_frames, out_channels});
        return permute(v, {0, 3, 4, 1, 2});
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        expand.collect(set, prefix + ".expand");
        fc.collect(set, prefix + ".fc");
    }
};

/// `depth` layers alternating windowed / shifted attention, grouped in pairs.
template <typename T>
struct SwinStage {
    std::vector<SwinBlockPair<T>> pairs;
    std::optional<SwinLayer<T>> tail;

    SwinStage() = default;
    SwinStage(std::size_t depth, const AttentionConfig& cfg, const ModelConfig& mc, Initializer<T>& init) {
        for (std::size_t i = 0; i + 1 < depth; i += 2)
            pairs.emplace_back(cfg, mc.window, mc.layer_options(), init, mc.shifted_first);
        if (depth % 2) tail.emplace(cfg, mc.window, mc.shifted_first, mc.layer_options(), init);
    }

    Tensor<T> forward(Tensor<T> x, const WindowSpec& spec) const {
        for (const auto& p : pairs) x = p.forward(x, spec);
        if (tail) x = tail->forward(x, spec);
        return x;
    }

    void collect(ParameterSet<T>& set, const std::string& prefix) const {
        for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].collect(set, prefix + ".layers", 2 * i);
        if (tail) tail->collect(set, prefix + ".layers." + std::to_string(2 * pairs.size()));
    }
};

/// Shapes seen at stage boundaries during one forward pass.
struct ForwardTrace {
    Shape embedded;
    std::vector<Shape> encoder;  // output of each encoder stage
    Shape neck;
    std::vector<Shape> decoder;  // output of each decoder stage, deepest first
};

template <typename T>
class SwinUNet3D {
public:
    SwinUNet3D(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Initializer<T> init(seed);
        if (cfg_.mix_features) mixer_.emplace(cfg_.in_frames * cfg_.input_channels(), init);
        embed_ = PatchEmbed<T>(cfg_.input_channels(), cfg_.patch_size, cfg_.embed_dim, init);
        const std::size_t S = cfg_.stages();
        for (std::size_t s = 0; s < S; ++s) {
            EncoderStage st;
            if (s > 0) st.merge.emplace(cfg_.stage_width(s - 1), init);
            st.blocks = SwinStage<T>(cfg_.encoder_depths[s], attention(s), cfg_, init);
            encoder_.push_back(std::move(st));
        }
        neck_ = SwinStage<T>(cfg_.neck_depth, attention(S - 1), cfg_, init);
        for (std::size_t i = 0; i < S; ++i) {
            const std::size_t s = S - 1 - i;  // matching encoder stage
            DecoderStage st;
            if (i > 0) st.expand = PatchExpand<T>::halving(cfg_.stage_width(s + 1), init);
            st.merge = SkipMerge<T>(cfg_.merge_mode, cfg_.stage_width(s), init);
            st.blocks = SwinStage<T>(cfg_.decoder_depths[i], attention(s), cfg_, init);
            decoder_.push_back(std::move(st));
        }
        head_ = PredictionHead<T>(cfg_, init);
        collect(params_);
    }

    SwinUNet3D(const SwinUNet3D&) = delete;
    SwinUNet3D& operator=(const SwinUNet3D&) = delete;
    SwinUNet3D(SwinUNet3D&&) noexcept = default;
    SwinUNet3D& operator=(SwinUNet3D&&) noexcept = default;

    const ModelConfig& config() const { return cfg_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }

    /// x: [B, in_frames, in_channels + static_channels, H, W] -> [B, out_frames, out_channels, H, W]
    Tensor<T> forward(const Tensor<T>& x, ForwardTrace* trace = nullptr) const {
        if (x.rank() != 5 || x.dim(1) != cfg_.in_frames || x.dim(2) != cfg_.input_channels()) {
            throw DimensionError("model input must be [B," + std::to_string(cfg_.in_frames) + "," +
                                 std::to_string(cfg_.input_channels()) + ",H,W], got " + to_string(x.shape()));
        }
        const std::size_t H = x.dim(3), W = x.dim(4);
        if (H < cfg_.min_extent(1) || W < cfg_.min_extent(2)) {
            throw ConfigError("input " + std::to_string(H) + "x" + std::to_string(W) + " is too small for " +
                              std::to_string(cfg_.stages() - 1) + " patch merges (minimum " +
                              std::to_string(cfg_.min_extent(1)) + "x" + std::to_string(cfg_.min_extent(2)) + ")");
        }
        const std::size_t gh = cfg_.spatial_granularity(1), gw = cfg_.spatial_granularity(2);
        const std::size_t Hp = (H + gh - 1) / gh * gh, Wp = (W + gw - 1) / gw * gw;

        Tensor<T> v = x;
        if (Hp != H || Wp != W) v = pad(v, {0, 0, 0, 0, 0}, {0, 0, 0, Hp - H, Wp - W});
        if (mixer_) v = mixer_->forward(v);
        v = embed_.forward(v);
        if (trace) trace->embedded = v.shape();

        const WindowSpec spec = cfg_.window_spec();
        std::vector<Tensor<T>> skips;
        for (const auto& st : encoder_) {
            if (st.merge) v = st.merge->forward(v);
            v = st.blocks.forward(v, spec);
            skips.push_back(v);
            if (trace) trace->encoder.push_back(v.shape());
        }
        v = neck_.forward(v, spec);
        if (trace) trace->neck = v.shape();
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const auto& st = decoder_[i];
            if (st.expand) v = st.expand->forward(v);
            v = st.merge.forward(v, skips[skips.size() - 1 - i]);
            v = st.blocks.forward(v, spec);
            if (trace) trace->decoder.push_back(v.shape());
        }
        return head_.forward(v, H, W);
    }

private:
    struct EncoderStage {
        std::optional<PatchMerge<T>> merge;
        SwinStage<T> blocks;
    };
    struct DecoderStage {
        std::optional<PatchExpand<T>> expand;
        SkipMerge<T> merge;
        SwinStage<T> blocks;
    };

    AttentionConfig attention(std::size_t s) const {
        return AttentionConfig{cfg_.stage_width(s), cfg_.stage_heads(s), cfg_.qkv_bias};
    }

    void collect(ParameterSet<T>& set) const {
        if (mixer_) mixer_->collect(set, "mixer");
        embed_.collect(set, "patch_embed");
        for (std::size_t s = 0; s < encoder_.size(); ++s) {
            const std::string p = "encoder." + std::to_string(s);
            if (encoder_[s].merge) encoder_[s].merge->collect(set, p + ".merge");
            encoder_[s].blocks.collect(set, p);
        }
        neck_.collect(set, "neck");
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const std::string p = "decoder." + std::to_string(i);
            if (decoder_[i].expand) decoder_[i].expand->collect(set, p + ".expand");
            decoder_[i].merge.collect(set, p + ".skip");
            decoder_[i].blocks.collect(set, p);
        }
        head_.collect(set, "head");
    }

    ModelConfig cfg_;
    std::optional<FeatureMixer<T>> mixer_;
    PatchEmbed<T> embed_;
    std::vector<EncoderStage> encoder_;
    SwinStage<T> neck_;
    std::vector<DecoderStage> decoder_;
    PredictionHead<T> head_;
    ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Parameter accounting, computed from the configuration alone.

/// Every parameter name with its shape, derived analytically.
inline std::map<std::string, Shape> parameter_layout(const ModelConfig& cfg) {
    cfg.validate();
    std::map<std::string, Shape> out;
    auto linear = [&](const std::string& p, std::size_t in, std::size_t o, bool bias = true) {
        out[p + ".weight"] = {in, o};
        if (bias) out[p + ".bias"] = {o};
    };
    auto layer = [&](const std::string& p, std::size_t dim, std::size_t heads) {
        const std::size_t hidden = mlp_hidden_width(dim, cfg.mlp_ratio);
        out[p + ".norm1.weight"] = {dim};
        out[p + ".norm1.bias"] = {dim};
        linear(p + ".attn.qkv", dim, 3 * dim, cfg.qkv_bias);
        linear(p + ".attn.proj", dim, dim);
        out[p + ".attn.relative_position_bias_table"] = {relative_table_rows(cfg.window), heads};
        out[p + ".norm2.weight"] = {dim};
        out[p + ".norm2.bias"] = {dim};
        linear(p + ".mlp.fc1", dim, hidden);
        linear(p + ".mlp.fc2", hidden, dim);
    };
    auto stage = [&](const std::string& p, std::size_t depth, std::size_t s) {
        for (std::size_t i = 0; i < depth; ++i)
            layer(p + ".layers." + std::to_string(i), cfg.stage_width(s), cfg.stage_heads(s));
    };
    const std::size_t tc = cfg.in_frames * cfg.input_channels();
    if (cfg.mix_features) linear("mixer.fc", tc, tc);
    const auto& ps = cfg.patch_size;
    linear("patch_embed.proj1", cfg.input_channels() * ps[0] * ps[1] * ps[2], cfg.embed_dim);
    linear("patch_embed.proj2", cfg.embed_dim, cfg.embed_dim);
    const std::size_t S = cfg.stages();
    for (std::size_t s = 0; s < S; ++s) {
        const std::string p = "encoder." + std::to_string(s);
        if (s > 0) linear(p + ".merge.fc", 4 * cfg.stage_width(s - 1), 2 * cfg.stage_width(s - 1));
        stage(p, cfg.encoder_depths[s], s);
    }
    stage("neck", cfg.neck_depth, S - 1);
    for (std::size_t i = 0; i < S; ++i) {
        const std::size_t s = S - 1 - i;
        const std::string p = "decoder." + std::to_string(i);
        if (i > 0) linear(p + ".expand.fc", cfg.stage_width(s + 1), 2 * cfg.stage_width(s + 1));
        if (cfg.merge_mode != MergeMode::Add) linear(p + ".skip.fc", 2 * cfg.stage_width(s), cfg.stage_width(s));
        stage(p, cfg.decoder_depths[i], s);
    }
    linear("head.expand.fc", cfg.embed_dim, ps[1] * ps[2] * cfg.embed_dim);
    linear("head.fc", cfg.embed_frames() * cfg.embed_dim, cfg.out_frames * cfg.out_channels);
    return out;
}

/// Top-level module a parameter belongs to: "mixer", "patch_embed",
/// "encoder.<s>", "neck", "decoder.<i>" or "head".
inline std::string module_of(const std::string& name) {
    const auto dot = name.find('.');
    const std::string head = name.substr(0, dot);
    if (head == "encoder" || head == "decoder") {
        const auto dot2 = name.find('.', dot + 1);
        return name.substr(0, dot2);
    }
    return head;
}

inline bool is_attention_projection_weight(const std::string& name) {
    auto ends_with = [&](const std::string& suffix) {
        return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".attn.qkv.weight") || ends_with(".attn.proj.weight");
}

struct ParameterCounts {
    std::map<std::string, std::size_t> by_module;
    std::size_t attention_projection_weights = 0;
    std::size_t total = 0;
};

inline ParameterCounts summarize_counts(const std::map<std::string, Shape>& layout) {
    ParameterCounts c;
    for (const auto& [name, shape] : layout) {
        const std::size_t n = numel(shape);
        c.by_module[module_of(name)] += n;
        if (is_attention_projection_weight(name)) c.attention_projection_weights += n;
        c.total += n;
    }
    return c;
}

inline ParameterCounts count_parameters(const ModelConfig& cfg) { return summarize_counts(parameter_layout(cfg)); }

/// Layout of an instantiated model, for comparison with parameter_layout().
template <typename T>
std::map<std::string, Shape> parameter_layout(const ParameterSet<T>& params) {
    std::map<std::string, Shape> out;
    for (const auto& [name, t] : params) out[name] = t.shape();
    return out;
}

}  // namespace swin3d
