#pragma once

// Finite-difference gradient checks for every layer type and a tiny model.

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "swin3d/gradcheck.hpp"
#include "swin3d/model.hpp"

namespace swin3d {

struct LayerCheck {
    std::string layer;
    GradCheckResult result;
    double seconds = 0.0;
};

/// Small configuration for the end-to-end check: C=8, two heads, one layer
/// pair per encoder stage, mixer enabled.
inline ModelConfig tiny_gradcheck_config() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.encoder_depths = {2, 2, 2, 2};
    cfg.neck_depth = 2;
    cfg.decoder_depths = {1, 1, 1, 1};
    cfg.mix_features = true;
    return cfg;
}

/// Overwrites every parameter with uniform noise in [-scale, scale]
/// (LayerNorm gains in [1-scale, 1+scale]).
template <typename T>
void perturb_parameters(ParameterSet<T>& params, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& [name, t] : params) {
        const bool gain = name.find("norm") != std::string::npos && name.ends_with(".weight");
        for (auto& v : t.mutable_data()) v = static_cast<T>((gain ? 1.0 : 0.0) + dist(rng));
    }
}

namespace detail {

inline Tensor<double> uniform(const Shape& shape, std::mt19937_64& rng, bool grad = false) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    Tensor<double> t(shape, std::move(v));
    if (grad) t.set_requires_grad(true);
    return t;
}

/// Checks d(sum(f(x) * r))/d(params, x) for a random input x and random r.
template <typename Module, typename Forward>
GradCheckResult check_module(const Module& module, const Shape& in_shape, Forward&& forward, std::mt19937_64& rng,
                             std::size_t samples, double eps, double scale = 0.5) {
    ParameterSet<double> params;
    module.collect(params, "m");
    perturb_parameters(params, rng(), scale);
    auto x = uniform(in_shape, rng, true);
    Tensor<double> probe;
    {
        NoGradGuard no_grad;
        probe = uniform(forward(x).shape(), rng);
    }
    auto targets = targets_of(params);
    targets.push_back({"input", x});
    return finite_diff_check<double>([&] { return sum(mul(forward(x), probe)); }, targets, samples, rng(), eps);
}

}  // namespace detail

/// Runs the per-layer checks (every coordinate) and the end-to-end model
/// check (`model_samples` coordinates per parameter tensor). Model input is
/// [1, in_frames, channels, 16, 16], or larger if the model needs it.
inline std::vector<LayerCheck> gradient_suite(std::uint64_t seed, std::size_t model_samples = 10, double eps = 1e-4,
                                              const std::function<void(const LayerCheck&)>& progress = {},
                                              const ModelConfig& model_cfg = tiny_gradcheck_config()) {
    std::mt19937_64 rng(seed);
    Initializer<double> init(seed);
    std::vector<LayerCheck> out;
    auto run = [&](const std::string& name, auto&& body) {
        const auto start = std::chrono::steady_clock::now();
        LayerCheck c{name, body(), 0.0};
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (progress) progress(c);
        out.push_back(std::move(c));
    };

    run("layer_norm", [&] {
        LayerNorm<double> ln(6, init);
        return detail::check_module(ln, {3, 6}, [&](const Tensor<double>& x) { return ln.forward(x); }, rng, 0, eps);
    });
    run("attention", [&] {
        WindowAttention<double> attn(AttentionConfig{4, 2, true}, {1, 4, 4}, init);
        const WindowSpec spec{{1, 4, 4}, {0, 2, 2}};
        return detail::check_module(
            attn, {1, 2, 6, 6, 4}, [&](const Tensor<double>& x) { return shifted_window_attention(x, attn, spec); },
            rng, 0, eps);
    });
    run("mlp", [&] {
        Mlp<double> mlp(6, 1.0, true, init);
        return detail::check_module(mlp, {2, 3, 6}, [&](const Tensor<double>& x) { return mlp.forward(x); }, rng, 0, eps);
    });
    run("swin_block", [&] {
        SwinBlockPair<double> pair(AttentionConfig{4, 2, true}, {1, 4, 4}, LayerOptions{}, init);
        struct Wrap {
            const SwinBlockPair<double>& p;
            void collect(ParameterSet<double>& s, const std::string& prefix) const { p.collect(s, prefix, 0); }
        } wrap{pair};
        const WindowSpec spec{{1, 4, 4}, {0, 2, 2}};
        return detail::check_module(
            wrap, {1, 1, 6, 5, 4}, [&](const Tensor<double>& x) { return pair.forward(x, spec); }, rng, 0, eps);
    });
    run("patch_merge", [&] {
        PatchMerge<double> merge(3, init);
        return detail::check_module(merge, {1, 2, 4, 4, 3}, [&](const Tensor<double>& x) { return merge.forward(x); },
                                    rng, 0, eps);
    });
    run("patch_expand", [&] {
        auto expand = PatchExpand<double>::halving(6, init);
        return detail::check_module(expand, {1, 2, 2, 2, 6}, [&](const Tensor<double>& x) { return expand.forward(x); },
                                    rng, 0, eps);
    });
    run("skip_merge", [&] {
        SkipMerge<double> merge(MergeMode::Both, 4, init);
        auto skip = detail::uniform({1, 1, 2, 2, 4}, rng, true);
        struct Wrap {
            const SkipMerge<double>& m;
            Tensor<double> skip;
            void collect(ParameterSet<double>& s, const std::string& prefix) const {
                m.collect(s, prefix);
                s.add(prefix + ".skip_input", skip);
            }
        } wrap{merge, skip};
        return detail::check_module(
            wrap, {1, 1, 2, 2, 4}, [&](const Tensor<double>& x) { return merge.forward(x, skip); }, rng, 0, eps);
    });
    run("mixer", [&] {
        FeatureMixer<double> mixer(3 * 2, init);
        return detail::check_module(mixer, {1, 3, 2, 2, 2}, [&](const Tensor<double>& x) { return mixer.forward(x); },
                                    rng, 0, eps);
    });
    run("patch_embed", [&] {
        PatchEmbed<double> embed(2, {1, 2, 2}, 4, init);
        return detail::check_module(embed, {1, 2, 2, 4, 4}, [&](const Tensor<double>& x) { return embed.forward(x); },
                                    rng, 0, eps);
    });
    run("head", [&] {
        ModelConfig cfg;
        cfg.in_frames = 2;
        cfg.out_frames = 2;
        cfg.out_channels = 3;
        cfg.embed_dim = 4;
        cfg.patch_size = {1, 2, 2};
        PredictionHead<double> head(cfg, init);
        return detail::check_module(head, {1, 2, 2, 2, 4}, [&](const Tensor<double>& x) { return head.forward(x); },
                                    rng, 0, eps);
    });
    run("model", [&] {
        SwinUNet3D<double> model(model_cfg, seed);
        struct Wrap {
            const SwinUNet3D<double>& m;
            void collect(ParameterSet<double>& s, const std::string&) const {
                for (const auto& [name, t] : m.parameters()) s.add(name, t);
            }
        } wrap{model};
        return detail::check_module(
            wrap, {1, model_cfg.in_frames, model_cfg.input_channels(), std::max<std::size_t>(16, model_cfg.min_extent(1)),
                   std::max<std::size_t>(16, model_cfg.min_extent(2))},
            [&](const Tensor<double>& x) { return model.forward(x); }, rng, model_samples, eps, 0.25);
    });
    return out;
}

}  // namespace swin3d
