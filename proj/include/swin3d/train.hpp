#pragma once

// MSE training with Adam, reduce-on-plateau learning rate, validation and
// best-checkpoint tracking.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "swin3d/data.hpp"
#include "swin3d/model.hpp"

namespace swin3d {

struct TrainConfig {
    double lr_init = 1e-4;
    double lr_min = 1e-7;
    double plateau_factor = 0.1;
    std::size_t plateau_patience = 3;
    double plateau_min_delta = 1e-6;  // relative
    std::size_t batch_size = 2;
    std::size_t max_epochs = 10;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // max global gradient norm; 0 disables
    bool normalize = false;
    bool augment = false;
    bool permute_channels = false;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (!(lr_init > 0)) fail("lr_init must be positive");
        if (!(lr_min > 0) || lr_min > lr_init) fail("lr_min must satisfy 0 < lr_min <= lr_init");
        if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
        if (plateau_patience == 0) fail("plateau_patience must be at least 1");
        if (!(plateau_min_delta >= 0)) fail("plateau_min_delta must be non-negative");
        if (batch_size == 0) fail("batch_size must be positive");
        if (!(val_fraction > 0 && val_fraction < 1)) fail("val_fraction must be in (0, 1)");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("adam betas must be in [0, 1)");
        if (!(adam_eps > 0)) fail("adam_eps must be positive");
        if (!(grad_clip >= 0)) fail("grad_clip must be non-negative");
    }
};

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    return mean_square_error(pred, target);
}

/// Bias-corrected Adam. Parameters are visited in name order.
template <typename T>
class Adam {
public:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterSet<T>& params, double lr) {
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) throw ContractError("parameter '" + name + "' has no gradient");
        }
        ++step_;
        const double c1 = 1.0 - std::pow(beta1_, double(step_));
        const double c2 = 1.0 - std::pow(beta2_, double(step_));
        for (auto& [name, t] : params) {
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(t.numel(), 0.0);
                st.v.assign(t.numel(), 0.0);
            }
            auto w = t.mutable_data();
            auto g = t.grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i];
                st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * gi;
                st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * gi * gi;
                const double mh = st.m[i] / c1, vh = st.v[i] / c2;
                w[i] = static_cast<T>(double(w[i]) - lr * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    std::uint64_t steps() const { return step_; }
    const std::map<std::string, Moments>& state() const { return state_; }

private:
    double beta1_, beta2_, eps_;
    std::uint64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, t] : params)
        for (T g : t.grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, t] : params)
            for (T& g : t.mutable_grad()) g = static_cast<T>(double(g) * s);
    }
    return norm;
}

/// Reduce-on-plateau: after `patience` consecutive epochs whose loss is not
/// below best * (1 - min_delta), lr becomes max(lr * factor, lr_min).
class PlateauScheduler {
public:
    explicit PlateauScheduler(const TrainConfig& cfg)
        : lr_(cfg.lr_init), min_(cfg.lr_min), factor_(cfg.plateau_factor), delta_(cfg.plateau_min_delta),
          patience_(cfg.plateau_patience) {}

    /// Records one epoch's validation loss and returns the learning rate for the next epoch.
    double observe(double loss) {
        if (loss < best_ * (1.0 - delta_)) {
            best_ = loss;
            bad_ = 0;
        } else if (++bad_ >= patience_) {
            bad_ = 0;
            lr_ = std::max(lr_ * factor_, min_);
            // lr_init * factor^k can land an ulp away from lr_min
            if (std::abs(lr_ - min_) <= 1e-9 * min_) lr_ = min_;
        }
        return lr_;
    }

    double lr() const { return lr_; }
    double best() const { return best_; }

private:
    double lr_, min_, factor_, delta_;
    std::size_t patience_;
    std::size_t bad_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// Learning rate after replaying a history of per-epoch validation losses.
inline double plateau_schedule(const std::vector<double>& history, const TrainConfig& cfg) {
    PlateauScheduler s(cfg);
    for (double l : history) s.observe(l);
    return s.lr();
}

/// Movies plus the (movie, start) index of every sample they contain.
struct Dataset {
    std::vector<TrafficMovie> movies;
    std::vector<SampleOrigin> samples;
    StaticMaps statics;

    explicit Dataset(std::vector<TrafficMovie> m = {}) : movies(std::move(m)) {
        for (std::size_t i = 0; i < movies.size(); ++i) {
            if (movies[i].height != movies.front().height || movies[i].width != movies.front().width ||
                movies[i].channels != movies.front().channels) {
                throw DimensionError("all movies of a dataset must share height, width and channels");
            }
            for (std::size_t t0 = 0; t0 < sample_count(movies[i].frames); ++t0) samples.push_back({i, t0});
        }
    }

    TrafficSample sample(const SampleOrigin& o) const { return slice_sample(movies.at(o.movie), o.start, o.movie); }
    const StaticMaps* static_maps() const { return statics.channels ? &statics : nullptr; }
};

struct Split {
    std::vector<SampleOrigin> train;
    std::vector<SampleOrigin> val;
};

/// Seeded random split; at least one sample lands on each side.
inline Split split_samples(const std::vector<SampleOrigin>& all, double val_fraction, std::uint64_t seed) {
    if (all.size() < 2) {
        throw ConfigError("no samples to train on: need at least 2 samples (each needs 24 frames), have " +
                          std::to_string(all.size()));
    }
    auto order = all;
    std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
    const std::size_t n_val =
        std::clamp<std::size_t>(std::size_t(std::llround(val_fraction * double(all.size()))), 1, all.size() - 1);
    Split s;
    s.val.assign(order.begin(), order.begin() + long(n_val));
    s.train.assign(order.begin() + long(n_val), order.end());
    return s;
}

struct EvalReport {
    double mse = 0.0;                           // raw 0-255 units
    std::array<double, kOutputFrames> horizon{};  // per target frame, raw units
    std::size_t samples = 0;
};

/// Raw-unit scale for a loss computed on (possibly) normalized values.
inline double raw_scale(bool normalized) { return normalized ? 255.0 * 255.0 : 1.0; }

/// Prediction error over `which`, without recording gradients.
template <typename T>
EvalReport evaluate(const SwinUNet3D<T>& model, const Dataset& data, const std::vector<SampleOrigin>& which,
                    bool normalized, std::size_t batch_size = 2) {
    if (which.empty()) throw ConfigError("evaluation set is empty");
    NoGradGuard no_grad;
    EvalReport r;
    std::array<double, kOutputFrames> sse{};
    std::size_t per_frame = 0;
    for (std::size_t b0 = 0; b0 < which.size(); b0 += batch_size) {
        std::vector<TrafficSample> samples;
        for (std::size_t i = b0; i < std::min(which.size(), b0 + batch_size); ++i) samples.push_back(data.sample(which[i]));
        std::vector<const TrafficSample*> ptrs;
        for (const auto& s : samples) ptrs.push_back(&s);
        auto batch = make_batch<T>(ptrs, normalized, data.static_maps());
        auto pred = model.forward(batch.input);
        const auto& p = pred.values();
        const auto& t = batch.target.values();
        const std::size_t frame = p.size() / (samples.size() * kOutputFrames);
        per_frame = frame;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = double(p[i]) - double(t[i]);
            sse[(i / frame) % kOutputFrames] += d * d;
        }
    }
    const double scale = raw_scale(normalized), n = double(which.size() * per_frame);
    double total = 0.0;
    for (std::size_t h = 0; h < kOutputFrames; ++h) {
        r.horizon[h] = sse[h] / n * scale;
        total += sse[h];
    }
    r.mse = total / (n * kOutputFrames) * scale;
    r.samples = which.size();
    return r;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double lr = 0.0;
};

inline std::string format_epoch(const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch=%zu train_mse=%.17g val_mse=%.17g lr=%.17g", e.epoch, e.train_mse, e.val_mse, e.lr);
    return buf;
}

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mse = std::numeric_limits<double>::infinity();
    std::map<std::string, std::vector<double>> best_parameters;
    Split split;
    double final_lr = 0.0;
};

struct TrainHooks {
    std::function<void(const std::string&)> log;            // one formatted line per epoch
    std::function<void(const EpochRecord&)> on_best;        // called after a new best validation loss
};

/// One optimisation step on a batch; returns the loss before the update.
template <typename T>
double train_step(SwinUNet3D<T>& model, Adam<T>& adam, const Batch<T>& batch, double lr, double grad_clip = 0.0) {
    auto& params = model.parameters();
    params.zero_grad();
    auto loss = mse_loss(model.forward(batch.input), batch.target);
    backward(loss);
    if (grad_clip > 0) clip_grad_norm(params, grad_clip);
    adam.step(params, lr);
    return double(loss.item());
}

template <typename T>
TrainReport train(SwinUNet3D<T>& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    TrainReport report;
    report.split = split_samples(data.samples, cfg.val_fraction, cfg.seed);
    std::mt19937_64 rng(cfg.seed ^ 0x5157494E33440000ULL);
    Adam<T> adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
    PlateauScheduler sched(cfg);
    auto order = report.split.train;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = sched.lr();
        std::shuffle(order.begin(), order.end(), rng);
        double weighted = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            std::vector<TrafficSample> samples;
            for (std::size_t i = b0; i < std::min(order.size(), b0 + cfg.batch_size); ++i) {
                auto s = data.sample(order[i]);
                if (cfg.augment) {
                    const auto bits = rng();
                    s = flip_augment(std::move(s), bits & 1, bits & 2, cfg.permute_channels);
                }
                samples.push_back(std::move(s));
            }
            std::vector<const TrafficSample*> ptrs;
            for (const auto& s : samples) ptrs.push_back(&s);
            const double loss = train_step(model, adam, make_batch<T>(ptrs, cfg.normalize, data.static_maps()), lr, cfg.grad_clip);
            if (!std::isfinite(loss)) throw Error("training diverged: non-finite loss in epoch " + std::to_string(epoch));
            weighted += loss * double(samples.size());
        }
        model.parameters().zero_grad();
        EpochRecord rec{epoch, weighted / double(order.size()) * raw_scale(cfg.normalize),
                        evaluate(model, data, report.split.val, cfg.normalize, cfg.batch_size).mse, lr};
        report.epochs.push_back(rec);
        if (hooks.log) hooks.log(format_epoch(rec));
        if (rec.val_mse < report.best_val_mse) {
            report.best_val_mse = rec.val_mse;
            report.best_epoch = epoch;
            report.best_parameters.clear();
            for (const auto& [name, t] : model.parameters())
                report.best_parameters[name] = std::vector<double>(t.values().begin(), t.values().end());
            if (hooks.on_best) hooks.on_best(rec);
        }
        sched.observe(rec.val_mse);
    }
    report.final_lr = sched.lr();
    return report;
}

/// Model used by the overfit probe: embed_dim 32, one layer pair per stage.
inline ModelConfig probe_model_config() {
    ModelConfig cfg;
    cfg.embed_dim = 32;
    cfg.encoder_depths = {2, 2, 2, 2};
    cfg.neck_depth = 2;
    cfg.decoder_depths = {1, 1, 1, 1};
    return cfg;
}

struct ProbeResult {
    std::vector<double> losses;  // loss before each step
    double initial = 0.0;
    double final_loss = 0.0;     // after the last step
    double seconds = 0.0;
};

/// Fits one batch of `samples` synthetic samples (H = W = `extent`) for
/// `steps` Adam steps on normalized values.
template <typename T>
ProbeResult overfit_probe(std::uint64_t seed, std::size_t steps = 200, double lr = 2e-3, std::size_t samples = 4,
                          std::size_t extent = 32, const ModelConfig& mc = probe_model_config(),
                          const std::function<void(std::size_t, double)>& progress = {}) {
    const auto start = std::chrono::steady_clock::now();
    auto movie = generate_synthetic(extent, extent, kSampleSpan + 3 * samples, seed);
    std::vector<TrafficSample> picked;
    for (std::size_t i = 0; i < samples; ++i) picked.push_back(slice_sample(movie, 3 * i));
    std::vector<const TrafficSample*> ptrs;
    for (const auto& s : picked) ptrs.push_back(&s);
    const auto batch = make_batch<T>(ptrs, true);

    SwinUNet3D<T> model(mc, seed);
    Adam<T> adam;
    ProbeResult r;
    for (std::size_t k = 0; k < steps; ++k) {
        r.losses.push_back(train_step(model, adam, batch, lr));
        if (progress) progress(k, r.losses.back());
    }
    {
        NoGradGuard no_grad;
        r.final_loss = double(mse_loss(model.forward(batch.input), batch.target).item());
    }
    r.initial = r.losses.empty() ? r.final_loss : r.losses.front();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace swin3d
