// swin3d command line: data generation, training, evaluation, prediction,
// gradient checking and parameter counts.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include "swin3d/swin3d.hpp"

using namespace swin3d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct ConfigFlags {
    std::string path;
    std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
    cmd->add_option("--config", flags.path, "key = value config file");
    cmd->add_option("--set", flags.overrides, "override one key, e.g. --set max_epochs=5")->allow_extra_args(false);
}

RunConfig resolve_config(const ConfigFlags& flags, RunConfig base = RunConfig{}) {
    RunConfig cfg = flags.path.empty() ? std::move(base) : load_run_config(flags.path, std::move(base));
    for (const auto& o : flags.overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    std::istringstream in(cfg.to_text());
    std::string line;
    while (std::getline(in, line)) std::printf("# %s\n", line.c_str());
    std::fflush(stdout);
}

/// Fails unless `path` can be created: its directory must exist and the path
/// itself must not be a directory.
void check_output_path(const std::string& path, const char* what) {
    namespace fs = std::filesystem;
    if (path.empty()) throw ConfigError(std::string(what) + " path is empty");
    const fs::path p(path);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    if (!fs::is_directory(dir)) throw IoError(std::string(what) + " directory '" + dir.string() + "' does not exist");
    if (fs::is_directory(p)) throw IoError(std::string(what) + " '" + path + "' is a directory");
}

std::vector<TrafficMovie> load_movies(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ConfigError("no data files given (use --data or the 'data' config key)");
    std::vector<TrafficMovie> out;
    for (const auto& p : paths) out.push_back(read_movie(p));
    return out;
}

/// Static maps file: a movie with one frame whose channels are the static channels.
StaticMaps load_static_maps(const RunConfig& cfg, const TrafficMovie& like) {
    StaticMaps s;
    if (cfg.model.static_channels == 0) {
        if (!cfg.static_maps.empty()) throw ConfigError("static_maps given but static_channels = 0");
        return s;
    }
    if (cfg.static_maps.empty()) throw ConfigError("static_channels > 0 needs a static_maps file");
    const auto m = read_movie(cfg.static_maps);
    if (m.frames != 1 || m.channels != cfg.model.static_channels || m.height != like.height || m.width != like.width) {
        throw ConfigError("static_maps must hold 1 frame of " + std::to_string(cfg.model.static_channels) +
                          " channels at " + std::to_string(like.height) + "x" + std::to_string(like.width));
    }
    s.channels = m.channels;
    s.height = m.height;
    s.width = m.width;
    s.values.resize(m.values.size());
    const std::size_t plane = m.height * m.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < m.channels; ++c) s.values[c * plane + p] = m.values[p * m.channels + c];
    return s;
}

Dataset load_dataset(const RunConfig& cfg) {
    Dataset data(load_movies(cfg.data));
    const auto& first = data.movies.front();
    if (first.channels != cfg.model.in_channels) {
        throw ConfigError("movies have " + std::to_string(first.channels) + " channels, model expects " +
                          std::to_string(cfg.model.in_channels));
    }
    if (first.height < cfg.model.min_extent(1) || first.width < cfg.model.min_extent(2)) {
        throw ConfigError("movies of " + std::to_string(first.height) + "x" + std::to_string(first.width) +
                          " are smaller than the model minimum " + std::to_string(cfg.model.min_extent(1)) + "x" +
                          std::to_string(cfg.model.min_extent(2)));
    }
    data.statics = load_static_maps(cfg, first);
    return data;
}

// ---------------------------------------------------------------- generate-data

struct GenerateArgs {
    std::string out;
    std::size_t height = 32, width = 32, frames = 288;
    std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
    if (a.height < 16 || a.width < 16) throw ConfigError("--height and --width must be at least 16");
    if (a.frames == 0) throw ConfigError("--frames must be positive");
    check_output_path(a.out, "output");
    const auto movie = generate_synthetic(a.height, a.width, a.frames, a.seed);
    write_movie(a.out, movie);
    std::printf("wrote %s frames=%zu height=%zu width=%zu channels=%zu samples=%zu bytes=%zu\n", a.out.c_str(),
                movie.frames, movie.height, movie.width, movie.channels, sample_count(movie.frames),
                kMovieHeaderBytes + movie.values.size());
    return kExitOk;
}

// ---------------------------------------------------------------- train

template <typename T>
int run_train(const RunConfig& cfg, const std::string& out_checkpoint) {
    const Dataset data = load_dataset(cfg);
    const Split split = split_samples(data.samples, cfg.train.val_fraction, cfg.train.seed);
    check_output_path(out_checkpoint, "checkpoint");
    if (!cfg.log.empty()) check_output_path(cfg.log, "log");
    std::printf("# samples=%zu train=%zu val=%zu\n", data.samples.size(), split.train.size(), split.val.size());

    SwinUNet3D<T> model(cfg.model, cfg.train.seed);
    std::ofstream log;
    if (!cfg.log.empty()) {
        log.open(cfg.log, std::ios::app);
        if (!log) throw IoError("cannot open log '" + cfg.log + "'");
    }
    TrainHooks hooks;
    hooks.log = [&](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        if (log.is_open()) log << line << '\n' << std::flush;
    };
    hooks.on_best = [&](const EpochRecord&) { save_checkpoint(out_checkpoint, model.parameters(), cfg.checkpoint_text()); };
    const auto report = train(model, data, cfg.train, hooks);
    std::printf("best_epoch=%zu best_val_mse=%.9g final_lr=%.9g checkpoint=%s\n", report.best_epoch,
                report.best_val_mse, report.final_lr, out_checkpoint.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- eval / predict

/// Resolves the config for eval and predict on top of the checkpoint's own
/// settings; any disagreement on a stored key is an error.
RunConfig config_for_checkpoint(const ConfigFlags& flags, const Checkpoint& ck) {
    const RunConfig stored = run_config_from_checkpoint(ck.config_text);
    RunConfig cfg = resolve_config(flags, stored);
    for (const auto& key : RunConfig::checkpoint_keys()) {
        if (cfg.get(key) != stored.get(key)) {
            throw ConfigError("config sets " + key + " = " + cfg.get(key) + " but the checkpoint was trained with " +
                              stored.get(key));
        }
    }
    return cfg;
}

template <typename T>
SwinUNet3D<T> load_model(const RunConfig& cfg, const Checkpoint& ck) {
    SwinUNet3D<T> model(cfg.model, 0);
    apply_checkpoint(model.parameters(), ck);
    return model;
}

template <typename T>
int run_eval(const RunConfig& cfg, const Checkpoint& ck, const std::string& which) {
    auto model = load_model<T>(cfg, ck);
    const Dataset data = load_dataset(cfg);
    std::vector<SampleOrigin> set = data.samples;
    if (which != "all") {
        const auto split = split_samples(data.samples, cfg.train.val_fraction, cfg.train.seed);
        set = which == "train" ? split.train : split.val;
    }
    if (set.empty()) throw ConfigError("no samples to evaluate");
    const auto r = evaluate(model, data, set, cfg.train.normalize, cfg.train.batch_size);
    std::printf("split=%s samples=%zu mse=%.9g\n", which.c_str(), r.samples, r.mse);
    for (std::size_t h = 0; h < kOutputFrames; ++h) std::printf("horizon=+%dmin mse=%.9g\n", kHorizonMinutes[h], r.horizon[h]);
    return kExitOk;
}

template <typename T>
int run_predict(const RunConfig& cfg, const Checkpoint& ck, const std::string& out, std::size_t max_samples) {
    auto model = load_model<T>(cfg, ck);
    if (cfg.data.size() != 1) throw ConfigError("predict takes exactly one data file");
    const Dataset data = load_dataset(cfg);
    std::size_t n = data.samples.size();
    if (max_samples) n = std::min(n, max_samples);
    if (n == 0) throw ConfigError("no samples in '" + cfg.data.front() + "' (each needs 24 frames)");
    check_output_path(out, "output");

    const auto& src = data.movies.front();
    TrafficMovie pred{n * kOutputFrames, src.height, src.width, src.channels, {}};
    pred.values.resize(pred.frames * pred.frame_size());
    const std::size_t plane = src.height * src.width, C = src.channels;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) {
        const auto sample = data.sample(data.samples[i]);
        const auto batch = make_batch<T>({&sample}, cfg.train.normalize, data.static_maps());
        const auto y = model.forward(batch.input);
        const auto& v = y.values();  // [1, 6, C, H, W]
        for (std::size_t f = 0; f < kOutputFrames; ++f)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < plane; ++p)
                    pred.values[((i * kOutputFrames + f) * plane + p) * C + c] =
                        denormalize(v[(f * C + c) * plane + p], cfg.train.normalize);
    }
    write_movie(out, pred);
    std::printf("wrote %s samples=%zu frames=%zu\n", out.c_str(), n, pred.frames);
    return kExitOk;
}

// ---------------------------------------------------------------- gradcheck / param-count / plot

int run_gradcheck(const RunConfig& cfg, std::uint64_t seed, std::size_t samples, double eps, double tolerance) {
    echo_config(cfg);
    double worst = 0.0;
    std::string worst_where;
    const auto checks = gradient_suite(
        seed, samples, eps,
        [&](const LayerCheck& c) {
            const bool ok = c.result.max_rel_error < tolerance;
            std::printf("layer=%s max_rel_error=%.3e worst=%s checked=%zu seconds=%.1f %s\n", c.layer.c_str(),
                        c.result.max_rel_error, c.result.worst.c_str(), c.result.checked, c.seconds, ok ? "ok" : "FAIL");
            std::fflush(stdout);
        },
        cfg.model);
    for (const auto& c : checks) {
        if (c.result.max_rel_error >= worst) {
            worst = c.result.max_rel_error;
            worst_where = c.layer + ":" + c.result.worst;
        }
    }
    const bool pass = worst < tolerance;
    std::printf("max_rel_error=%.3e worst=%s tolerance=%.1e %s\n", worst, worst_where.c_str(), tolerance,
                pass ? "PASS" : "FAIL");
    return pass ? kExitOk : kExitRuntime;
}

int run_param_count(const RunConfig& cfg) {
    const auto counts = count_parameters(cfg.model);
    for (const auto& [module, n] : counts.by_module) std::printf("module=%s params=%zu\n", module.c_str(), n);
    std::printf("attention_projection_weights=%zu\n", counts.attention_projection_weights);
    std::printf("total=%zu\n", counts.total);
    return kExitOk;
}

int run_plot(const std::string& log_path) {
    std::ifstream in(log_path);
    if (!in) throw IoError("cannot open log '" + log_path + "'");
    const std::regex line_re(R"(^epoch=(\d+) train_mse=(\S+) val_mse=(\S+) lr=(\S+)\s*$)");
    std::printf("epoch,train_mse,val_mse,lr\n");
    std::string line;
    std::smatch m;
    while (std::getline(in, line))
        if (std::regex_match(line, m, line_re))
            std::printf("%s,%s,%s,%s\n", m[1].str().c_str(), m[2].str().c_str(), m[3].str().c_str(), m[4].str().c_str());
    return kExitOk;
}

template <typename F>
int with_dtype(const RunConfig& cfg, F&& f) {
    return cfg.dtype == "double" ? f(double{}) : f(float{});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SwinUNet3D traffic-movie forecasting"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every subcommand");

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate-data", "write a synthetic traffic movie");
    generate->add_option("--out", gen.out, "output movie file")->required();
    generate->add_option("--height", gen.height, "grid height")->capture_default_str();
    generate->add_option("--width", gen.width, "grid width")->capture_default_str();
    generate->add_option("--frames", gen.frames, "number of 5-minute frames")->capture_default_str();
    generate->add_option("--seed", gen.seed, "generator seed")->capture_default_str();

    ConfigFlags train_flags;
    std::vector<std::string> train_data;
    std::string out_checkpoint, train_log;
    auto* train_cmd = app.add_subcommand("train", "train a model and keep the best validation checkpoint");
    add_config_flags(train_cmd, train_flags);
    train_cmd->add_option("--data", train_data, "movie files (overrides the 'data' key)");
    train_cmd->add_option("--out-checkpoint", out_checkpoint, "best checkpoint path")->required();
    train_cmd->add_option("--log", train_log, "epoch log, appended (overrides the 'log' key)");

    ConfigFlags eval_flags;
    std::vector<std::string> eval_data;
    std::string eval_checkpoint, eval_split = "all";
    auto* eval_cmd = app.add_subcommand("eval", "report overall and per-horizon MSE");
    add_config_flags(eval_cmd, eval_flags);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--data", eval_data, "movie files");
    eval_cmd->add_option("--split", eval_split, "samples to use: all, train or val (split by seed and val_fraction)")
        ->check(CLI::IsMember({"all", "train", "val"}))
        ->capture_default_str();

    ConfigFlags pred_flags;
    std::vector<std::string> pred_data;
    std::string pred_checkpoint, pred_out;
    std::size_t pred_max = 0;
    auto* predict_cmd = app.add_subcommand("predict", "write predictions as a movie of 6 frames per sample");
    add_config_flags(predict_cmd, pred_flags);
    predict_cmd->add_option("--checkpoint", pred_checkpoint, "checkpoint")->required();
    predict_cmd->add_option("--data", pred_data, "input movie");
    predict_cmd->add_option("--out", pred_out, "output movie")->required();
    predict_cmd->add_option("--max-samples", pred_max, "predict at most this many samples (0 = all)");

    ConfigFlags gc_flags;
    std::uint64_t gc_seed = 0;
    std::size_t gc_samples = 10;
    double gc_eps = 1e-4, gc_tol = 1e-3;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite in 64-bit");
    add_config_flags(gradcheck_cmd, gc_flags);
    gradcheck_cmd->add_option("--seed", gc_seed, "seed")->capture_default_str();
    gradcheck_cmd->add_option("--samples", gc_samples, "coordinates per model tensor (0 = all)")->capture_default_str();
    gradcheck_cmd->add_option("--eps", gc_eps, "central-difference step")->check(CLI::PositiveNumber)->capture_default_str();
    gradcheck_cmd->add_option("--tolerance", gc_tol, "maximum relative error")->check(CLI::PositiveNumber)->capture_default_str();

    ConfigFlags pc_flags;
    auto* param_cmd = app.add_subcommand("param-count", "per-module and total parameter counts");
    add_config_flags(param_cmd, pc_flags);

    std::string plot_log;
    auto* plot_cmd = app.add_subcommand("plot", "print an epoch log as CSV");
    plot_cmd->add_option("--log", plot_log, "training log")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (generate->parsed()) return run_generate(gen);
        if (train_cmd->parsed()) {
            auto cfg = resolve_config(train_flags);
            if (!train_data.empty()) cfg.data = train_data;
            if (!train_log.empty()) cfg.log = train_log;
            echo_config(cfg);
            return with_dtype(cfg, [&](auto tag) { return run_train<decltype(tag)>(cfg, out_checkpoint); });
        }
        if (eval_cmd->parsed()) {
            const auto ck = read_checkpoint(eval_checkpoint);
            auto cfg = config_for_checkpoint(eval_flags, ck);
            if (!eval_data.empty()) cfg.data = eval_data;
            return with_dtype(cfg, [&](auto tag) { return run_eval<decltype(tag)>(cfg, ck, eval_split); });
        }
        if (predict_cmd->parsed()) {
            const auto ck = read_checkpoint(pred_checkpoint);
            auto cfg = config_for_checkpoint(pred_flags, ck);
            if (!pred_data.empty()) cfg.data = pred_data;
            return with_dtype(cfg, [&](auto tag) { return run_predict<decltype(tag)>(cfg, ck, pred_out, pred_max); });
        }
        if (gradcheck_cmd->parsed()) {
            RunConfig base;
            base.model = tiny_gradcheck_config();
            return run_gradcheck(resolve_config(gc_flags, base), gc_seed, gc_samples, gc_eps, gc_tol);
        }
        if (param_cmd->parsed()) return run_param_count(resolve_config(pc_flags));
        if (plot_cmd->parsed()) return run_plot(plot_log);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
