// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "swin3d/swin3d.hpp"
#include "test_util.hpp"

using namespace swin3d;
using swin3d::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    Outcome o;
    const auto start = Clock::now();
    const auto checks = gradient_suite(0);
    const double elapsed = seconds_since(start);
    double worst = 0.0;
    std::set<std::string> seen;
    for (const auto& c : checks) {
        seen.insert(c.layer);
        worst = std::max(worst, c.result.max_rel_error);
        o.require(c.result.max_rel_error < 1e-3,
                  c.layer + " error " + fmt("%.3e", c.result.max_rel_error) + " at " + c.result.worst);
    }
    for (const char* layer : {"attention", "mlp", "layer_norm", "patch_merge", "patch_expand", "mixer", "head", "model"})
        o.require(seen.count(layer) == 1, std::string("no check for ") + layer);
    o.require(elapsed < 300.0, "suite took " + fmt("%.0f s", elapsed));
    if (o.pass)
        o.detail = std::to_string(checks.size()) + " checks, max rel error " + fmt("%.2e", worst) + ", " +
                   fmt("%.0f s", elapsed);
    return o;
}

WindowAttention<double> random_attention(const Extent3& window, std::uint64_t seed) {
    Initializer<double> init(seed);
    WindowAttention<double> attn(AttentionConfig{4, 2, true}, window, init);
    ParameterSet<double> set;
    attn.collect(set, "attn");
    oracle::randomize(set, seed + 1);
    return attn;
}

Outcome shifted_window_oracle() {
    Outcome o;
    std::vector<WindowSpec> specs;
    for (std::size_t wt = 1; wt <= 2; ++wt)
        for (std::size_t wh = 1; wh <= 4; ++wh)
            for (std::size_t ww = 1; ww <= 4; ++ww)
                for (std::size_t st = 0; st < wt; ++st)
                    for (std::size_t sh = 0; sh < wh; ++sh)
                        for (std::size_t sw = 0; sw < ww; ++sw) specs.push_back({{wt, wh, ww}, {st, sh, sw}});

    // four window/shift specs per extent, rotating through all of them
    std::size_t cases = 0, spec_i = 0;
    double worst = 0.0;
    std::uint64_t seed = 1000;
    std::vector<WindowAttention<double>> attns;
    for (std::size_t wt = 1; wt <= 2; ++wt)
        for (std::size_t wh = 1; wh <= 4; ++wh)
            for (std::size_t ww = 1; ww <= 4; ++ww) attns.push_back(random_attention({wt, wh, ww}, seed++));
    auto attn_for = [&](const Extent3& w) -> const WindowAttention<double>& {
        return attns[((w[0] - 1) * 4 + (w[1] - 1)) * 4 + (w[2] - 1)];
    };
    for (std::size_t T = 1; T <= 8; ++T)
        for (std::size_t H = 1; H <= 8; ++H)
            for (std::size_t W = 1; W <= 8; ++W) {
                const Extent3 dims{T, H, W};
                auto x = random_tensor<double>({1, T, H, W, 4}, seed++);
                const auto grid = oracle::grid_of(x);
                for (std::size_t k = 0; k < 4; ++k) {
                    const auto& spec = specs[spec_i++ % specs.size()];
                    const auto& attn = attn_for(spec.window);
                    const double err =
                        oracle::max_abs_diff(shifted_window_attention(x, attn, spec).values(),
                                             oracle::window_attention(grid, attn, spec).v);
                    worst = std::max(worst, err);
                    if (err >= 1e-6 && o.pass)
                        o.require(false, "dims " + to_string(dims) + " window " + to_string(spec.window) + " shift " +
                                             to_string(spec.shift) + " error " + fmt("%.2e", err));
                    ++cases;
                }
            }

    std::size_t mask_configs = 0, mask_failures = 0;
    for (std::size_t T = 1; T <= 8; ++T)
        for (std::size_t H = 1; H <= 8; ++H)
            for (std::size_t W = 1; W <= 8; ++W)
                for (const auto& spec : specs) {
                    mask_failures += oracle::mask_mismatches({T, H, W}, spec) != 0;
                    ++mask_configs;
                }
    o.require(mask_failures == 0, std::to_string(mask_failures) + " mask mismatches");

    std::size_t allowed = 0;
    oracle::mask_mismatches({1, 8, 8}, WindowSpec{{1, 8, 8}, {0, 2, 2}}, &allowed);
    const auto mask = compute_shift_mask<double>({1, 8, 8}, WindowSpec{{1, 8, 8}, {0, 2, 2}});
    std::size_t zeros = 0;
    for (double v : mask.values()) zeros += v == 0.0;
    o.require(allowed == 1600 && zeros == 1600 && mask.numel() == 4096,
              "allowed pairs " + std::to_string(zeros) + "/" + std::to_string(mask.numel()));
    if (o.pass)
        o.detail = std::to_string(cases) + " attention cases max error " + fmt("%.1e", worst) + ", " +
                   std::to_string(mask_configs) + " masks exact, 1600/4096 allowed pairs";
    return o;
}

Outcome shape_contract() {
    Outcome o;
    std::size_t runs = 0;
    for (std::size_t C : {96, 192}) {
        ModelConfig cfg;
        cfg.embed_dim = C;
        cfg.heads = C / 32;
        if (C == 192) cfg.encoder_depths = {2, 2, 2, 2};
        SwinUNet3D<float> model(cfg, 0);
        NoGradGuard no_grad;
        for (std::size_t HW : {32, 48, 64})
            for (std::size_t B : {1, 2}) {
                const auto x = random_tensor<float>({B, 12, 8, HW, HW}, runs);
                const auto y = model.forward(x);
                const Shape want{B, 6, 8, HW, HW};
                bool finite = true;
                for (float v : y.values()) finite = finite && std::isfinite(v);
                o.require(y.shape() == want && finite, "C=" + std::to_string(C) + " got " + to_string(y.shape()));
                ++runs;
            }
    }
    if (o.pass) o.detail = std::to_string(runs) + " forward passes, C=96 full depth and C=192 at encoder depth 2";
    return o;
}

Outcome round_trips() {
    Outcome o;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto x = random_tensor<double>({2, 4, 8, 12, 6}, seed);
        o.require(bitwise_equal(window_reverse(window_partition(x, {2, 4, 3}), x.shape(), {2, 4, 3}).values(), x.values()),
                  "partition/reverse");
        const long s = long(seed) + 1;
        o.require(bitwise_equal(roll(roll(x, {0, -s, s, -2 * s, 0}), {0, s, -s, 2 * s, 0}).values(), x.values()),
                  "shift/unshift");
        const auto movie = generate_synthetic(16 + seed, 20, 5 + seed, seed);
        o.require(decode_movie(encode_movie(movie)) == movie, "movie");
        n += 3;
    }
    const auto path = (std::filesystem::temp_directory_path() / "swin3d_acceptance.t4c").string();
    const auto movie = generate_synthetic(32, 32, 30, 9);
    write_movie(path, movie);
    o.require(read_movie(path) == movie, "movie file");
    std::filesystem::remove(path);

    ModelConfig cfg = tiny_gradcheck_config();
    SwinUNet3D<float> a(cfg, 1), b(cfg, 2);
    SwinUNet3D<double> c(cfg, 3), d(cfg, 4);
    const auto ckpath = (std::filesystem::temp_directory_path() / "swin3d_acceptance.ckpt").string();
    save_checkpoint(ckpath, a.parameters(), "");
    apply_checkpoint(b.parameters(), read_checkpoint(ckpath));
    save_checkpoint(ckpath, c.parameters(), "");
    apply_checkpoint(d.parameters(), read_checkpoint(ckpath));
    std::filesystem::remove(ckpath);
    for (const auto& [name, t] : a.parameters())
        o.require(bitwise_equal(t.values(), b.parameters().at(name).values()), "float checkpoint " + name);
    for (const auto& [name, t] : c.parameters())
        o.require(bitwise_equal(t.values(), d.parameters().at(name).values()), "double checkpoint " + name);
    if (o.pass) o.detail = std::to_string(n + 3) + " round trips bitwise, checkpoints in float and double";
    return o;
}

Outcome mixer_accounting() {
    Outcome o;
    ModelConfig off;
    ModelConfig on = off;
    on.mix_features = true;
    const std::size_t tc = off.in_frames * off.input_channels();
    const auto delta = count_parameters(on).total - count_parameters(off).total;
    o.require(delta == tc * tc + tc && delta == 9312, "delta " + std::to_string(delta));

    ModelConfig small = tiny_gradcheck_config();
    small.mix_features = false;
    ModelConfig small_on = small;
    small_on.mix_features = true;
    SwinUNet3D<double> a(small, 7), b(small_on, 7);
    o.require(b.parameters().size() == a.parameters().size() + 2, "mixer tensors");
    NoGradGuard no_grad;
    const auto x = random_tensor<double>({2, 12, 8, 32, 32}, 8);
    o.require(bitwise_equal(a.forward(x).values(), b.forward(x).values()), "identity mixer changed the output");
    if (o.pass) o.detail = "delta " + std::to_string(delta) + " = (12*8)^2 + 12*8, identity mixer output bitwise equal";
    return o;
}

Outcome trainability() {
    Outcome o;
    const auto r = overfit_probe<float>(0);
    const double ratio = r.final_loss / r.initial;
    o.require(ratio < 0.01, "final/initial " + fmt("%.4f", ratio));
    o.require(r.seconds < 600.0, "probe took " + fmt("%.0f s", r.seconds));

    TrainConfig cfg;
    std::vector<double> flat(40, 1.0);
    std::vector<double> lrs;
    for (std::size_t n = 0; n <= flat.size(); ++n)
        lrs.push_back(plateau_schedule(std::vector<double>(flat.begin(), flat.begin() + long(n)), cfg));
    const std::vector<double> expected_steps{1e-4, 1e-5, 1e-6, 1e-7};
    std::vector<double> distinct;
    for (double lr : lrs)
        if (distinct.empty() || lr != distinct.back()) distinct.push_back(lr);
    o.require(distinct.size() == 4, "schedule has " + std::to_string(distinct.size()) + " levels");
    for (std::size_t i = 0; i < std::min(distinct.size(), expected_steps.size()); ++i)
        o.require(std::abs(distinct[i] - expected_steps[i]) <= 1e-12 * expected_steps[i], "level " + std::to_string(i));
    o.require(lrs.back() == 1e-7, "final rate " + fmt("%.17g", lrs.back()));
    if (o.pass)
        o.detail = "probe " + fmt("%.2f%%", 100 * ratio) + " of initial in 200 steps, " + fmt("%.0f s", r.seconds) +
                   "; flat history 1e-4 -> 1e-5 -> 1e-6 -> 1e-7";
    return o;
}

Outcome determinism() {
    Outcome o;
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.lr_init = 1e-3;
    cfg.normalize = true;
    cfg.augment = true;
    cfg.val_fraction = 0.25;
    cfg.seed = 11;
    auto run = [&] {
        ModelConfig mc = tiny_gradcheck_config();
        SwinUNet3D<float> model(mc, cfg.seed);
        Dataset data({generate_synthetic(32, 32, 32, 5)});
        std::vector<std::string> log;
        train(model, data, cfg, {[&](const std::string& l) { log.push_back(l); }, {}});
        return std::make_pair(log, model.parameters().hash());
    };
    const auto a = run(), b = run();
    o.require(a.first.size() == 3, std::to_string(a.first.size()) + " epochs logged");
    o.require(a.first == b.first, "logs differ");
    o.require(a.second == b.second, "final parameters differ");
    if (o.pass) o.detail = "3-epoch logs and final parameters identical across two runs";
    return o;
}

// Independent heading oracle: each heading is a pair of (east, north) signs.
std::size_t mirrored_channel(std::size_t c, bool horizontal, bool vertical) {
    const int east[4] = {1, 1, -1, -1}, north[4] = {1, -1, -1, 1};  // NE, SE, SW, NW
    const std::size_t k = c / 2;
    const int e = horizontal ? -east[k] : east[k], n = vertical ? -north[k] : north[k];
    for (std::size_t j = 0; j < 4; ++j)
        if (east[j] == e && north[j] == n) return 2 * j + c % 2;
    return c;
}

bool matches_mirror(const std::vector<std::uint8_t>& src, const std::vector<std::uint8_t>& dst, std::size_t C,
                    std::size_t H, std::size_t W, bool horizontal, bool vertical, bool permute) {
    const std::size_t plane = H * W, F = src.size() / (C * plane);
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t dc = permute ? mirrored_channel(c, horizontal, vertical) : c;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) {
                    const std::size_t sh = vertical ? H - 1 - h : h, sw = horizontal ? W - 1 - w : w;
                    if (dst[((f * C + dc) * H + h) * W + w] != src[((f * C + c) * H + sh) * W + sw]) return false;
                }
        }
    return true;
}

Outcome augmentation() {
    Outcome o;
    const auto movie = generate_synthetic(16, 20, 30, 4);
    std::size_t checked = 0;
    for (const auto& s : slice_samples(movie))
        for (bool h : {false, true})
            for (bool v : {false, true})
                for (bool permute : {false, true}) {
                    if (!h && !v) continue;
                    const auto f = flip_augment(s, h, v, permute);
                    const auto back = flip_augment(f, h, v, permute);
                    o.require(back.input == s.input && back.target == s.target, "flip is not an involution");
                    o.require(matches_mirror(s.input, f.input, s.channels, s.height, s.width, h, v, permute) &&
                                  matches_mirror(s.target, f.target, s.channels, s.height, s.width, h, v, permute),
                              std::string(permute ? "permuting" : "plain") + " mode mismatch");
                    ++checked;
                }
    if (o.pass)
        o.detail = std::to_string(checked) +
                   " flips: involutions, channels untouched by plain flips, headings follow the mirror when permuting";
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient integrity", gradient_integrity},
        {"shifted-window oracle equivalence", shifted_window_oracle},
        {"shape contract", shape_contract},
        {"round trips", round_trips},
        {"mixer accounting", mixer_accounting},
        {"trainability", trainability},
        {"determinism", determinism},
        {"augmentation", augmentation},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::printf("%s  %-34s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(start));
        std::fflush(stdout);
    }
    return failures;
}
