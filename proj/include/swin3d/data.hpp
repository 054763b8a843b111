#pragma once

// Traffic movies: synthetic generation, sample slicing, flip augmentation,
// normalization and the binary movie file.
//
// Movie values are u8 in (frame, h, w, channel) order. Channels are
// (volume, speed) per heading, headings in the order NE, SE, SW, NW:
//   0 NE volume, 1 NE speed, 2 SE volume, 3 SE speed,
//   4 SW volume, 5 SW speed, 6 NW volume, 7 NW speed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "swin3d/errors.hpp"
#include "swin3d/tensor.hpp"

namespace swin3d {

inline constexpr std::size_t kInputFrames = 12;
inline constexpr std::size_t kHeadings = 4;
inline constexpr std::size_t kMovieChannels = 2 * kHeadings;
/// Target frames after the last input frame: +5, +10, +15, +30, +45, +60 minutes.
inline constexpr std::array<std::size_t, 6> kHorizonOffsets{1, 2, 3, 6, 9, 12};
inline constexpr std::array<int, 6> kHorizonMinutes{5, 10, 15, 30, 45, 60};
inline constexpr std::size_t kOutputFrames = kHorizonOffsets.size();
/// Frames spanned by one sample (inputs plus the furthest target).
inline constexpr std::size_t kSampleSpan = kInputFrames + kHorizonOffsets.back();

enum class Heading : std::size_t { NE = 0, SE = 1, SW = 2, NW = 3 };

constexpr std::size_t volume_channel(Heading h) { return 2 * static_cast<std::size_t>(h); }
constexpr std::size_t speed_channel(Heading h) { return 2 * static_cast<std::size_t>(h) + 1; }

struct TrafficMovie {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = kMovieChannels;
    std::vector<std::uint8_t> values;

    std::size_t frame_size() const { return height * width * channels; }
    std::size_t index(std::size_t f, std::size_t h, std::size_t w, std::size_t c) const {
        return ((f * height + h) * width + w) * channels + c;
    }
    std::uint8_t at(std::size_t f, std::size_t h, std::size_t w, std::size_t c) const { return values[index(f, h, w, c)]; }

    void validate() const {
        if (values.size() != frames * frame_size()) {
            throw DimensionError("movie " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                                 std::to_string(width) + "x" + std::to_string(channels) + " holds " +
                                 std::to_string(values.size()) + " values");
        }
    }

    bool operator==(const TrafficMovie&) const = default;
};

namespace detail {

inline double periodic_delta(double a, double b, double extent) {
    double d = std::fmod(a - b, extent);
    if (d > extent / 2) d -= extent;
    if (d < -extent / 2) d += extent;
    return d;
}

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); }

}  // namespace detail

/// Deterministic stand-in for a city movie: a sparse static road mask carrying
/// a daily base flow, plus Gaussian congestion blobs drifting with constant
/// velocity (wrapping at the borders). Off-road cells are zero everywhere.
inline TrafficMovie generate_synthetic(std::size_t height, std::size_t width, std::size_t frames, std::uint64_t seed) {
    if (height < 16 || width < 16) throw ConfigError("synthetic movies need height and width >= 16");
    if (frames == 0) throw ConfigError("synthetic movies need at least one frame");

    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    // Roads: a few full rows and columns plus one diagonal, each carrying its own heading mix.
    std::vector<std::array<double, kHeadings>> road(height * width, {0, 0, 0, 0});
    auto lay = [&](std::size_t h, std::size_t w, const std::array<double, kHeadings>& mix) {
        auto& cell = road[h * width + w];
        for (std::size_t k = 0; k < kHeadings; ++k) cell[k] = std::max(cell[k], mix[k]);
    };
    auto pick = [&](std::size_t n, std::size_t extent) {
        std::vector<std::size_t> all(extent);
        for (std::size_t i = 0; i < extent; ++i) all[i] = i;
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(std::min(n, extent));
        return all;
    };
    for (std::size_t h : pick(std::max<std::size_t>(2, height / 8), height)) {
        const double a = uniform(0.6, 1.0), b = uniform(0.6, 1.0);
        for (std::size_t w = 0; w < width; ++w) lay(h, w, {a, b, b, a});
    }
    for (std::size_t w : pick(std::max<std::size_t>(2, width / 8), width)) {
        const double a = uniform(0.6, 1.0), b = uniform(0.6, 1.0);
        for (std::size_t h = 0; h < height; ++h) lay(h, w, {a, a, b, b});
    }
    {
        const std::size_t w0 = std::uniform_int_distribution<std::size_t>(0, width - 1)(rng);
        const double a = uniform(0.6, 1.0);
        for (std::size_t h = 0; h < height; ++h) lay(h, (w0 + h) % width, {0.3, a, 0.3, a});
    }

    struct Blob {
        double y, x, vy, vx, sigma, amplitude;
    };
    const std::size_t n_blobs = 3 + rng() % 3;
    std::vector<Blob> blobs;
    for (std::size_t i = 0; i < n_blobs; ++i) {
        blobs.push_back({uniform(0, double(height)), uniform(0, double(width)), uniform(-0.6, 0.6), uniform(-0.6, 0.6),
                         uniform(2.0, 0.2 * double(std::min(height, width))), uniform(0.5, 1.0)});
    }
    const double phase = uniform(0, 2 * std::numbers::pi);
    const double base_volume = uniform(40, 80), base_speed = uniform(150, 220);

    TrafficMovie m{frames, height, width, kMovieChannels, {}};
    m.values.assign(frames * m.frame_size(), 0);
    std::vector<double> congestion(height * width);
    for (std::size_t f = 0; f < frames; ++f) {
        const double daily = 0.75 + 0.25 * std::sin(2 * std::numbers::pi * double(f) / 288.0 + phase);
        std::fill(congestion.begin(), congestion.end(), 0.0);
        for (const auto& b : blobs) {
            const double cy = b.y + b.vy * double(f), cx = b.x + b.vx * double(f);
            for (std::size_t h = 0; h < height; ++h) {
                const double dy = detail::periodic_delta(double(h), cy, double(height));
                for (std::size_t w = 0; w < width; ++w) {
                    const double dx = detail::periodic_delta(double(w), cx, double(width));
                    congestion[h * width + w] += b.amplitude * std::exp(-(dy * dy + dx * dx) / (2 * b.sigma * b.sigma));
                }
            }
        }
        for (std::size_t h = 0; h < height; ++h)
            for (std::size_t w = 0; w < width; ++w) {
                const auto& mix = road[h * width + w];
                const double c = std::min(congestion[h * width + w], 1.5);
                for (std::size_t k = 0; k < kHeadings; ++k) {
                    if (mix[k] == 0.0) continue;
                    const double volume = mix[k] * daily * base_volume * (1.0 + 1.2 * c);
                    const double speed = base_speed * (1.0 - 0.55 * c) * (0.9 + 0.1 * mix[k]);
                    m.values[m.index(f, h, w, 2 * k)] = std::max<std::uint8_t>(1, detail::quantize(volume));
                    m.values[m.index(f, h, w, 2 * k + 1)] = std::max<std::uint8_t>(1, detail::quantize(speed));
                }
            }
    }
    return m;
}

/// Cells (h, w) carrying any nonzero value in any frame.
inline std::vector<bool> occupancy(const TrafficMovie& m) {
    std::vector<bool> on(m.height * m.width, false);
    for (std::size_t f = 0; f < m.frames; ++f)
        for (std::size_t p = 0; p < m.height * m.width; ++p)
            for (std::size_t c = 0; c < m.channels; ++c)
                if (m.values[(f * m.height * m.width + p) * m.channels + c]) on[p] = true;
    return on;
}

struct SampleOrigin {
    std::size_t movie = 0;
    std::size_t start = 0;

    bool operator==(const SampleOrigin&) const = default;
};

/// One training example in model layout: input [12, C, H, W] and target
/// [6, C, H, W], both u8.
struct TrafficSample {
    std::size_t channels = kMovieChannels;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> input;
    std::vector<std::uint8_t> target;
    SampleOrigin origin;
    bool flipped_horizontal = false;
    bool flipped_vertical = false;

    std::size_t frame_size() const { return channels * height * width; }
    bool operator==(const TrafficSample&) const = default;
};

/// Number of samples a movie of `frames` frames yields.
constexpr std::size_t sample_count(std::size_t frames) { return frames >= kSampleSpan ? frames - kSampleSpan + 1 : 0; }

/// Movie frame indices making up the sample that starts at `start`.
inline std::array<std::size_t, kInputFrames> input_frames(std::size_t start) {
    std::array<std::size_t, kInputFrames> f{};
    for (std::size_t i = 0; i < kInputFrames; ++i) f[i] = start + i;
    return f;
}
inline std::array<std::size_t, kOutputFrames> target_frames(std::size_t start) {
    std::array<std::size_t, kOutputFrames> f{};
    for (std::size_t i = 0; i < kOutputFrames; ++i) f[i] = start + kInputFrames - 1 + kHorizonOffsets[i];
    return f;
}

namespace detail {

/// Copies movie frame `f` into `out` transposed to [C, H, W].
inline void copy_frame_chw(const TrafficMovie& m, std::size_t f, std::uint8_t* out) {
    const std::size_t plane = m.height * m.width;
    const std::uint8_t* src = m.values.data() + f * m.frame_size();
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < m.channels; ++c) out[c * plane + p] = src[p * m.channels + c];
}

}  // namespace detail

inline TrafficSample slice_sample(const TrafficMovie& m, std::size_t start, std::size_t movie_id = 0) {
    if (start + kSampleSpan > m.frames) {
        throw ContractError("sample start " + std::to_string(start) + " needs frames up to " +
                            std::to_string(start + kSampleSpan - 1) + ", movie has " + std::to_string(m.frames));
    }
    TrafficSample s;
    s.channels = m.channels;
    s.height = m.height;
    s.width = m.width;
    s.origin = {movie_id, start};
    const std::size_t fs = s.frame_size();
    s.input.resize(kInputFrames * fs);
    s.target.resize(kOutputFrames * fs);
    const auto in = input_frames(start);
    const auto out = target_frames(start);
    for (std::size_t i = 0; i < in.size(); ++i) detail::copy_frame_chw(m, in[i], s.input.data() + i * fs);
    for (std::size_t i = 0; i < out.size(); ++i) detail::copy_frame_chw(m, out[i], s.target.data() + i * fs);
    return s;
}

/// Every sample of the movie, start frames 0 .. F-24. Empty when F < 24.
inline std::vector<TrafficSample> slice_samples(const TrafficMovie& m, std::size_t movie_id = 0) {
    std::vector<TrafficSample> out;
    const std::size_t n = sample_count(m.frames);
    out.reserve(n);
    for (std::size_t t0 = 0; t0 < n; ++t0) out.push_back(slice_sample(m, t0, movie_id));
    return out;
}

/// Channel permutation matching a geometric flip. Horizontal (mirror along W)
/// exchanges east and west: NE<->NW, SE<->SW. Vertical (mirror along H)
/// exchanges north and south: NE<->SE, NW<->SW.
inline std::array<std::size_t, kMovieChannels> flip_channel_map(bool horizontal, bool vertical) {
    std::array<std::size_t, kHeadings> heading{0, 1, 2, 3};
    constexpr std::array<std::size_t, kHeadings> mirror_w{3, 2, 1, 0};
    constexpr std::array<std::size_t, kHeadings> mirror_h{1, 0, 3, 2};
    if (horizontal)
        for (auto& k : heading) k = mirror_w[k];
    if (vertical)
        for (auto& k : heading) k = mirror_h[k];
    std::array<std::size_t, kMovieChannels> map{};
    for (std::size_t k = 0; k < kHeadings; ++k) {
        map[2 * k] = 2 * heading[k];
        map[2 * k + 1] = 2 * heading[k] + 1;
    }
    return map;
}

namespace detail {

inline void flip_frames(std::vector<std::uint8_t>& v, std::size_t C, std::size_t H, std::size_t W, bool horizontal,
                        bool vertical, bool permute) {
    const std::size_t plane = H * W, frame = C * plane, F = v.size() / frame;
    std::array<std::size_t, kMovieChannels> map{};
    for (std::size_t c = 0; c < kMovieChannels; ++c) map[c] = c;
    if (permute) map = flip_channel_map(horizontal, vertical);
    std::vector<std::uint8_t> out(v.size());
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t dc = c < kMovieChannels ? map[c] : c;
            const std::uint8_t* src = v.data() + f * frame + c * plane;
            std::uint8_t* dst = out.data() + f * frame + dc * plane;
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t sh = vertical ? H - 1 - h : h;
                for (std::size_t w = 0; w < W; ++w) dst[h * W + w] = src[sh * W + (horizontal ? W - 1 - w : w)];
            }
        }
    v = std::move(out);
}

}  // namespace detail

/// Mirrors input and target along W (horizontal) and/or H (vertical). With
/// `permute_channels`, heading channel pairs follow the mirror; otherwise the
/// channel order is left as is.
inline TrafficSample flip_augment(TrafficSample s, bool horizontal, bool vertical, bool permute_channels = false) {
    if (!horizontal && !vertical) return s;
    if (permute_channels && s.channels < kMovieChannels) {
        throw ContractError("channel permutation needs the " + std::to_string(kMovieChannels) + " heading channels");
    }
    detail::flip_frames(s.input, s.channels, s.height, s.width, horizontal, vertical, permute_channels);
    detail::flip_frames(s.target, s.channels, s.height, s.width, horizontal, vertical, permute_channels);
    s.flipped_horizontal ^= horizontal;
    s.flipped_vertical ^= vertical;
    return s;
}

/// u8 -> T, divided by 255 when enabled.
template <typename T>
T normalize(std::uint8_t v, bool enabled) {
    return enabled ? static_cast<T>(v) / T(255) : static_cast<T>(v);
}

/// T -> u8: scaled back by 255 when enabled, clamped to [0, 255], rounded half to even.
template <typename T>
std::uint8_t denormalize(T v, bool enabled) {
    double x = enabled ? double(v) * 255.0 : double(v);
    if (std::isnan(x)) return 0;
    x = std::clamp(x, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::nearbyint(x));
}

template <typename T>
std::vector<T> normalize(const std::vector<std::uint8_t>& v, bool enabled) {
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = normalize<T>(v[i], enabled);
    return out;
}

template <typename T>
std::vector<std::uint8_t> denormalize(std::span<const T> v, bool enabled) {
    std::vector<std::uint8_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = denormalize(v[i], enabled);
    return out;
}

/// Per-cell maps appended to every input frame as extra channels, [S, H, W].
struct StaticMaps {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;
};

template <typename T>
struct Batch {
    Tensor<T> input;   // [B, 12, C + S, H, W]
    Tensor<T> target;  // [B, 6, C, H, W]
};

/// Stacks samples into model tensors. All samples must share C, H and W.
template <typename T>
Batch<T> make_batch(const std::vector<const TrafficSample*>& samples, bool normalize_values,
                    const StaticMaps* statics = nullptr) {
    if (samples.empty()) throw ContractError("make_batch needs at least one sample");
    const auto& first = *samples.front();
    const std::size_t C = first.channels, H = first.height, W = first.width, plane = H * W;
    const std::size_t S = statics ? statics->channels : 0;
    if (statics && (statics->height != H || statics->width != W || statics->values.size() != S * plane)) {
        throw DimensionError("static maps do not match the sample grid " + std::to_string(H) + "x" + std::to_string(W));
    }
    const std::size_t B = samples.size(), in_frame = (C + S) * plane, out_frame = C * plane;
    std::vector<T> in(B * kInputFrames * in_frame), tg(B * kOutputFrames * out_frame);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = *samples[b];
        if (s.channels != C || s.height != H || s.width != W) throw DimensionError("samples in a batch differ in shape");
        for (std::size_t f = 0; f < kInputFrames; ++f) {
            T* dst = in.data() + (b * kInputFrames + f) * in_frame;
            const std::uint8_t* src = s.input.data() + f * out_frame;
            for (std::size_t i = 0; i < out_frame; ++i) dst[i] = normalize<T>(src[i], normalize_values);
            for (std::size_t i = 0; i < S * plane; ++i) dst[out_frame + i] = normalize<T>(statics->values[i], normalize_values);
        }
        T* dst = tg.data() + b * kOutputFrames * out_frame;
        for (std::size_t i = 0; i < s.target.size(); ++i) dst[i] = normalize<T>(s.target[i], normalize_values);
    }
    return {Tensor<T>({B, kInputFrames, C + S, H, W}, std::move(in)), Tensor<T>({B, kOutputFrames, C, H, W}, std::move(tg))};
}

// Movie file: "T4CM", u32 version, u32 F, H, W, C, then F*H*W*C bytes; integers little-endian.
inline constexpr char kMovieMagic[4] = {'T', '4', 'C', 'M'};
inline constexpr std::uint32_t kMovieVersion = 1;
inline constexpr std::size_t kMovieHeaderBytes = 4 + 5 * 4;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("error reading '" + path + "'");
    return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("error writing '" + path + "'");
}

}  // namespace detail

inline std::string encode_movie(const TrafficMovie& m) {
    m.validate();
    auto narrow = [](std::size_t v, const char* what) {
        if (v > 0xFFFFFFFFu) throw ContractError(std::string("movie ") + what + " does not fit in 32 bits");
        return static_cast<std::uint32_t>(v);
    };
    std::string out(kMovieMagic, 4);
    detail::put_u32(out, kMovieVersion);
    detail::put_u32(out, narrow(m.frames, "frames"));
    detail::put_u32(out, narrow(m.height, "height"));
    detail::put_u32(out, narrow(m.width, "width"));
    detail::put_u32(out, narrow(m.channels, "channels"));
    out.append(reinterpret_cast<const char*>(m.values.data()), m.values.size());
    return out;
}

inline TrafficMovie decode_movie(const std::string& bytes, const std::string& source = "movie") {
    auto fail = [&](std::size_t offset, const std::string& what) {
        throw FormatError(source + ": " + what + " at byte offset " + std::to_string(offset));
    };
    if (bytes.size() < kMovieHeaderBytes) {
        fail(bytes.size(), "truncated header: expected " + std::to_string(kMovieHeaderBytes) + " bytes, got " +
                               std::to_string(bytes.size()));
    }
    if (bytes.compare(0, 4, kMovieMagic, 4) != 0) fail(0, "bad magic (expected \"T4CM\")");
    const std::uint32_t version = detail::get_u32(bytes, 4);
    if (version != kMovieVersion) fail(4, "unsupported version " + std::to_string(version));
    TrafficMovie m;
    m.frames = detail::get_u32(bytes, 8);
    m.height = detail::get_u32(bytes, 12);
    m.width = detail::get_u32(bytes, 16);
    m.channels = detail::get_u32(bytes, 20);
    if (m.height == 0 || m.width == 0 || m.channels == 0) fail(12, "zero height, width or channel count");
    const std::size_t expected = kMovieHeaderBytes + m.frames * m.frame_size();
    if (bytes.size() < expected) {
        fail(bytes.size(), "truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                               std::to_string(bytes.size()));
    }
    if (bytes.size() > expected) {
        fail(expected, "trailing data: expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
    }
    m.values.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + kMovieHeaderBytes,
                    reinterpret_cast<const std::uint8_t*>(bytes.data()) + expected);
    return m;
}

inline void write_movie(const std::string& path, const TrafficMovie& m) { detail::write_file(path, encode_movie(m)); }

inline TrafficMovie read_movie(const std::string& path) { return decode_movie(detail::read_file(path), path); }

}  // namespace swin3d
