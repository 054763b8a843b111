#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "swin3d/data.hpp"

using namespace swin3d;

namespace {

/// Movie whose every value encodes its frame index, for slicing checks.
TrafficMovie frame_indexed_movie(std::size_t frames, std::size_t h = 2, std::size_t w = 3) {
    TrafficMovie m{frames, h, w, kMovieChannels, {}};
    m.values.resize(frames * m.frame_size());
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t i = 0; i < m.frame_size(); ++i) m.values[f * m.frame_size() + i] = std::uint8_t(f);
    return m;
}

TrafficMovie random_movie(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TrafficMovie m{1 + rng() % 30, 1 + rng() % 9, 1 + rng() % 9, 1 + rng() % 10, {}};
    m.values.resize(m.frames * m.frame_size());
    for (auto& v : m.values) v = std::uint8_t(rng());
    return m;
}

TrafficSample random_sample(std::uint64_t seed, std::size_t H = 5, std::size_t W = 7) {
    std::mt19937_64 rng(seed);
    TrafficSample s;
    s.height = H;
    s.width = W;
    s.input.resize(kInputFrames * s.frame_size());
    s.target.resize(kOutputFrames * s.frame_size());
    for (auto& v : s.input) v = std::uint8_t(rng());
    for (auto& v : s.target) v = std::uint8_t(rng());
    return s;
}

std::uint8_t sample_at(const std::vector<std::uint8_t>& v, const TrafficSample& s, std::size_t f, std::size_t c,
                       std::size_t h, std::size_t w) {
    return v[((f * s.channels + c) * s.height + h) * s.width + w];
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("swin3d_test_" + name)).string();
}

/// Heading names as compass letter pairs; a mirror flips one letter.
const char* kHeadingNames[kHeadings] = {"NE", "SE", "SW", "NW"};

std::size_t heading_index(const std::string& name) {
    for (std::size_t k = 0; k < kHeadings; ++k)
        if (name == kHeadingNames[k]) return k;
    return kHeadings;
}

}  // namespace

TEST(Generator, SameSeedIsBitwiseIdentical) {
    EXPECT_EQ(generate_synthetic(24, 20, 30, 7), generate_synthetic(24, 20, 30, 7));
    EXPECT_NE(generate_synthetic(24, 20, 30, 7).values, generate_synthetic(24, 20, 30, 8).values);
}

TEST(Generator, RejectsTinyMovies) {
    EXPECT_THROW(generate_synthetic(15, 32, 30, 0), ConfigError);
    EXPECT_THROW(generate_synthetic(32, 32, 0, 0), ConfigError);
    // too short to slice, but still a valid movie
    EXPECT_EQ(slice_samples(generate_synthetic(16, 16, 23, 0)).size(), 0u);
}

TEST(Generator, OffRoadCellsAreZeroInEveryFrame) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto m = generate_synthetic(32, 32, 40, seed);
        auto on = occupancy(m);
        const auto roads = std::count(on.begin(), on.end(), true);
        EXPECT_GT(roads, 0);
        EXPECT_LT(roads, long(on.size() / 2)) << "road mask should be sparse";
        // a road cell is on in every frame for at least one channel; off cells never are
        for (std::size_t f = 0; f < m.frames; ++f)
            for (std::size_t p = 0; p < on.size(); ++p) {
                bool any = false;
                for (std::size_t c = 0; c < m.channels; ++c) any = any || m.values[(f * on.size() + p) * m.channels + c];
                ASSERT_EQ(any, bool(on[p])) << "frame " << f << " cell " << p;
            }
    }
}

TEST(Generator, TemporallyCoherentAgainstShuffledControl) {
    auto mad = [](const TrafficMovie& m, const std::vector<std::size_t>& order) {
        double total = 0.0;
        for (std::size_t i = 1; i < order.size(); ++i)
            for (std::size_t j = 0; j < m.frame_size(); ++j)
                total += std::abs(double(m.values[order[i] * m.frame_size() + j]) - m.values[order[i - 1] * m.frame_size() + j]);
        return total / double((order.size() - 1) * m.frame_size());
    };
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = generate_synthetic(32, 32, 48, seed);
        std::vector<std::size_t> order(m.frames);
        std::iota(order.begin(), order.end(), 0);
        const double coherent = mad(m, order);
        std::shuffle(order.begin(), order.end(), std::mt19937_64(seed + 100));
        EXPECT_LT(coherent, mad(m, order)) << "seed " << seed;
    }
}

TEST(SliceSamples, CountIsFramesMinus23) {
    for (std::size_t F = 0; F <= 60; ++F) {
        EXPECT_EQ(sample_count(F), F >= 23 ? F - 23 : 0) << F;
        EXPECT_EQ(slice_samples(frame_indexed_movie(F, 1, 1)).size(), std::max<long>(0, long(F) - 23)) << F;
    }
    EXPECT_EQ(sample_count(288), 265u);
}

TEST(SliceSamples, BoundaryMovieOfTwentyFourFrames) {
    auto samples = slice_samples(frame_indexed_movie(24));
    ASSERT_EQ(samples.size(), 1u);
    const auto& s = samples[0];
    const std::size_t fs = s.frame_size();
    for (std::size_t i = 0; i < kInputFrames; ++i) EXPECT_EQ(s.input[i * fs], i);
    const std::vector<std::size_t> targets{12, 13, 14, 17, 20, 23};
    for (std::size_t i = 0; i < kOutputFrames; ++i) EXPECT_EQ(s.target[i * fs + fs - 1], targets[i]);
}

TEST(SliceSamples, TargetsAreAtHorizonOffsetsFromLastInput) {
    auto m = frame_indexed_movie(40);
    for (std::size_t t0 : {0u, 5u, 16u}) {
        auto s = slice_sample(m, t0, 3);
        EXPECT_EQ(s.origin, (SampleOrigin{3, t0}));
        const std::size_t last = t0 + 11;
        for (std::size_t i = 0; i < kOutputFrames; ++i) EXPECT_EQ(s.target[i * s.frame_size()], last + kHorizonOffsets[i]);
    }
    EXPECT_THROW(slice_sample(m, 17), ContractError);
}

TEST(SliceSamples, TransposesToChannelMajor) {
    auto m = generate_synthetic(16, 20, 24, 4);
    auto s = slice_sample(m, 0);
    for (std::size_t f : {0u, 11u})
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t h = 0; h < 16; h += 5)
                for (std::size_t w = 0; w < 20; w += 3) ASSERT_EQ(sample_at(s.input, s, f, c, h, w), m.at(f, h, w, c));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(sample_at(s.target, s, 5, c, 7, 9), m.at(23, 7, 9, c));
}

TEST(FlipAugment, EachFlipIsAnInvolution) {
    auto s = random_sample(1);
    for (bool permute : {false, true}) {
        EXPECT_EQ(flip_augment(flip_augment(s, true, false, permute), true, false, permute), s);
        EXPECT_EQ(flip_augment(flip_augment(s, false, true, permute), false, true, permute), s);
        EXPECT_EQ(flip_augment(flip_augment(s, true, true, permute), true, true, permute), s);
        EXPECT_NE(flip_augment(s, true, false, permute), s);
    }
}

TEST(FlipAugment, PlainModeMirrorsWithoutTouchingChannels) {
    auto s = random_sample(2);
    auto h = flip_augment(s, true, false, false);
    auto v = flip_augment(s, false, true, false);
    for (std::size_t f = 0; f < kInputFrames; ++f)
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t y = 0; y < s.height; ++y)
                for (std::size_t x = 0; x < s.width; ++x) {
                    ASSERT_EQ(sample_at(h.input, h, f, c, y, x), sample_at(s.input, s, f, c, y, s.width - 1 - x));
                    ASSERT_EQ(sample_at(v.input, v, f, c, y, x), sample_at(s.input, s, f, c, s.height - 1 - y, x));
                }
    EXPECT_TRUE(h.flipped_horizontal);
    EXPECT_FALSE(h.flipped_vertical);
}

TEST(FlipAugment, InputAndTargetFlipTogether) {
    auto s = random_sample(3);
    auto h = flip_augment(s, true, true, true);
    // swapping the roles of input and target must swap the outputs
    TrafficSample only_target = s;
    only_target.input = s.target;
    only_target.target = s.input;
    auto swapped = flip_augment(only_target, true, true, true);
    EXPECT_EQ(swapped.input, h.target);
    EXPECT_EQ(swapped.target, h.input);
}

TEST(FlipAugment, PhysicalModeSwapsHeadingsLikeCompass) {
    auto s = random_sample(4);
    for (int mode = 0; mode < 3; ++mode) {
        const bool hz = mode != 1, vt = mode != 0;
        auto out = flip_augment(s, hz, vt, true);
        for (std::size_t k = 0; k < kHeadings; ++k) {
            std::string name = kHeadingNames[k];
            if (hz) name[1] = name[1] == 'E' ? 'W' : 'E';
            if (vt) name[0] = name[0] == 'N' ? 'S' : 'N';
            const std::size_t dest = heading_index(name);
            ASSERT_LT(dest, kHeadings);
            for (std::size_t part = 0; part < 2; ++part)  // volume and speed move together
                for (std::size_t y = 0; y < s.height; ++y)
                    for (std::size_t x = 0; x < s.width; ++x) {
                        const std::size_t sy = vt ? s.height - 1 - y : y, sx = hz ? s.width - 1 - x : x;
                        ASSERT_EQ(sample_at(out.input, out, 4, 2 * dest + part, y, x),
                                  sample_at(s.input, s, 4, 2 * k + part, sy, sx));
                        ASSERT_EQ(sample_at(out.target, out, 2, 2 * dest + part, y, x),
                                  sample_at(s.target, s, 2, 2 * k + part, sy, sx));
                    }
        }
    }
}

TEST(FlipAugment, ChannelMapExamples) {
    const auto h = flip_channel_map(true, false);
    EXPECT_EQ(h[volume_channel(Heading::NE)], volume_channel(Heading::NW));
    EXPECT_EQ(h[speed_channel(Heading::SE)], speed_channel(Heading::SW));
    const auto v = flip_channel_map(false, true);
    EXPECT_EQ(v[volume_channel(Heading::NE)], volume_channel(Heading::SE));
    EXPECT_EQ(v[speed_channel(Heading::NW)], speed_channel(Heading::SW));
    const auto none = flip_channel_map(false, false);
    for (std::size_t c = 0; c < kMovieChannels; ++c) EXPECT_EQ(none[c], c);
}

TEST(FlipAugment, ExtraStaticChannelsOnlyMirror) {
    auto s = random_sample(5);
    s.channels = 10;
    s.input.resize(kInputFrames * s.frame_size(), 9);
    s.target.resize(kOutputFrames * s.frame_size(), 9);
    s.input[(8 * s.height + 0) * s.width + 0] = 200;
    auto out = flip_augment(s, true, false, true);
    EXPECT_EQ(sample_at(out.input, out, 0, 8, 0, s.width - 1), 200);
    EXPECT_EQ(flip_augment(out, true, false, true), s);
}

TEST(Normalize, RoundTripsAndDisabledMode) {
    EXPECT_EQ(normalize<float>(255, true), 1.0f);
    EXPECT_EQ(denormalize(1.0f, true), 255);
    EXPECT_EQ(normalize<double>(0, true), 0.0);
    EXPECT_EQ(denormalize(0.0, true), 0);
    for (int v = 0; v < 256; ++v) {
        EXPECT_EQ(denormalize(normalize<float>(std::uint8_t(v), true), true), v);
        EXPECT_EQ(normalize<float>(std::uint8_t(v), false), float(v));
        EXPECT_EQ(denormalize(normalize<double>(std::uint8_t(v), false), false), v);
    }
}

TEST(Normalize, DenormalizeClampsAndRoundsHalfToEven) {
    EXPECT_EQ(denormalize(-4.0, false), 0);
    EXPECT_EQ(denormalize(300.0, false), 255);
    EXPECT_EQ(denormalize(2.0, true), 255);
    EXPECT_EQ(denormalize(2.5, false), 2);
    EXPECT_EQ(denormalize(3.5, false), 4);
    EXPECT_EQ(denormalize(254.5, false), 254);
    EXPECT_EQ(denormalize(0.4999, false), 0);
    EXPECT_EQ(denormalize(std::nan(""), false), 0);
}

TEST(MovieFile, RoundTripAcrossTwentySeeds) {
    const auto path = temp_path("roundtrip.t4c");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = random_movie(seed);
        write_movie(path, m);
        EXPECT_EQ(std::filesystem::file_size(path), kMovieHeaderBytes + m.values.size());
        EXPECT_EQ(read_movie(path), m) << "seed " << seed;
    }
    std::filesystem::remove(path);
}

TEST(MovieFile, HeaderIsLittleEndian) {
    TrafficMovie m{24, 16, 32, 8, std::vector<std::uint8_t>(24 * 16 * 32 * 8, 3)};
    const auto bytes = encode_movie(m);
    ASSERT_EQ(bytes.size(), 24u + 24u * 16 * 32 * 8);
    EXPECT_EQ(bytes.substr(0, 4), "T4CM");
    const unsigned char expected[20] = {1, 0, 0, 0, 24, 0, 0, 0, 16, 0, 0, 0, 32, 0, 0, 0, 8, 0, 0, 0};
    for (int i = 0; i < 20; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[4 + i]), expected[i]) << i;
}

TEST(MovieFile, TruncationNamesExpectedAndActualBytes) {
    auto bytes = encode_movie(random_movie(3));
    const std::size_t full = bytes.size();
    bytes.resize(full - 5);
    try {
        decode_movie(bytes);
        FAIL() << "truncated movie decoded";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("expected " + std::to_string(full)), std::string::npos) << msg;
        EXPECT_NE(msg.find("got " + std::to_string(full - 5)), std::string::npos) << msg;
        EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
    }
    EXPECT_THROW(decode_movie(bytes.substr(0, 10)), FormatError);
    EXPECT_THROW(decode_movie(encode_movie(random_movie(3)) + "x"), FormatError);
}

TEST(MovieFile, BadMagicAndVersionAreFormatErrors) {
    auto bytes = encode_movie(random_movie(4));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_movie(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    try {
        decode_movie(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("offset 4"), std::string::npos);
    }
}

TEST(MovieFile, UnreadableAndUnwritablePathsAreIoErrors) {
    EXPECT_THROW(read_movie("/nonexistent/dir/movie.t4c"), IoError);
    EXPECT_THROW(write_movie("/nonexistent/dir/movie.t4c", random_movie(0)), IoError);
}

TEST(MakeBatch, StacksSamplesAndAppendsStaticMaps) {
    auto a = random_sample(6, 4, 4), b = random_sample(7, 4, 4);
    StaticMaps statics{1, 4, 4, std::vector<std::uint8_t>(16)};
    for (std::size_t i = 0; i < 16; ++i) statics.values[i] = std::uint8_t(i * 10);
    auto batch = make_batch<double>({&a, &b}, false, &statics);
    EXPECT_EQ(batch.input.shape(), (Shape{2, 12, 9, 4, 4}));
    EXPECT_EQ(batch.target.shape(), (Shape{2, 6, 8, 4, 4}));
    EXPECT_EQ(batch.input.at({1, 3, 2, 1, 3}), sample_at(b.input, b, 3, 2, 1, 3));
    EXPECT_EQ(batch.input.at({0, 11, 8, 2, 1}), 90.0);
    EXPECT_EQ(batch.target.at({1, 5, 7, 3, 0}), sample_at(b.target, b, 5, 7, 3, 0));
    auto norm = make_batch<float>({&a}, true);
    EXPECT_FLOAT_EQ(norm.input.at({0, 0, 0, 0, 0}), a.input[0] / 255.0f);
    StaticMaps wrong{1, 3, 4, std::vector<std::uint8_t>(12)};
    EXPECT_THROW(make_batch<double>({&a}, false, &wrong), DimensionError);
}
