#include <gtest/gtest.h>

#include <cstring>
#include <map>
#include <set>

#include "oracles.hpp"
#include "swin3d/windowing.hpp"
#include "test_util.hpp"

using namespace swin3d;
using swin3d::testing::random_tensor;

namespace {

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(WindowPartition, RowMajorEnumeration) {
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = double(i);  // value = h*4 + w
    Tensor<double> x({1, 4, 4, 1}, v);
    auto w = window_partition(x, {1, 2, 2});
    ASSERT_EQ(w.shape(), (Shape{4, 4, 1}));
    EXPECT_EQ(std::vector<double>(w.values().begin(), w.values().begin() + 4), (std::vector<double>{0, 1, 4, 5}));
    EXPECT_EQ(std::vector<double>(w.values().begin() + 4, w.values().begin() + 8), (std::vector<double>{2, 3, 6, 7}));
}

TEST(WindowPartition, FullExtentIsOneWindow) {
    auto x = random_tensor<double>({2, 4, 6, 3}, 1);
    auto w = window_partition(x, {2, 4, 6});
    EXPECT_EQ(w.shape(), (Shape{1, 48, 3}));
    EXPECT_EQ(w.values(), x.values());
    EXPECT_TRUE(bitwise_equal(window_reverse(w, x.shape(), {2, 4, 6}), x));
}

TEST(WindowPartition, ReverseRoundTripIsBitwise) {
    auto x = random_tensor<double>({2, 8, 8, 3}, 2);
    EXPECT_TRUE(bitwise_equal(window_reverse(window_partition(x, {1, 4, 4}), x.shape(), {1, 4, 4}), x));
    auto xb = random_tensor<double>({2, 4, 6, 8, 5}, 3);
    EXPECT_TRUE(bitwise_equal(window_reverse(window_partition(xb, {2, 3, 4}), xb.shape(), {2, 3, 4}), xb));
}

TEST(WindowPartition, RejectsNonDivisibleExtents) {
    auto x = random_tensor<double>({1, 6, 8, 2}, 4);
    EXPECT_THROW(window_partition(x, {1, 4, 4}), PartitionError);
    auto w = window_partition(random_tensor<double>({1, 8, 8, 2}, 5), {1, 4, 4});
    EXPECT_THROW(window_reverse(w, Shape{1, 8, 4, 2}, {1, 4, 4}), PartitionError);
}

TEST(WindowPartition, GradientIsScatter) {
    auto x = random_tensor<double>({1, 2, 4, 4, 2}, 6);
    x.set_requires_grad(true);
    auto r = random_tensor<double>({4, 8, 2}, 7);
    backward(sum(mul(window_partition(x, {2, 2, 2}), r)));
    auto expected = window_reverse(r, x.shape(), {2, 2, 2});
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), expected.values());
}

TEST(CyclicShift, ShiftThenUnshiftIsBitwise) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto x = random_tensor<double>({1, 3, 8, 8, 4}, seed);
        auto y = roll(roll(x, {0, 1, -2, 3, 0}), {0, -1, 2, -3, 0});
        EXPECT_TRUE(bitwise_equal(x, y));
    }
}

TEST(WindowSpec, ValidatesShiftBelowWindow) {
    EXPECT_THROW((WindowSpec{{1, 8, 8}, {0, 8, 2}}.validate()), ConfigError);
    EXPECT_THROW((WindowSpec{{0, 8, 8}, {0, 0, 0}}.validate()), ConfigError);
    EXPECT_NO_THROW((WindowSpec{{1, 8, 8}, {0, 2, 2}}.validate()));
}

TEST(WindowSpec, ClampsShortAxesAndDropsTheirShift) {
    auto eff = effective_window(WindowSpec{{1, 8, 8}, {0, 2, 2}}, {12, 4, 16});
    EXPECT_EQ(eff.window, (Extent3{1, 4, 8}));
    EXPECT_EQ(eff.shift, (Extent3{0, 0, 2}));
    // an axis equal to the window keeps its shift
    eff = effective_window(WindowSpec{{1, 8, 8}, {0, 2, 2}}, {1, 8, 8});
    EXPECT_EQ(eff.shift, (Extent3{0, 2, 2}));
}

TEST(RelativePositionIndex, TableSizes) {
    auto small = relative_position_index({1, 2, 2});
    EXPECT_EQ(small.rows, 9u);
    EXPECT_EQ(small.index.size(), 16u);
    auto full = relative_position_index({1, 8, 8});
    EXPECT_EQ(full.rows, 225u);
    EXPECT_EQ(full.tokens, 64u);
    EXPECT_EQ(full.index.size(), 64u * 64u);
}

TEST(RelativePositionIndex, DependsOnlyOnDisplacement) {
    for (Extent3 w : {Extent3{1, 2, 2}, Extent3{2, 3, 4}, Extent3{1, 8, 8}, Extent3{3, 1, 2}}) {
        auto rel = relative_position_index(w);
        std::map<std::array<long, 3>, std::size_t> row_of;
        std::set<std::size_t> rows;
        auto coord = [&](std::size_t i) {
            return std::array<long, 3>{long(i / (w[1] * w[2])), long((i / w[2]) % w[1]), long(i % w[2])};
        };
        for (std::size_t i = 0; i < rel.tokens; ++i)
            for (std::size_t j = 0; j < rel.tokens; ++j) {
                auto a = coord(i), b = coord(j);
                std::array<long, 3> d{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
                const std::size_t r = rel.index[i * rel.tokens + j];
                ASSERT_LT(r, rel.rows);
                auto [it, fresh] = row_of.emplace(d, r);
                ASSERT_EQ(it->second, r) << "displacement maps to two rows";
                rows.insert(r);
            }
        // one row per displacement and every row used
        EXPECT_EQ(rows.size(), row_of.size());
        EXPECT_EQ(rows.size(), rel.rows);
        for (std::size_t i = 0; i < rel.tokens; ++i) EXPECT_EQ(rel.index[i * rel.tokens + i], rel.index[0]);
    }
}

TEST(RelativePositionIndex, ClampedWindowIndexesLargerTable) {
    auto rel = relative_position_index({1, 4, 4}, Extent3{1, 8, 8});
    EXPECT_EQ(rel.rows, 225u);
    auto full = relative_position_index({1, 8, 8});
    // zero displacement lands on the same row as in the full window
    EXPECT_EQ(rel.index[0], full.index[0]);
    EXPECT_THROW(relative_position_index({1, 9, 8}, Extent3{1, 8, 8}), ConfigError);
}

TEST(ShiftMask, AllowedPairCountAtDefaultWindow) {
    std::size_t allowed = 0;
    EXPECT_EQ(oracle::mask_mismatches({1, 8, 8}, WindowSpec{{1, 8, 8}, {0, 2, 2}}, &allowed), 0u);
    EXPECT_EQ(allowed, 1600u);  // 36^2 + 12^2 + 12^2 + 4^2
    auto mask = compute_shift_mask<double>({1, 8, 8}, WindowSpec{{1, 8, 8}, {0, 2, 2}});
    ASSERT_EQ(mask.shape(), (Shape{1, 64, 64}));
    std::size_t zeros = 0;
    for (double v : mask.values()) zeros += v == 0.0;
    EXPECT_EQ(zeros, 1600u);
}

TEST(ShiftMask, ZeroShiftWithoutPaddingIsAllZeros) {
    auto mask = compute_shift_mask<double>({2, 8, 8}, WindowSpec{{1, 4, 4}, {0, 0, 0}});
    for (double v : mask.values()) ASSERT_EQ(v, 0.0);
    EXPECT_FALSE(attention_mask<double>({2, 8, 8}, WindowSpec{{1, 4, 4}, {0, 0, 0}}).has_value());
    EXPECT_TRUE(attention_mask<double>({2, 6, 8}, WindowSpec{{1, 4, 4}, {0, 0, 0}}).has_value());
}

TEST(ShiftMask, MatchesBruteForceForAllSmallExtents) {
    std::size_t configs = 0;
    for (std::size_t T = 1; T <= 8; ++T)
        for (std::size_t H = 1; H <= 8; ++H)
            for (std::size_t W = 1; W <= 8; ++W)
                for (std::size_t wt = 1; wt <= 2; ++wt)
                    for (std::size_t wh = 1; wh <= 4; ++wh)
                        for (std::size_t ww = 1; ww <= 4; ++ww)
                            for (std::size_t st = 0; st < wt; ++st)
                                for (std::size_t sh = 0; sh < wh; sh += 1 + (wh > 2))
                                    for (std::size_t sw = 0; sw < ww; sw += 1 + (ww > 2)) {
                                        const WindowSpec spec{{wt, wh, ww}, {st, sh, sw}};
                                        ASSERT_EQ(oracle::mask_mismatches({T, H, W}, spec), 0u)
                                            << "dims " << T << "x" << H << "x" << W << " window "
                                            << to_string(spec.window) << " shift " << to_string(spec.shift);
                                        ++configs;
                                    }
    EXPECT_GT(configs, 10000u);
}
