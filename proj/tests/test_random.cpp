#include "horn/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace horn;

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswerZero) {
    const auto out = Philox4x32::block({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerAllOnes) {
    const auto out = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out, (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
    const auto out = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out, (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(PathStream, ReproducibleAndIndependentOfOrder) {
    PathStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    std::vector<double> va, vb;
    for (int i = 0; i < 100; ++i) va.push_back(a.normal());
    // Interleave draws from other streams: b must not be affected.
    for (int i = 0; i < 100; ++i) {
        (void)c.normal();
        vb.push_back(b.normal());
    }
    EXPECT_EQ(va, vb);
    PathStream e(42, 7);
    EXPECT_NE(e.normal(), d.normal());
}

TEST(PathStream, UniformsInOpenUnitInterval) {
    PathStream s(1, 0);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GT(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / n, 0.5, 5 * std::sqrt(1.0 / 12.0 / n));
}

TEST(PathStream, NormalMoments) {
    PathStream s(99, 3);
    const int n = 400000;
    double m1 = 0, m2 = 0, m4 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = s.normal();
        m1 += z;
        m2 += z * z;
        m4 += z * z * z * z;
    }
    m1 /= n;
    m2 /= n;
    m4 /= n;
    EXPECT_NEAR(m1, 0.0, 5 / std::sqrt(n));
    EXPECT_NEAR(m2, 1.0, 5 * std::sqrt(2.0 / n));
    EXPECT_NEAR(m4, 3.0, 5 * std::sqrt(96.0 / n));
}

TEST(PathStream, BlockCounterAdvancesOncePerNormalPair) {
    PathStream s(5, 5);
    (void)s.normal();
    (void)s.normal();
    EXPECT_EQ(s.blocks_used(), 1u);
    (void)s.normal();
    EXPECT_EQ(s.blocks_used(), 2u);
}

TEST(PathStream, FirstBlockIsPhiloxOfPathCounter) {
    const std::uint64_t seed = 0x0123456789abcdefULL, path = 0xfedcba9876543210ULL;
    PathStream s(seed, path);
    const auto w = s.next_block();
    const auto expect = Philox4x32::block({0u, 0u, 0x76543210u, 0xfedcba98u}, {0x89abcdefu, 0x01234567u});
    EXPECT_EQ(w, expect);
}
