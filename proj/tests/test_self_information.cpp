#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "infodrop/self_information.hpp"
#include "oracles.hpp"

using namespace infodrop;

namespace {

Tensor random_image(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(0.0, 1.0);
    return t;
}

InfoDropParams params_kR(std::size_t k, std::size_t R, std::size_t pad = 0) {
    InfoDropParams p;
    p.patch_k = k;
    p.radius_R = R;
    p.stride = 1;
    p.padding = pad;
    p.bandwidth_h = 1.0;
    return p;
}

}  // namespace

TEST(ExtractPatch, WholeImageAndSinglePixel) {
    Tensor in({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto p = extract_patch(in, 0, 3, 1, 0);
    EXPECT_EQ(p, (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));

    Tensor rgb({3, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    auto px = extract_patch(rgb, 3, 1, 1, 0);  // position (1,1)
    EXPECT_EQ(px, (std::vector<double>{4, 8, 12}));
}

TEST(ExtractPatch, PaddedCornerMatchesIndexOracle) {
    Rng rng(21);
    Tensor in = random_image({2, 5, 5}, rng);
    const std::size_t k = 3, pad = 1;
    const std::size_t wo = 5;  // (5 + 2 - 3) + 1
    for (std::size_t j : {std::size_t(0), std::size_t(4), std::size_t(20), std::size_t(24)}) {
        auto got = extract_patch(in, j, k, 1, pad);
        auto want = oracles::patch_oracle(in, j / wo, j % wo, k, 1, pad);
        EXPECT_EQ(got, want) << "corner j=" << j;
    }
    EXPECT_THROW(extract_patch(in, 25, k, 1, pad), std::out_of_range);
}

TEST(Neighborhood, RadiusZeroIsSelf) {
    auto n = neighborhood(7, 0, 4, 4);
    EXPECT_EQ(n, (std::vector<std::size_t>{7}));
}

TEST(Neighborhood, InteriorCountIsSquare) {
    // the paper counts (2R+1)^2 patches, i.e. a square window
    for (std::size_t R : {std::size_t(1), std::size_t(2), std::size_t(3)}) {
        std::size_t side = 2 * R + 1;
        auto n = neighborhood(R * 10 + R, R, 10, 10);  // j at (R,R) on a 10x10 grid
        EXPECT_EQ(n.size(), side * side);
    }
}

TEST(Neighborhood, CornerClipped) {
    auto n = neighborhood(0, 3, 10, 10);
    EXPECT_EQ(n.size(), 16u);  // 4x4 clipped square
    EXPECT_TRUE(std::find(n.begin(), n.end(), std::size_t(0)) != n.end());
}

TEST(EstimateInfo, ConstantInputIsZeroEverywhere) {
    Tensor in = Tensor::full({2, 10, 10}, 0.7);
    InfoMap m = estimate_info(in, params_kR(3, 3), 1);
    for (double v : m.values.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EstimateInfo, CenterSpikeMatchesClosedForm) {
    Tensor in = Tensor::zeros({1, 9, 9});
    in.at(0, 4, 4) = 10.0;
    InfoMap m = estimate_info(in, params_kR(1, 1), 1);
    // center: 8 neighbors at distance^2 = 100 plus the self term
    double expected = -std::log((1.0 + 8.0 * std::exp(-50.0)) / 9.0);
    EXPECT_NEAR(m.values.at(4, 4), expected, 1e-12);
    EXPECT_NEAR(m.values.at(4, 4), std::log(9.0), 1e-12);
    Tensor oracle = oracles::kde_info_oracle(in, 1, 1, 0, 1, 1.0);
    EXPECT_NEAR(m.values.at(4, 4), oracle.at(4, 4), 1e-12);
}

TEST(EstimateInfo, MatchesBruteForceOracle) {
    Rng rng(22);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor in = random_image({3, 16, 16}, rng);
        std::size_t pad = trial % 2;
        InfoMap m = estimate_info(in, params_kR(3, 3, pad), 1);
        Tensor want = oracles::kde_info_oracle(in, 3, 1, pad, 3, 1.0);
        ASSERT_EQ(m.values.shape, want.shape);
        for (std::size_t i = 0; i < want.numel(); ++i)
            EXPECT_NEAR(m.values[i], want[i], 1e-10);
    }
}

TEST(EstimateInfo, NonNegativeAndZeroOnlyOnConstantNeighborhoods) {
    Rng rng(23);
    // flat left half, random right half
    Tensor in = Tensor::full({1, 12, 12}, 0.5);
    for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 6; x < 12; ++x) in.at(0, y, x) = rng.uniform(0.0, 1.0);

    InfoDropParams p = params_kR(3, 2);
    InfoMap m = estimate_info(in, p, 1);
    const std::size_t wo = m.w();
    for (std::size_t j = 0; j < m.values.numel(); ++j) {
        EXPECT_GE(m.values[j], 0.0);
        std::size_t x = j % wo;
        // patch spans [x, x+2]; neighbor patches reach 2 positions further
        if (x + 2 + 2 < 6) EXPECT_DOUBLE_EQ(m.values[j], 0.0) << "flat interior " << j;
        if (x < 6 && x + 2 >= 6) EXPECT_GT(m.values[j], 0.0) << "straddling " << j;
    }
}

TEST(EstimateInfo, ShiftInvariance) {
    Rng rng(24);
    Tensor in = random_image({2, 10, 10}, rng);
    Tensor shifted = in;
    for (double& v : shifted.data) v += 0.5;
    InfoMap a = estimate_info(in, params_kR(3, 3), 1);
    InfoMap b = estimate_info(shifted, params_kR(3, 3), 1);
    for (std::size_t i = 0; i < a.values.numel(); ++i)
        EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(EstimateInfo, MonotoneContrast) {
    Rng rng(25);
    Tensor in = random_image({1, 10, 10}, rng);
    Tensor scaled = in;
    for (double& v : scaled.data) v *= 2.0;
    InfoMap a = estimate_info(in, params_kR(3, 2), 1);
    InfoMap b = estimate_info(scaled, params_kR(3, 2), 1);
    for (std::size_t i = 0; i < a.values.numel(); ++i)
        EXPECT_GE(b.values[i], a.values[i] - 1e-12);
}

// The Fig. 1(c)-style ordering: a step edge carries more self-information
// than both a flat field and a fine checkerboard.
TEST(EstimateInfo, EdgeBeatsFlatAndTexture) {
    const std::size_t side = 24;
    Tensor in({1, side, side});
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            if (x < side / 2)
                in.at(0, y, x) = 0.0;  // flat
            else
                in.at(0, y, x) = ((y + x) % 2) ? 1.0 : 0.0;  // 2px-period checker
        }

    InfoDropParams p = params_kR(3, 3);
    InfoMap m = estimate_info(in, p, 1);
    const std::size_t wo = m.w();

    double edge_sum = 0, flat_sum = 0, tex_sum = 0;
    std::size_t edge_n = 0, flat_n = 0, tex_n = 0;
    for (std::size_t j = 0; j < m.values.numel(); ++j) {
        std::size_t x = j % wo;
        std::size_t x_end = x + p.patch_k - 1;  // patch column span
        if (x < side / 2 && x_end >= side / 2) {
            edge_sum += m.values[j];
            ++edge_n;
        } else if (x_end + p.radius_R + p.patch_k - 1 < side / 2) {
            flat_sum += m.values[j];
            ++flat_n;
        } else if (x >= side / 2 + p.radius_R + p.patch_k) {
            tex_sum += m.values[j];
            ++tex_n;
        }
    }
    ASSERT_GT(edge_n, 0u);
    ASSERT_GT(flat_n, 0u);
    ASSERT_GT(tex_n, 0u);
    double edge = edge_sum / edge_n, flat = flat_sum / flat_n, tex = tex_sum / tex_n;
    EXPECT_GT(edge, flat);
    EXPECT_GT(edge, tex);
}

TEST(EstimateInfo, SubsampledKernelMeanIsUnbiased) {
    Rng rng(26);
    Tensor in = random_image({1, 8, 8}, rng);
    InfoDropParams full = params_kR(3, 2);
    InfoMap exact = estimate_info(in, full, 0);

    InfoDropParams sub = full;
    sub.subsample_n = 6;

    // interior position with the full 5x5 neighborhood
    const std::size_t wo = exact.w();
    const std::size_t j = 3 * wo + 3;
    const double target = std::exp(-exact.values[j]);

    const int n_seeds = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
        InfoMap m = estimate_info(in, sub, std::uint64_t(s));
        double v = std::exp(-m.values[j]);
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / n_seeds;
    double var = (sum2 - sum * sum / n_seeds) / (n_seeds - 1);
    double se = std::sqrt(var / n_seeds);
    EXPECT_NEAR(mean, target, 3.0 * se + 1e-12);
}

TEST(EstimateInfo, SubsampleStaysZeroOnConstantRegions) {
    Tensor in = Tensor::full({1, 10, 10}, 0.3);
    InfoDropParams p = params_kR(3, 3);
    p.subsample_n = 4;
    InfoMap m = estimate_info(in, p, 77);
    for (double v : m.values.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EstimateInfo, DeterministicPerSeed) {
    Rng rng(27);
    Tensor in = random_image({1, 12, 12}, rng);
    InfoDropParams p = params_kR(3, 3);
    p.subsample_n = 5;
    InfoMap a = estimate_info(in, p, 123);
    InfoMap b = estimate_info(in, p, 123);
    EXPECT_EQ(a.values.data, b.values.data);
    InfoMap c = estimate_info(in, p, 124);
    EXPECT_NE(a.values.data, c.values.data);
}

TEST(EstimateInfo, ErrorPaths) {
    Tensor in = Tensor::full({1, 8, 8}, 0.1);
    InfoDropParams p = params_kR(3, 3);
    p.subsample_n = 1;
    EXPECT_THROW(estimate_info(in, p, 0), std::invalid_argument);

    InfoDropParams bad_h = params_kR(3, 3);
    bad_h.bandwidth_h = 0.0;
    EXPECT_THROW(estimate_info(in, bad_h, 0), std::invalid_argument);

    Tensor nonfinite = in;
    nonfinite[3] = std::nan("");
    EXPECT_THROW(estimate_info(nonfinite, params_kR(3, 3), 0), std::domain_error);
}
