#include <gtest/gtest.h>

#include <cmath>

#include "dff/scenes.hpp"
#include "dff/synth.hpp"
#include "dff/volume.hpp"
#include "support.hpp"

using namespace dff;
using dff::testing::random_grid;

namespace {

const CameraParams kCam{0.05, 2.0, 1e-5, 31};

Grid dense_disc_oracle(const Grid& in, int r) {
    Grid out(in.height, in.width);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    if (dx * dx + dy * dy <= r * r) {
                        s += in.clamped(y + dy, x + dx);
                        ++n;
                    }
            out(y, x) = s / n;
        }
    return out;
}

double interior_mean(const Grid& g, int margin) {
    double s = 0.0;
    int n = 0;
    for (int y = margin; y < g.height - margin; ++y)
        for (int x = margin; x < g.width - margin; ++x) {
            s += g(y, x);
            ++n;
        }
    return s / n;
}

}  // namespace

TEST(Coc, ZeroAtFocus) {
    EXPECT_EQ(coc_diameter(1.0, 1.0, kCam), 0.0);
    EXPECT_EQ(coc_diameter(2.37, 2.37, kCam), 0.0);
}

TEST(Coc, HandEvaluatedExample) {
    EXPECT_NEAR(coc_diameter(1.0, 2.0, kCam), 0.5 * 0.0025 / (2.0 * 0.95), 1e-15);
    EXPECT_NEAR(coc_diameter(1.0, 2.0, kCam), 6.5789e-4, 1e-8);
}

TEST(Coc, DomainErrors) {
    EXPECT_THROW(coc_diameter(0.04, 1.0, kCam), DomainError);
    EXPECT_THROW(coc_diameter(0.05, 1.0, kCam), DomainError);
    EXPECT_THROW(coc_diameter(1.0, 0.0, kCam), DomainError);
    EXPECT_THROW(coc_diameter(1.0, -2.0, kCam), DomainError);
}

TEST(Coc, PositiveAwayFromFocus) {
    RandomStream rng(2);
    for (int i = 0; i < 100; ++i) {
        const double s1 = rng.uniform(0.1, 5.0), s2 = rng.uniform(0.1, 5.0);
        EXPECT_GT(coc_diameter(s1, s2, kCam), 0.0);
    }
}

TEST(Coc, RadiusIsClamped) {
    CameraParams c = kCam;
    c.max_coc_px = 4;
    EXPECT_EQ(coc_radius_px(1.0, 100.0, c), 4);
    EXPECT_EQ(coc_radius_px(1.0, 1.0, c), 0);
}

TEST(DiscKernel, WeightsSumToOneForEveryRadius) {
    for (int r = 0; r <= 31; ++r) EXPECT_NEAR(DiscKernel(r).weight_sum(), 1.0, 1e-9) << r;
}

TEST(DiscBlur, MatchesDenseConvolutionOracle) {
    RandomStream rng(8);
    const Grid img = random_grid(8, 8, rng);
    for (int r : {1, 2, 3, 5}) {
        const Grid a = disc_blur(img, r), b = dense_disc_oracle(img, r);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12) << "r=" << r;
    }
    EXPECT_EQ(disc_blur(img, 0), img);
}

TEST(Synthesize, PlaneAtSceneDepthEqualsInputExactly) {
    SceneConfig sc;
    sc.height = sc.width = 24;
    const SyntheticScene s = constant_depth_scene(sc, 2.0, 4);
    EXPECT_EQ(s.stack.plane(2), s.rgb);
    EXPECT_NE(s.stack.plane(0), s.rgb);
}

TEST(Synthesize, TwoLayerFocusAtNearBlursOnlyFar) {
    RandomStream rng(6);
    const int H = 32, W = 32;
    Grid depth(H, W, 2.4);
    for (int y = 8; y < 24; ++y)
        for (int x = 8; x < 24; ++x) depth(y, x) = 1.6;
    const Image rgb = Image::gray(random_grid(H, W, rng, 0.1, 0.9));
    const FocalStack st = synthesize_stack(rgb, DepthMap::from_values(depth), {1.6, 2.4}, kCam);
    double near_dev = 0.0, far_dev = 0.0;
    int nf = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = std::abs(st.plane(0).channels[0](y, x) - rgb.channels[0](y, x));
            if (depth(y, x) == 1.6) {
                near_dev += d;
            } else {
                far_dev += d;
                ++nf;
            }
        }
    EXPECT_EQ(near_dev, 0.0);
    EXPECT_GT(far_dev / nf, 0.0);
}

TEST(Synthesize, InteriorMeanIsPreserved) {
    SceneConfig sc;
    sc.height = sc.width = 96;
    const SyntheticScene s = constant_depth_scene(sc, 2.0, 9);
    const double ref = interior_mean(s.rgb.channels[0], 16);
    for (int n = 0; n < s.stack.size(); ++n)
        EXPECT_NEAR(interior_mean(s.stack.plane(n).channels[0], 16), ref, 1e-3) << "plane " << n;
}

TEST(Synthesize, Preconditions) {
    const Image rgb = Image::gray(Grid(8, 8, 0.5));
    const DepthMap d = DepthMap::constant(8, 8, 2.0);
    EXPECT_THROW(synthesize_stack(rgb, DepthMap::constant(8, 9, 2.0), {1.0, 2.0}, kCam), Error);
    EXPECT_THROW(synthesize_stack(rgb, d, {2.0, 1.0}, kCam), Error);
    EXPECT_THROW(synthesize_stack(rgb, d, {1.0, 2.0}, kCam, SynthOptions{1}), Error);
    EXPECT_THROW(synthesize_stack(rgb, d, {0.01, 2.0}, kCam), DomainError);
    CameraParams bad = kCam;
    bad.f_number = 0.0;
    EXPECT_THROW(synthesize_stack(rgb, d, {1.0, 2.0}, bad), Error);
}

TEST(Synthesize, MonotoneBlurOnConstantDepthScenes) {
    SceneConfig sc;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double D = sc.focus_distances[seed % sc.focus_distances.size()];
        const SyntheticScene s = constant_depth_scene(sc, D, seed);
        std::vector<double> dist, sharp;
        for (int n = 0; n < s.stack.size(); ++n) {
            dist.push_back(std::abs(sc.focus_distances[n] - D));
            sharp.push_back(mean_abs_laplacian(s.stack.plane(n).luma()));
        }
        for (std::size_t a = 0; a < dist.size(); ++a)
            for (std::size_t b = 0; b < dist.size(); ++b)
                if (dist[a] + 1e-9 < dist[b]) EXPECT_GE(sharp[a], sharp[b]) << "seed " << seed;
    }
}

TEST(Crop, RemovesBorder) {
    Grid g(6, 5);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<double>(i);
    const Grid c = crop_border(g, 1);
    EXPECT_EQ(c.height, 4);
    EXPECT_EQ(c.width, 3);
    EXPECT_EQ(c(0, 0), g(1, 1));
    EXPECT_THROW(crop_border(g, 3), Error);
}

TEST(Scenes, TwoLayerDepthsBracketedByPlanes) {
    SceneConfig sc;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const SyntheticScene s = two_layer_scene(sc, seed, 0.25);
        double lo = 1e9, hi = 0.0;
        for (double v : s.depth.values().data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        EXPECT_GT(lo, sc.focus_distances.front());
        EXPECT_LT(hi, sc.focus_distances.back());
        EXPECT_LT(lo, hi);
        const auto untextured = std::count(s.textured.begin(), s.textured.end(), std::uint8_t{0});
        EXPECT_EQ(untextured, 12 * 48);
    }
}
