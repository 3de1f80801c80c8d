#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "dff/fusion.hpp"
#include "dff/losses.hpp"
#include "dff/resample.hpp"
#include "support.hpp"

using namespace dff;
using dff::testing::random_grid;

namespace {

FocusProbabilityMap single_pixel(std::vector<double> p) {
    const int n = static_cast<int>(p.size());
    return FocusProbabilityMap(1, 1, n, std::move(p));
}

DepthMap random_depth(int h, int w, RandomStream& rng) { return DepthMap::from_values(random_grid(h, w, rng, 1.0, 3.0)); }

/// theta with a single centre tap mapping channel cx to x and cy to y.
GradFusionMap centre_map(int channels, int cx, int cy) {
    GradFusionMap t(channels);
    t.weight(0, cx, 1, 1) = 1.0;
    t.weight(1, cy, 1, 1) = 1.0;
    return t;
}

}  // namespace

TEST(SharpnessWeights, HandExample) {
    const SharpnessWeights q = sharpness_weights(DepthMap::constant(1, 1, 2.0), {1.0, 2.0, 3.0});
    EXPECT_NEAR(q.q[0], 0.2119415576, 1e-9);
    EXPECT_NEAR(q.q[1], 0.5761168847, 1e-9);
    EXPECT_NEAR(q.q[2], 0.2119415576, 1e-9);
    EXPECT_EQ(q.q[0], q.q[2]);
}

TEST(SharpnessWeights, ArgmaxIsNearestPlaneAndRowsSumToOne) {
    RandomStream rng(1);
    const std::vector<double> f{1.0, 1.3, 1.9, 2.4, 3.0};
    const DepthMap gt = random_depth(6, 6, rng);
    const SharpnessWeights q = sharpness_weights(gt, f);
    for (std::size_t px = 0; px < gt.size(); ++px) {
        int nearest = 0;
        for (int n = 1; n < 5; ++n)
            if (std::abs(f[n] - gt.values().data[px]) < std::abs(f[nearest] - gt.values().data[px])) nearest = n;
        EXPECT_EQ(first_argmax(q.pixel(px), 5), nearest);
        double s = 0;
        for (int n = 0; n < 5; ++n) {
            EXPECT_GT(q.pixel(px)[n], 0.0);
            EXPECT_LT(q.pixel(px)[n], 1.0);
            s += q.pixel(px)[n];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(SharpnessWeights, InvalidPixelsAreUniformAndEmptyMaskIsAnError) {
    Grid g(1, 2);
    g.data = {2.0, 0.0};
    const SharpnessWeights q = sharpness_weights(DepthMap::from_values(g), {1.0, 2.0, 3.0, 4.0});
    for (int n = 0; n < 4; ++n) EXPECT_EQ(q.pixel(1)[n], 0.25);
    EXPECT_THROW(sharpness_weights(DepthMap::constant(2, 2, 0.0), {1.0, 2.0}), Error);
}

TEST(SharpnessWeights, InverseAndUniformVariants) {
    const SharpnessWeights q = sharpness_weights(DepthMap::constant(1, 1, 2.0), {1.0, 2.0, 3.0});
    const SharpnessWeights inv = inverse_weights(q);
    double s = 0;
    for (int n = 0; n < 3; ++n) {
        EXPECT_NEAR(inv.q[n], (1.0 - q.q[n]) / 2.0, 1e-15);
        s += inv.q[n];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (double v : uniform_weights(q).q) EXPECT_EQ(v, 1.0 / 3.0);
}

TEST(SpatialLoss, PerfectMatchIsZero) {
    RandomStream rng(2);
    const int H = 6, W = 5, N = 3;
    const DepthMap gt = random_depth(H, W, rng);
    const DepthGradient target = depth_gradient(gt);
    SurfaceField z(H, W, 2, N);
    for (int n = 0; n < N; ++n) {
        std::copy(target.gx.begin(), target.gx.end(), z.slice(n, 0).begin());
        std::copy(target.gy.begin(), target.gy.end(), z.slice(n, 1).begin());
    }
    const auto r = spatial_variational_loss(z, centre_map(2, 0, 1), target, sharpness_weights(gt, {1.0, 2.0, 3.0}));
    EXPECT_EQ(r.value, 0.0);
    for (double g : r.grad_input().z) EXPECT_EQ(g, 0.0);
}

TEST(SpatialLoss, FlatSceneIsZero) {
    const DepthMap gt = DepthMap::constant(4, 4, 2.0);
    const SurfaceField z(4, 4, 3, 2);
    RandomStream rng(3);
    GradFusionMap theta = GradFusionMap::random(3, rng);
    const auto r = spatial_variational_loss(z, theta, depth_gradient(gt), sharpness_weights(gt, {1.0, 3.0}));
    EXPECT_EQ(r.value, 0.0);
}

TEST(SpatialLoss, BruteForceThreeByThree) {
    Grid g(3, 3);
    g.data = {1.0, 1.2, 1.5, 1.1, 1.4, 1.9, 1.3, 1.3, 2.2};
    const DepthMap gt = DepthMap::from_values(g);
    const DepthGradient target = depth_gradient(gt);
    const std::vector<double> f{1.0, 2.0};
    const SharpnessWeights q = sharpness_weights(gt, f);
    SurfaceField z(3, 3, 1, 2);
    z.z = {0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.2, -0.4, 1.0, 0.0, -1.0, 0.5, 0.25, 0.0, 0.3, -0.3, 0.1};
    const auto r = spatial_variational_loss(z, centre_map(1, 0, 0), target, q);
    double expect = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * 3 + x;
                const double zz = z.z[static_cast<std::size_t>(n) * 9 + i];
                const double dx = x < 2 ? g(y, x + 1) - g(y, x) : 0.0;
                const double dy = y < 2 ? g(y + 1, x) - g(y, x) : 0.0;
                expect += q.q[i * 2 + n] * (std::abs(dx - zz) + std::abs(dy - zz));
            }
    EXPECT_NEAR(r.value, expect, 1e-14);
}

TEST(SpatialLoss, ResolutionMismatchIsAnError) {
    const DepthMap gt = DepthMap::constant(5, 5, 2.0);
    EXPECT_THROW(spatial_variational_loss(SurfaceField(4, 4, 1, 2), GradFusionMap(1), depth_gradient(gt),
                                          sharpness_weights(gt, {1.0, 2.0})),
                 Error);
}

TEST(AreaDownsample, AveragesValidPixels) {
    Grid g(4, 4);
    for (std::size_t i = 0; i < 16; ++i) g.data[i] = static_cast<double>(i + 1);
    g(0, 0) = 0.0;
    const DepthMap d = area_downsample(DepthMap::from_values(g), 2, 2);
    EXPECT_DOUBLE_EQ(d(0, 0), (2.0 + 5.0 + 6.0) / 3.0);
    EXPECT_DOUBLE_EQ(d(1, 1), (11.0 + 12.0 + 15.0 + 16.0) / 4.0);
    const DepthMap e = area_downsample(DepthMap::from_values(g), 3, 3);
    EXPECT_EQ(e.valid_count(), 9u);
    EXPECT_THROW(area_downsample(d, 3, 3), Error);
}

TEST(FocalLoss, UnimodalIsZero) {
    EXPECT_EQ(focal_variational_loss(single_pixel({0.1, 0.2, 0.4, 0.2, 0.1})).value, 0.0);
    EXPECT_EQ(focal_variational_loss(single_pixel({0.0, 0.0, 1.0, 0.0, 0.0})).value, 0.0);
}

TEST(FocalLoss, TieRuleHandExample) {
    const auto r = focal_variational_loss(single_pixel({0.1, 0.3, 0.2, 0.3, 0.1}));
    EXPECT_NEAR(r.value, 0.01, 1e-15);
}

TEST(FocalLoss, SymmetricPermutationAboutPeakStaysZero) {
    const std::vector<double> p{0.05, 0.15, 0.6, 0.15, 0.05};
    std::vector<double> swapped{p[4], p[3], p[2], p[1], p[0]};
    EXPECT_EQ(focal_variational_loss(single_pixel(swapped)).value, 0.0);
}

TEST(FocalLoss, ZeroIffUnimodalOnRandomMaps) {
    RandomStream rng(4);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> p(5);
        double s = 0;
        for (auto& v : p) s += (v = rng.uniform());
        for (auto& v : p) v /= s;
        const int k = first_argmax(p.data(), 5);
        bool unimodal = true;
        for (int i = 0; i < k; ++i) unimodal = unimodal && p[i] <= p[i + 1];
        for (int i = k; i < 4; ++i) unimodal = unimodal && p[i + 1] <= p[i];
        const double v = focal_variational_loss(single_pixel(p)).value;
        EXPECT_GE(v, 0.0);
        EXPECT_EQ(v == 0.0, unimodal);
    }
}

TEST(DepthLoss, Examples) {
    const DepthMap gt = DepthMap::constant(1, 1, 2.0);
    EXPECT_EQ(depth_loss(gt, gt).value, 0.0);
    EXPECT_DOUBLE_EQ(depth_loss(DepthMap::constant(1, 1, 2.5), gt).value, 0.125);
    EXPECT_DOUBLE_EQ(depth_loss(DepthMap::constant(1, 1, 4.0), gt).value, 1.5);
}

TEST(DepthLoss, AveragesOverValidPixelsOnly) {
    Grid g(1, 2);
    g.data = {2.0, 0.0};
    const auto r = depth_loss(DepthMap::constant(1, 2, 2.5), DepthMap::from_values(g));
    EXPECT_DOUBLE_EQ(r.value, 0.125);
    EXPECT_EQ(r.grad.data[1], 0.0);
    EXPECT_THROW(depth_loss(DepthMap::constant(1, 3, 1.0), DepthMap::from_values(g)), Error);
    EXPECT_THROW(depth_loss(DepthMap::constant(1, 2, 1.0), DepthMap::constant(1, 2, -1.0)), Error);
}

TEST(TotalLoss, Examples) {
    const LossReport r = total_loss(1.0, 0.1, 0.01);
    EXPECT_DOUBLE_EQ(r.total, 4.0);
    EXPECT_EQ(r.lambda_sv, 20.0);
    EXPECT_EQ(r.lambda_fv, 100.0);
    EXPECT_EQ(total_loss(0.7, 3.0, 5.0, 0.0, 0.0).total, 0.7);
    EXPECT_EQ(total_loss(0.0, 0.0, 0.0).total, 0.0);
    RandomStream rng(5);
    for (int i = 0; i < 50; ++i) {
        const double d = rng.uniform(), s = rng.uniform(), f = rng.uniform(), a = rng.uniform(0, 50), b = rng.uniform(0, 200);
        const LossReport x = total_loss(d, s, f, a, b);
        EXPECT_NEAR(x.total, x.depth_term + x.lambda_sv * x.sv_term + x.lambda_fv * x.fv_term, 1e-9);
    }
}

TEST(Losses, SmallStepDoesNotIncreaseAnyTerm) {
    RandomStream rng(6);
    const int H = 6, W = 6, C = 2, N = 4;
    const std::vector<double> f{1.0, 1.5, 2.0, 2.5};
    const DepthMap gt = random_depth(H, W, rng);
    const DepthGradient target = depth_gradient(gt);
    const SharpnessWeights q = sharpness_weights(gt, f);
    for (int trial = 0; trial < 10; ++trial) {
        SurfaceField z(H, W, C, N);
        for (auto& v : z.z) v = rng.uniform(-0.3, 0.3);
        const GradFusionMap theta = GradFusionMap::random(C, rng, 0.5);
        const auto sv = spatial_variational_loss(z, theta, target, q);
        SurfaceField z2 = z;
        const SurfaceField g = sv.grad_input();
        for (std::size_t i = 0; i < z.z.size(); ++i) z2.z[i] -= 1e-6 * g.z[i];
        EXPECT_LE(spatial_variational_loss(z2, theta, target, q).value, sv.value);

        FocusLogits l(H, W, N);
        for (auto& v : l.logits) v = rng.uniform(-2, 2);
        const FocusProbabilityMap p = to_probabilities(l);
        const auto fv = focal_variational_loss(p);
        FocusLogits l2 = l;
        std::vector<double> gl(N);
        for (std::size_t px = 0; px < p.pixel_count(); ++px) {
            softmax_backward(p.pixel(px), fv.grad.data() + px * N, gl.data(), N);
            for (int n = 0; n < N; ++n) l2.logits[px * N + n] -= 1e-4 * gl[n];
        }
        EXPECT_LE(focal_variational_loss(to_probabilities(l2)).value, fv.value);

        const DepthMap pred = random_depth(H, W, rng);
        const auto dl = depth_loss(pred, gt);
        Grid moved = pred.values();
        for (std::size_t i = 0; i < moved.size(); ++i) moved.data[i] -= 1e-3 * dl.grad.data[i];
        EXPECT_LE(depth_loss(DepthMap::from_values(moved), gt).value, dl.value);
    }
}

TEST(Losses, BitIdenticalAcrossThreadCounts) {
    RandomStream rng(7);
    const int H = 9, W = 7, C = 3, N = 5;
    const DepthMap gt = random_depth(H, W, rng);
    SurfaceField z(H, W, C, N);
    for (auto& v : z.z) v = rng.uniform(-1, 1);
    const GradFusionMap theta = GradFusionMap::random(C, rng);
    const DepthGradient target = depth_gradient(gt);
    const SharpnessWeights q = sharpness_weights(gt, {1.0, 1.5, 2.0, 2.5, 3.0});
    setenv("DFF_THREADS", "1", 1);
    const auto a = spatial_variational_loss(z, theta, target, q);
    setenv("DFF_THREADS", "4", 1);
    const auto b = spatial_variational_loss(z, theta, target, q);
    unsetenv("DFF_THREADS");
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.grad_input().z, b.grad_input().z);
    EXPECT_EQ(a.grad_theta.weights, b.grad_theta.weights);
}
