// Seeded synthetic scenes (texture + depth + rendered focal stack) used by the
// benchmark, the acceptance suite and the CLI's built-in demos.
#pragma once

#include <algorithm>
#include <utility>
#include <cstdint>
#include <vector>

#include "dff/core.hpp"
#include "dff/random.hpp"
#include "dff/synth.hpp"

namespace dff {

struct SceneConfig {
    int height = 48;
    int width = 48;
    std::vector<double> focus_distances{1.6, 1.8, 2.0, 2.2, 2.4};
    CameraParams camera{0.05, 2.0, 1e-5, 31};
    int layers = 16;

    [[nodiscard]] double plane_spacing() const {
        return (focus_distances.back() - focus_distances.front()) / static_cast<double>(focus_distances.size() - 1);
    }
};

struct SyntheticScene {
    Image rgb;
    DepthMap depth;
    std::vector<std::uint8_t> textured;  ///< 1 where the all-in-focus image carries texture
    FocalStack stack;
};

/// Multi-scale random texture in [0.1, 0.9].
inline Grid random_texture(int h, int w, RandomStream& rng) {
    Grid fine(h, w), coarse(h, w);
    const int cell = 4;
    std::vector<double> cells(static_cast<std::size_t>((h + cell - 1) / cell) * ((w + cell - 1) / cell));
    for (auto& c : cells) c = rng.uniform();
    const int cw = (w + cell - 1) / cell;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            fine(y, x) = rng.uniform();
            coarse(y, x) = cells[static_cast<std::size_t>(y / cell) * cw + x / cell];
        }
    Grid out(h, w);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = 0.1 + 0.8 * (0.6 * fine.data[i] + 0.4 * coarse.data[i]);
    return out;
}

namespace detail {

inline FocalStack render_scene_stack(const Image& rgb, const DepthMap& depth, const SceneConfig& cfg) {
    return synthesize_stack(rgb, depth, cfg.focus_distances, cfg.camera, SynthOptions{cfg.layers});
}

}  // namespace detail

/// Fully textured scene at a single depth.
inline SyntheticScene constant_depth_scene(const SceneConfig& cfg, double depth, std::uint64_t seed) {
    auto rng = RandomStream::named(seed, "texture");
    Image rgb = Image::gray(random_texture(cfg.height, cfg.width, rng));
    DepthMap d = DepthMap::constant(cfg.height, cfg.width, depth);
    FocalStack stack = detail::render_scene_stack(rgb, d, cfg);
    return {std::move(rgb), std::move(d), std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.height) * cfg.width, 1),
            std::move(stack)};
}

/// Random near depth in the front half of the stack and far depth in the back
/// half, each strictly between two planes.
inline std::pair<double, double> random_layer_depths(const SceneConfig& cfg, RandomStream& rng) {
    const auto& f = cfg.focus_distances;
    const int N = static_cast<int>(f.size());
    const int mid = N / 2;
    const int a = rng.uniform_int(0, mid - 1);
    const int b = rng.uniform_int(mid, N - 2);
    const double near = f[a] + (f[a + 1] - f[a]) * rng.uniform(0.2, 0.8);
    const double far = f[b] + (f[b + 1] - f[b]) * rng.uniform(0.2, 0.8);
    return {near, far};
}

/// Rectangle of near depth on a far background; texture everywhere.
/// With `textureless_fraction` > 0, a band of columns is rendered as a flat
/// grey (no texture) and marked untextured.
inline SyntheticScene two_layer_scene(const SceneConfig& cfg, std::uint64_t seed, double textureless_fraction = 0.0) {
    auto rng = RandomStream::named(seed, "layout");
    auto tex_rng = RandomStream::named(seed, "texture");
    const int H = cfg.height, W = cfg.width;
    const auto [near, far] = random_layer_depths(cfg, rng);
    const int rh = rng.uniform_int(H / 3, H / 2), rw = rng.uniform_int(W / 3, W / 2);
    const int ry = rng.uniform_int(H / 8, H - rh - H / 8), rx = rng.uniform_int(W / 8, W - rw - W / 8);
    Grid depth(H, W, far);
    for (int y = ry; y < ry + rh; ++y)
        for (int x = rx; x < rx + rw; ++x) depth(y, x) = near;

    Grid tex = random_texture(H, W, tex_rng);
    std::vector<std::uint8_t> textured(static_cast<std::size_t>(H) * W, 1);
    const int flat_cols = static_cast<int>(textureless_fraction * W + 0.5);
    if (flat_cols > 0) {
        const int x0 = rng.uniform_int(0, W - flat_cols);
        const double grey = rng.uniform(0.3, 0.7);
        for (int y = 0; y < H; ++y)
            for (int x = x0; x < x0 + flat_cols; ++x) {
                tex(y, x) = grey;
                textured[static_cast<std::size_t>(y) * W + x] = 0;
            }
    }
    Image rgb = Image::gray(std::move(tex));
    DepthMap d = DepthMap::from_values(std::move(depth));
    FocalStack stack = detail::render_scene_stack(rgb, d, cfg);
    return {std::move(rgb), std::move(d), std::move(textured), std::move(stack)};
}

}  // namespace dff
