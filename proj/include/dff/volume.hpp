// Focus volumes: per-plane features augmented with inter-plane differences,
// plus classical sharpness measures over a focal stack.
#pragma once

#include <cmath>
#include <vector>

#include "dff/core.hpp"
#include "dff/parallel.hpp"

namespace dff {

/// Channel grids of one focal plane.
using PlaneFeatures = std::vector<Grid>;

/// features[n] holds 2*C1 channels: the C1 base channels followed by their
/// focal differences (forward for n < N-1, backward for the last plane).
struct FocusVolume {
    int base_channels = 0;
    std::vector<PlaneFeatures> features;

    [[nodiscard]] int planes() const noexcept { return static_cast<int>(features.size()); }
    [[nodiscard]] int channels() const noexcept { return 2 * base_channels; }
};

inline FocusVolume build_focus_volume(const std::vector<PlaneFeatures>& base) {
    const int N = static_cast<int>(base.size());
    if (N < 2) throw Error("focus volume needs at least two planes");
    const int C = static_cast<int>(base.front().size());
    if (C == 0) throw Error("focus volume needs at least one feature channel");
    for (const auto& pf : base) {
        if (static_cast<int>(pf.size()) != C) throw Error("dimension mismatch: feature channel counts differ");
        for (const auto& g : pf)
            if (!g.same_shape(base.front().front())) throw Error("dimension mismatch: feature grids differ");
    }
    FocusVolume vol;
    vol.base_channels = C;
    vol.features.resize(N);
    for (int n = 0; n < N; ++n) {
        const int hi = n < N - 1 ? n + 1 : n;
        const int lo = n < N - 1 ? n : n - 1;
        auto& out = vol.features[n];
        out = base[n];
        for (int c = 0; c < C; ++c) {
            Grid d(base[n][c].height, base[n][c].width);
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = base[hi][c].data[i] - base[lo][c].data[i];
            out.push_back(std::move(d));
        }
    }
    return vol;
}

inline FocusVolume build_focus_volume(const FocalStack& stack, const std::vector<PlaneFeatures>& base) {
    if (static_cast<int>(base.size()) != stack.size()) throw Error("dimension mismatch: one feature set per plane");
    for (const auto& pf : base)
        for (const auto& g : pf)
            if (g.height != stack.height() || g.width != stack.width())
                throw Error("dimension mismatch: feature grid vs stack");
    return build_focus_volume(base);
}

/// Sobel responses with replicate padding.
inline void sobel(const Grid& g, Grid& gx, Grid& gy) {
    gx = Grid(g.height, g.width);
    gy = Grid(g.height, g.width);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            auto v = [&](int dy, int dx) { return g.clamped(y + dy, x + dx); };
            gx(y, x) = (v(-1, 1) + 2 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2 * v(0, -1) + v(1, -1));
            gy(y, x) = (v(1, -1) + 2 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2 * v(-1, 0) + v(-1, 1));
        }
}

/// 4-neighbour Laplacian with replicate padding.
inline Grid laplacian(const Grid& g) {
    Grid out(g.height, g.width);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            out(y, x) = g.clamped(y - 1, x) + g.clamped(y + 1, x) + g.clamped(y, x - 1) + g.clamped(y, x + 1) -
                        4.0 * g(y, x);
    return out;
}

/// Mean over a window x window box, replicate padding. Window 1 is identity.
inline Grid box_filter(const Grid& g, int window) {
    if (window < 1 || window % 2 == 0) throw Error("box window must be a positive odd number");
    if (window == 1) return g;
    const int r = window / 2;
    Grid tmp(g.height, g.width), out(g.height, g.width);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += g.clamped(y, x + d);
            tmp(y, x) = s;
        }
    const double norm = 1.0 / (static_cast<double>(window) * window);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += tmp.clamped(y + d, x);
            out(y, x) = s * norm;
        }
    return out;
}

/// Luma plus Sobel gradient magnitude for every plane (C1 = 2).
inline std::vector<PlaneFeatures> default_base_features(const FocalStack& stack) {
    std::vector<PlaneFeatures> out(stack.size());
    for (int n = 0; n < stack.size(); ++n) {
        Grid gray = stack.plane(n).luma();
        Grid gx, gy;
        sobel(gray, gx, gy);
        Grid mag(gray.height, gray.width);
        for (std::size_t i = 0; i < mag.size(); ++i) mag.data[i] = std::hypot(gx.data[i], gy.data[i]);
        out[n] = {std::move(gray), std::move(mag)};
    }
    return out;
}

enum class SharpnessKind { laplacian_sq, tenengrad };

/// sharpness[n] is a non-negative per-pixel focus measure for plane n.
struct SharpnessVolume {
    std::vector<Grid> sharpness;

    [[nodiscard]] int planes() const noexcept { return static_cast<int>(sharpness.size()); }
    [[nodiscard]] int height() const noexcept { return sharpness.empty() ? 0 : sharpness.front().height; }
    [[nodiscard]] int width() const noexcept { return sharpness.empty() ? 0 : sharpness.front().width; }
};

inline Grid plane_sharpness(const Grid& gray, SharpnessKind kind, int window) {
    Grid raw(gray.height, gray.width);
    if (kind == SharpnessKind::laplacian_sq) {
        raw = laplacian(gray);
        for (auto& v : raw.data) v *= v;
    } else {
        Grid gx, gy;
        sobel(gray, gx, gy);
        for (std::size_t i = 0; i < raw.size(); ++i) raw.data[i] = gx.data[i] * gx.data[i] + gy.data[i] * gy.data[i];
    }
    return box_filter(raw, window);
}

inline SharpnessVolume sharpness_measure(const FocalStack& stack, SharpnessKind kind = SharpnessKind::laplacian_sq,
                                         int window = 5) {
    SharpnessVolume vol;
    vol.sharpness.resize(stack.size());
    parallel_for(static_cast<std::size_t>(stack.size()), [&](std::size_t n) {
        vol.sharpness[n] = plane_sharpness(stack.plane(static_cast<int>(n)).luma(), kind, window);
    });
    return vol;
}

/// Mean absolute 4-neighbour Laplacian over the interior, excluding `margin` border pixels.
inline double mean_abs_laplacian(const Grid& gray, int margin = 1) {
    const Grid lap = laplacian(gray);
    double s = 0.0;
    long n = 0;
    for (int y = margin; y < gray.height - margin; ++y)
        for (int x = margin; x < gray.width - margin; ++x) {
            s += std::abs(lap(y, x));
            ++n;
        }
    return n > 0 ? s / static_cast<double>(n) : 0.0;
}

}  // namespace dff
