// Grid resampling between image and surface working resolutions.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dff/core.hpp"

namespace dff {

namespace detail {

/// Overlap weights of source cells [k, k+1) with the destination interval
/// [i * src/dst, (i+1) * src/dst) for every destination index i.
struct AreaWeights {
    std::vector<std::vector<std::pair<int, double>>> taps;
};

inline AreaWeights area_weights(int src, int dst) {
    AreaWeights w;
    w.taps.resize(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double lo = i * scale, hi = (i + 1) * scale;
        for (int k = static_cast<int>(std::floor(lo)); k < src && k < hi; ++k) {
            const double ov = std::min<double>(hi, k + 1) - std::max<double>(lo, k);
            if (ov > 1e-12) w.taps[i].emplace_back(k, ov);
        }
    }
    return w;
}

}  // namespace detail

/// Area-average of valid pixels onto an (h, w) grid. Cells without any valid
/// source pixel are invalid.
inline DepthMap area_downsample(const DepthMap& src, int h, int w) {
    if (h <= 0 || w <= 0 || h > src.height() || w > src.width()) throw Error("invalid downsample target");
    const auto wy = detail::area_weights(src.height(), h);
    const auto wx = detail::area_weights(src.width(), w);
    Grid values(h, w);
    std::vector<std::uint8_t> mask(values.size(), 0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double sum = 0.0, weight = 0.0;
            for (auto [y, a] : wy.taps[i])
                for (auto [x, b] : wx.taps[j])
                    if (src.valid(y, x)) {
                        sum += a * b * src(y, x);
                        weight += a * b;
                    }
            if (weight > 0.0) {
                values(i, j) = sum / weight;
                mask[values.index(i, j)] = 1;
            }
        }
    return DepthMap(std::move(values), std::move(mask));
}

/// Linear interpolation weights for resizing a length-`src` axis to `dst`
/// (pixel-centre alignment, edge clamped).
struct LinearTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline LinearTaps linear_taps(int src, int dst) {
    LinearTaps t;
    t.lo.resize(dst);
    t.hi.resize(dst);
    t.frac.resize(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
        const int l = static_cast<int>(std::floor(s));
        t.lo[i] = l;
        t.hi[i] = std::min(l + 1, src - 1);
        t.frac[i] = s - l;
    }
    return t;
}

/// Precomputed bilinear resize between fixed shapes; also provides the adjoint.
class BilinearResize {
public:
    BilinearResize(int src_h, int src_w, int dst_h, int dst_w)
        : sh_(src_h), sw_(src_w), dh_(dst_h), dw_(dst_w), ty_(linear_taps(src_h, dst_h)), tx_(linear_taps(src_w, dst_w)) {}

    [[nodiscard]] int src_height() const noexcept { return sh_; }
    [[nodiscard]] int src_width() const noexcept { return sw_; }
    [[nodiscard]] int dst_height() const noexcept { return dh_; }
    [[nodiscard]] int dst_width() const noexcept { return dw_; }

    void apply(const double* src, double* dst) const {
        for (int i = 0; i < dh_; ++i) {
            const double fy = ty_.frac[i];
            const double* r0 = src + static_cast<std::size_t>(ty_.lo[i]) * sw_;
            const double* r1 = src + static_cast<std::size_t>(ty_.hi[i]) * sw_;
            for (int j = 0; j < dw_; ++j) {
                const double fx = tx_.frac[j];
                const int x0 = tx_.lo[j], x1 = tx_.hi[j];
                const double top = r0[x0] * (1 - fx) + r0[x1] * fx;
                const double bot = r1[x0] * (1 - fx) + r1[x1] * fx;
                dst[static_cast<std::size_t>(i) * dw_ + j] = top * (1 - fy) + bot * fy;
            }
        }
    }

    /// src_grad += R^T dst_grad
    void adjoint(const double* dst_grad, double* src_grad) const {
        for (int i = 0; i < dh_; ++i) {
            const double fy = ty_.frac[i];
            double* r0 = src_grad + static_cast<std::size_t>(ty_.lo[i]) * sw_;
            double* r1 = src_grad + static_cast<std::size_t>(ty_.hi[i]) * sw_;
            for (int j = 0; j < dw_; ++j) {
                const double g = dst_grad[static_cast<std::size_t>(i) * dw_ + j];
                const double fx = tx_.frac[j];
                const int x0 = tx_.lo[j], x1 = tx_.hi[j];
                r0[x0] += g * (1 - fy) * (1 - fx);
                r0[x1] += g * (1 - fy) * fx;
                r1[x0] += g * fy * (1 - fx);
                r1[x1] += g * fy * fx;
            }
        }
    }

private:
    int sh_, sw_, dh_, dw_;
    LinearTaps ty_, tx_;
};

inline Grid bilinear_resize(const Grid& g, int h, int w) {
    Grid out(h, w);
    BilinearResize(g.height, g.width, h, w).apply(g.data.data(), out.data.data());
    return out;
}

}  // namespace dff
