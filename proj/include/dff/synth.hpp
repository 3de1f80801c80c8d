// Thin-lens focal-stack synthesis from an all-in-focus image and its depth.
//
// Each plane is rendered by splitting the scene into depth layers, blurring
// every layer (colour premultiplied by its binary mask) with a normalised
// disc whose radius comes from the circle of confusion, and compositing the
// layers far-to-near.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dff/core.hpp"
#include "dff/parallel.hpp"

namespace dff {

struct CameraParams {
    double focal_length = 0.05;  ///< meters
    double f_number = 2.0;
    double pixel_pitch = 1e-5;   ///< meters per pixel
    int max_coc_px = 31;         ///< radius clamp in pixels

    void validate() const {
        if (!(focal_length > 0.0) || !std::isfinite(focal_length)) throw Error("focal length must be positive");
        if (!(f_number > 0.0) || !std::isfinite(f_number)) throw Error("f-number must be positive");
        if (!(pixel_pitch > 0.0) || !std::isfinite(pixel_pitch)) throw Error("pixel pitch must be positive");
        if (max_coc_px < 0) throw Error("max CoC radius must be non-negative");
    }
};

/// Circle-of-confusion diameter (meters) of a point at `subject` when the
/// lens is focused at `focus`: |S2 - S1| / S2 * f^2 / (N (S1 - f)).
inline double coc_diameter(double focus, double subject, const CameraParams& cam) {
    if (!(focus > cam.focal_length)) throw DomainError("in-focus distance must exceed the focal length");
    if (!(subject > 0.0)) throw DomainError("subject distance must be positive");
    const double f = cam.focal_length;
    return std::abs(subject - focus) / subject * (f * f / (cam.f_number * (focus - f)));
}

/// Blur radius in whole pixels: round(c / (2 * pitch)), clamped.
inline int coc_radius_px(double focus, double subject, const CameraParams& cam) {
    const double r = std::round(coc_diameter(focus, subject, cam) / (2.0 * cam.pixel_pitch));
    return static_cast<int>(std::min<double>(r, cam.max_coc_px));
}

/// Hard-edged disc: offsets with dx^2 + dy^2 <= r^2, equal weights summing to one.
struct DiscKernel {
    int radius = 0;
    std::vector<int> half_width;  ///< per dy in [-r, r], covered dx range is [-hw, hw]
    double weight = 1.0;

    explicit DiscKernel(int r) : radius(r), half_width(2 * static_cast<std::size_t>(r) + 1) {
        if (r < 0) throw Error("disc radius must be non-negative");
        long count = 0;
        for (int dy = -r; dy <= r; ++dy) {
            int hw = 0;
            while ((hw + 1) * (hw + 1) + dy * dy <= r * r) ++hw;
            half_width[dy + r] = hw;
            count += 2 * hw + 1;
        }
        weight = 1.0 / static_cast<double>(count);
    }

    [[nodiscard]] long tap_count() const {
        long c = 0;
        for (int hw : half_width) c += 2 * hw + 1;
        return c;
    }
    [[nodiscard]] double weight_sum() const { return weight * static_cast<double>(tap_count()); }
};

/// Disc blur with replicate padding. Radius 0 returns the input unchanged.
inline Grid disc_blur(const Grid& in, int radius) {
    if (radius <= 0) return in;
    const DiscKernel k(radius);
    const int H = in.height, W = in.width, r = radius;
    // Row prefix sums over the replicate-padded range [-r, W-1+r].
    const int padded = W + 2 * r;
    std::vector<double> prefix(static_cast<std::size_t>(H) * (padded + 1));
    for (int y = 0; y < H; ++y) {
        double* pre = prefix.data() + static_cast<std::size_t>(y) * (padded + 1);
        pre[0] = 0.0;
        for (int i = 0; i < padded; ++i) pre[i + 1] = pre[i] + in.clamped(y, i - r);
    }
    Grid out(H, W);
    parallel_for(static_cast<std::size_t>(H), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int sy = std::clamp(y + dy, 0, H - 1);
                const int hw = k.half_width[dy + r];
                const double* pre = prefix.data() + static_cast<std::size_t>(sy) * (padded + 1);
                acc += pre[x + hw + r + 1] - pre[x - hw + r];
            }
            out(y, x) = acc * k.weight;
        }
    });
    return out;
}

struct SynthOptions {
    int layers = 16;
};

namespace detail {

struct DepthLayer {
    double depth = 0.0;  ///< representative (mean member) depth
    std::vector<std::uint8_t> members;
};

/// Uniform bins between the scene's min and max valid depth, far layer first.
/// Invalid depth pixels join the farthest layer.
inline std::vector<DepthLayer> quantize_layers(const DepthMap& depth, int layers) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (depth.valid(i)) {
            lo = std::min(lo, depth.values().data[i]);
            hi = std::max(hi, depth.values().data[i]);
        }
    if (!std::isfinite(lo)) throw Error("depth map has no valid pixels");
    std::vector<int> bin(depth.size());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (!depth.valid(i) || hi == lo) {
            bin[i] = depth.valid(i) ? 0 : layers - 1;
            continue;
        }
        const double t = (depth.values().data[i] - lo) / (hi - lo);
        bin[i] = std::min(layers - 1, static_cast<int>(t * layers));
    }
    if (hi == lo)
        for (auto& b : bin) b = 0;
    std::vector<DepthLayer> out;
    for (int b = layers - 1; b >= 0; --b) {
        DepthLayer L;
        L.members.assign(depth.size(), 0);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < depth.size(); ++i)
            if (bin[i] == b) {
                L.members[i] = 1;
                if (depth.valid(i)) {
                    sum += depth.values().data[i];
                    ++n;
                }
            }
        if (std::find(L.members.begin(), L.members.end(), std::uint8_t{1}) == L.members.end()) continue;
        L.depth = n > 0 ? sum / static_cast<double>(n) : hi;
        out.push_back(std::move(L));
    }
    return out;
}

}  // namespace detail

/// Renders one defocused plane focused at `focus`.
inline Image render_defocus(const Image& rgb, const std::vector<detail::DepthLayer>& layers, double focus,
                            const CameraParams& cam) {
    const int H = rgb.height(), W = rgb.width();
    const std::size_t npx = static_cast<std::size_t>(H) * W;
    std::vector<Grid> acc_color(rgb.channel_count(), Grid(H, W));
    Grid acc_alpha(H, W);
    for (const auto& layer : layers) {
        const int radius = coc_radius_px(focus, layer.depth, cam);
        Grid mask(H, W);
        for (std::size_t i = 0; i < npx; ++i) mask.data[i] = layer.members[i];
        const Grid alpha = disc_blur(mask, radius);
        for (int c = 0; c < rgb.channel_count(); ++c) {
            Grid premult(H, W);
            for (std::size_t i = 0; i < npx; ++i) premult.data[i] = rgb.channels[c].data[i] * mask.data[i];
            const Grid color = disc_blur(premult, radius);
            for (std::size_t i = 0; i < npx; ++i)
                acc_color[c].data[i] = acc_color[c].data[i] * (1.0 - alpha.data[i]) + color.data[i];
        }
        for (std::size_t i = 0; i < npx; ++i)
            acc_alpha.data[i] = acc_alpha.data[i] * (1.0 - alpha.data[i]) + alpha.data[i];
    }
    for (auto& ch : acc_color)
        for (std::size_t i = 0; i < npx; ++i) {
            const double a = acc_alpha.data[i];
            ch.data[i] = std::clamp(a > 0.0 ? ch.data[i] / a : 0.0, 0.0, 1.0);
        }
    return Image(std::move(acc_color));
}

/// Synthesises an N-plane focal stack from an all-in-focus image and depth.
inline FocalStack synthesize_stack(const Image& rgb, const DepthMap& depth, const std::vector<double>& focus_distances,
                                   const CameraParams& cam, const SynthOptions& opt = {}) {
    cam.validate();
    if (rgb.height() != depth.height() || rgb.width() != depth.width())
        throw Error("dimension mismatch between image and depth");
    if (opt.layers < 2) throw Error("need at least two depth layers");
    if (!strictly_increasing(focus_distances)) throw Error("non-increasing focal distances");
    for (double s : focus_distances)
        if (!(s > cam.focal_length)) throw DomainError("in-focus distance must exceed the focal length");
    depth.require_nonempty("synthesize_stack");

    const auto layers = detail::quantize_layers(depth, opt.layers);
    std::vector<Image> planes;
    planes.reserve(focus_distances.size());
    for (double s : focus_distances) planes.push_back(render_defocus(rgb, layers, s, cam));
    return FocalStack(std::move(planes), focus_distances);
}

/// Removes `margin` pixels from every border.
inline Grid crop_border(const Grid& g, int margin) {
    if (margin < 0 || 2 * margin >= g.height || 2 * margin >= g.width) throw Error("crop margin too large");
    Grid out(g.height - 2 * margin, g.width - 2 * margin);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out(y, x) = g(y + margin, x + margin);
    return out;
}

inline Image crop_border(const Image& img, int margin) {
    std::vector<Grid> ch;
    for (const auto& c : img.channels) ch.push_back(crop_border(c, margin));
    return Image(std::move(ch));
}

inline DepthMap crop_border(const DepthMap& d, int margin) {
    Grid values = crop_border(d.values(), margin);
    Grid m(d.height(), d.width());
    for (std::size_t i = 0; i < d.size(); ++i) m.data[i] = d.mask()[i];
    const Grid mc = crop_border(m, margin);
    std::vector<std::uint8_t> mask(mc.size());
    for (std::size_t i = 0; i < mc.size(); ++i) mask[i] = mc.data[i] != 0.0 ? 1 : 0;
    return DepthMap(std::move(values), std::move(mask));
}

}  // namespace dff
