// Focus logits -> probabilities -> depth, and the classical argmax baseline.
#pragma once

#include <cmath>
#include <vector>

#include "dff/core.hpp"
#include "dff/volume.hpp"

namespace dff {

/// Unnormalised per-pixel plane scores, pixel-major like FocusProbabilityMap.
struct FocusLogits {
    int height = 0, width = 0, planes = 0;
    std::vector<double> logits;

    FocusLogits() = default;
    FocusLogits(int h, int w, int n) : height(h), width(w), planes(n), logits(static_cast<std::size_t>(h) * w * n, 0.0) {}
    [[nodiscard]] std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height) * width; }
};

/// Max-subtracted softmax over one pixel's planes.
inline void softmax_inplace(const double* in, double* out, int n) {
    double m = in[0];
    for (int i = 1; i < n; ++i) m = std::max(m, in[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - m);
        s += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= s;
}

inline FocusProbabilityMap to_probabilities(const FocusLogits& l) {
    for (double v : l.logits)
        if (!std::isfinite(v)) throw Error("non-finite focus logit");
    std::vector<double> p(l.logits.size());
    for (std::size_t px = 0; px < l.pixel_count(); ++px)
        softmax_inplace(l.logits.data() + px * l.planes, p.data() + px * l.planes, l.planes);
    return FocusProbabilityMap(l.height, l.width, l.planes, std::move(p));
}

/// Vector-Jacobian product of the softmax for one pixel.
inline void softmax_backward(const double* p, const double* grad_p, double* grad_logits, int n) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += p[i] * grad_p[i];
    for (int i = 0; i < n; ++i) grad_logits[i] = p[i] * (grad_p[i] - dot);
}

/// Expected focal distance under p. Every output pixel is valid.
inline DepthMap depth_from_probabilities(const FocusProbabilityMap& p, const std::vector<double>& focal) {
    if (static_cast<int>(focal.size()) != p.planes()) throw Error("plane count mismatch");
    Grid d(p.height(), p.width());
    for (std::size_t px = 0; px < p.pixel_count(); ++px) {
        const double* pp = p.pixel(px);
        double acc = 0.0;
        for (int n = 0; n < p.planes(); ++n) acc += pp[n] * focal[n];
        d.data[px] = std::clamp(acc, focal.front(), focal.back());
    }
    return DepthMap(std::move(d), std::vector<std::uint8_t>(p.pixel_count(), 1));
}

/// Focal distance of the sharpest plane per pixel, lowest index on ties.
inline DepthMap argmax_baseline(const SharpnessVolume& s, const std::vector<double>& focal) {
    if (static_cast<int>(focal.size()) != s.planes()) throw Error("plane count mismatch");
    Grid d(s.height(), s.width());
    std::vector<double> v(focal.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (int n = 0; n < s.planes(); ++n) v[n] = s.sharpness[n].data[i];
        d.data[i] = focal[first_argmax(v.data(), s.planes())];
    }
    return DepthMap(std::move(d), std::vector<std::uint8_t>(d.size(), 1));
}

}  // namespace dff
