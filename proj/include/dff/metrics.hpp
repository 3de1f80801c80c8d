// Depth-map error metrics and the invalid-focus-trend diagnostic.
#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dff/core.hpp"
#include "dff/parallel.hpp"

namespace dff {

struct MetricsReport {
    double mse = 0.0;
    double rmse = 0.0;
    double log_rmse = 0.0;
    double absrel = 0.0;
    double sqrel = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double bump = 0.0;  ///< mean squared Laplacian x 100
    std::size_t valid_pixels = 0;
    std::optional<double> invalid_trend_pct;
    std::size_t clamped_pixels = 0;  ///< predictions <= 0 clamped before relative metrics
};

/// Predictions are clamped to this floor before relative and log metrics.
inline constexpr double kMinPredictedDepth = 1e-6;
inline constexpr double kBumpScale = 100.0;

/// Mean squared 4-neighbour Laplacian of `pred` over pixels that are off the
/// border and whose stencil is entirely gt-valid, times kBumpScale.
inline double bumpiness(const DepthMap& pred, const DepthMap& gt) {
    const int H = gt.height(), W = gt.width();
    std::vector<double> terms;
    terms.reserve(gt.size());
    for (int y = 1; y + 1 < H; ++y)
        for (int x = 1; x + 1 < W; ++x) {
            if (!gt.valid(y, x) || !gt.valid(y - 1, x) || !gt.valid(y + 1, x) || !gt.valid(y, x - 1) ||
                !gt.valid(y, x + 1))
                continue;
            const double lap = pred(y - 1, x) + pred(y + 1, x) + pred(y, x - 1) + pred(y, x + 1) - 4.0 * pred(y, x);
            terms.push_back(lap * lap);
        }
    if (terms.empty()) return 0.0;
    return kBumpScale * pairwise_sum(terms) / static_cast<double>(terms.size());
}

inline MetricsReport evaluate(const DepthMap& pred, const DepthMap& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) throw Error("dimension mismatch in evaluate");
    const std::size_t n = gt.valid_count();
    if (n == 0) throw Error("evaluate: ground truth has no valid pixels");

    std::vector<double> sq, lg, ar, sr, d1, d2, d3;
    for (auto* v : {&sq, &lg, &ar, &sr, &d1, &d2, &d3}) v->reserve(n);
    MetricsReport r;
    r.valid_pixels = n;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt.valid(i)) continue;
        const double g = gt.values().data[i];
        const double raw = pred.values().data[i];
        double d = raw;
        if (!(d > 0.0)) {
            d = kMinPredictedDepth;
            ++r.clamped_pixels;
        }
        const double e = raw - g;
        const double er = d - g;
        sq.push_back(e * e);
        const double le = std::log(d) - std::log(g);
        lg.push_back(le * le);
        ar.push_back(std::abs(er) / g);
        sr.push_back(er * er / g);
        const double ratio = std::max(d / g, g / d);
        d1.push_back(ratio < 1.25 ? 1.0 : 0.0);
        d2.push_back(ratio < 1.25 * 1.25 ? 1.0 : 0.0);
        d3.push_back(ratio < 1.25 * 1.25 * 1.25 ? 1.0 : 0.0);
    }
    const double inv = 1.0 / static_cast<double>(n);
    r.mse = pairwise_sum(sq) * inv;
    r.rmse = std::sqrt(r.mse);
    r.log_rmse = std::sqrt(pairwise_sum(lg) * inv);
    r.absrel = pairwise_sum(ar) * inv;
    r.sqrel = pairwise_sum(sr) * inv;
    r.delta1 = pairwise_sum(d1) * inv;
    r.delta2 = pairwise_sum(d2) * inv;
    r.delta3 = pairwise_sum(d3) * inv;
    r.bump = bumpiness(pred, gt);
    return r;
}

/// True when, around the (lowest-index) peak, some step left of the peak
/// decreases or some step right of it increases by more than `tol`.
inline bool invalid_focus_trend_pixel(const double* p, int n, double tol) {
    const int k = first_argmax(p, n);
    for (int i = 0; i < k; ++i)
        if (p[i] - p[i + 1] > tol) return true;
    for (int i = k; i < n - 1; ++i)
        if (p[i + 1] - p[i] > tol) return true;
    return false;
}

/// Percentage of pixels whose focus distribution is not unimodal.
inline double invalid_focus_trend(const FocusProbabilityMap& p, double tol = 1e-9) {
    if (!(tol >= 0.0)) throw Error("trend tolerance must be non-negative");
    std::size_t bad = 0;
    for (std::size_t px = 0; px < p.pixel_count(); ++px)
        if (invalid_focus_trend_pixel(p.pixel(px), p.planes(), tol)) ++bad;
    return 100.0 * static_cast<double>(bad) / static_cast<double>(p.pixel_count());
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["mse"] = r.mse;
    j["rmse"] = r.rmse;
    j["log_rmse"] = r.log_rmse;
    j["absrel"] = r.absrel;
    j["sqrel"] = r.sqrel;
    j["delta1"] = r.delta1;
    j["delta2"] = r.delta2;
    j["delta3"] = r.delta3;
    j["bump"] = r.bump;
    j["valid_pixels"] = r.valid_pixels;
    j["invalid_trend_pct"] = r.invalid_trend_pct ? nlohmann::json(*r.invalid_trend_pct) : nlohmann::json(nullptr);
    j["clamped_pixels"] = r.clamped_pixels;
    return j;
}

inline const char* metrics_csv_header() {
    return "mse,rmse,log_rmse,absrel,sqrel,delta1,delta2,delta3,bump,valid_pixels,invalid_trend_pct,clamped_pixels";
}

/// Round-trip decimal form; identical doubles print identically.
inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string metrics_csv_row(const MetricsReport& r) {
    std::string s;
    for (double v : {r.mse, r.rmse, r.log_rmse, r.absrel, r.sqrel, r.delta1, r.delta2, r.delta3, r.bump})
        s += format_number(v) + ",";
    s += std::to_string(r.valid_pixels) + ",";
    s += (r.invalid_trend_pct ? format_number(*r.invalid_trend_pct) : std::string()) + ",";
    s += std::to_string(r.clamped_pixels);
    return s;
}

}  // namespace dff
