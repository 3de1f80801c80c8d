// Scalar-loop reimplementation of every depth metric, used as a test oracle.
#pragma once

#include <algorithm>
#include <cmath>

#include "dff/core.hpp"

namespace dff::testing {

struct OracleMetrics {
    double mse = 0, rmse = 0, log_rmse = 0, absrel = 0, sqrel = 0, delta1 = 0, delta2 = 0, delta3 = 0, bump = 0;
};

inline OracleMetrics oracle_metrics(const DepthMap& pred, const DepthMap& gt) {
    OracleMetrics m;
    double n = 0;
    for (int y = 0; y < gt.height(); ++y)
        for (int x = 0; x < gt.width(); ++x) {
            if (!gt.valid(y, x)) continue;
            const double g = gt(y, x);
            const double d = pred(y, x) > 0 ? pred(y, x) : 1e-6;
            m.mse += (pred(y, x) - g) * (pred(y, x) - g);
            m.log_rmse += (std::log(d) - std::log(g)) * (std::log(d) - std::log(g));
            m.absrel += std::abs(d - g) / g;
            m.sqrel += (d - g) * (d - g) / g;
            const double ratio = std::max(d / g, g / d);
            m.delta1 += ratio < 1.25;
            m.delta2 += ratio < 1.5625;
            m.delta3 += ratio < 1.953125;
            n += 1;
        }
    m.mse /= n;
    m.rmse = std::sqrt(m.mse);
    m.log_rmse = std::sqrt(m.log_rmse / n);
    m.absrel /= n;
    m.sqrel /= n;
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    double b = 0, nb = 0;
    for (int y = 1; y < gt.height() - 1; ++y)
        for (int x = 1; x < gt.width() - 1; ++x) {
            if (!gt.valid(y, x) || !gt.valid(y - 1, x) || !gt.valid(y + 1, x) || !gt.valid(y, x - 1) || !gt.valid(y, x + 1))
                continue;
            const double lap = pred(y - 1, x) + pred(y + 1, x) + pred(y, x - 1) + pred(y, x + 1) - 4 * pred(y, x);
            b += lap * lap;
            nb += 1;
        }
    m.bump = nb > 0 ? 100.0 * b / nb : 0.0;
    return m;
}

/// Brute-force invalid-trend check of one pixel.
inline bool oracle_invalid_trend(const std::vector<double>& p, double tol) {
    const int n = static_cast<int>(p.size());
    int k = 0;
    for (int i = 0; i < n; ++i)
        if (p[i] > p[k]) k = i;
    for (int i = 1; i <= k; ++i)
        if (p[i - 1] - p[i] > tol) return true;
    for (int i = k + 1; i < n; ++i)
        if (p[i] - p[i - 1] > tol) return true;
    return false;
}

}  // namespace dff::testing
