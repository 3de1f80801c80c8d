// Direct per-scene optimisation of the combined depth-from-focus objective.
//
// Free variables: per-pixel focus logits u, low-resolution gradient fields
// gamma (C channels per plane), the 3x3 gradient fusion map theta and a
// per-channel coupling vector a. The focus logits seen by the softmax are
//
//     logits_n(x) = u_n(x) + sum_c a_c * up(s_n^c)(x)
//
// where s is the integrated surface field z* = project(gamma) (or the raw
// x-components of gamma when integrability is disabled) and `up` is bilinear
// upsampling to image resolution. Descent minimises the per-pixel objective
//
//     w * mean CE(t, p) + L_depth + lambda_sv * L_sv / (h_s w_s) + lambda_fv * L_fv / (H W)
//
// with t the per-pixel normalised classical sharpness (or its softmax). Each
// parameter group steps with the shared rate times a group multiplier; the
// multiplier for u also scales with the pixel count. Every step re-projects
// gamma; the projection is differentiated through the normal equations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "dff/core.hpp"
#include "dff/fusion.hpp"
#include "dff/losses.hpp"
#include "dff/metrics.hpp"
#include "dff/random.hpp"
#include "dff/resample.hpp"
#include "dff/surface.hpp"
#include "dff/volume.hpp"

namespace dff {

enum class WeightMode { sharp, uniform, inverse };

/// Per-pixel data target: sharpness divided by its plane sum, or softmax of raw sharpness.
enum class DataTarget { normalized, softmax };

struct SolverConfig {
    int steps = 300;
    double learning_rate = 0.05;
    double lambda_sv = kDefaultLambdaSv;
    double lambda_fv = kDefaultLambdaFv;
    double lambda_reg = 0.0;
    std::uint64_t seed = 0;
    double data_term_weight = 1.0;
    int log_every = 10;

    int surface_res = 14;
    int channels = 16;
    double beta = 1.0;  ///< smooth-L1 transition
    SharpnessKind sharpness = SharpnessKind::laplacian_sq;
    int sharpness_window = 5;
    DataTarget data_target = DataTarget::normalized;
    double sharpness_floor = 1e-12;  ///< added to every plane's sharpness before normalising

    bool integrability = true;
    WeightMode weights = WeightMode::sharp;

    /// Step multipliers per parameter group (diagonal preconditioner); the
    /// logit multiplier is further scaled by the pixel count.
    double logit_rate_scale = 1.0;
    double gamma_rate_scale = 1.0;
    double theta_rate_scale = 0.01;
    double coupling_rate_scale = 10.0;
    double coupling_init = 0.1;  ///< a ~ U[-coupling_init, coupling_init]

    void validate() const {
        if (steps < 0) throw Error("steps must be non-negative");
        if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
        if (!(lambda_sv >= 0.0) || !(lambda_fv >= 0.0)) throw Error("loss weights must be non-negative");
        if (!(lambda_reg >= 0.0)) throw Error("lambda_reg must be non-negative");
        if (!(data_term_weight >= 0.0)) throw Error("data term weight must be non-negative");
        if (log_every < 1) throw Error("log_every must be positive");
        if (surface_res < 2) throw Error("surface resolution must be at least 2");
        if (channels < 1) throw Error("surface channel count must be positive");
        if (!(beta > 0.0)) throw Error("beta must be positive");
        for (double r : {logit_rate_scale, gamma_rate_scale, theta_rate_scale, coupling_rate_scale})
            if (!(r >= 0.0) || !std::isfinite(r)) throw Error("rate scales must be finite and non-negative");
        if (!(sharpness_floor > 0.0)) throw Error("sharpness floor must be positive");
        if (!(coupling_init >= 0.0)) throw Error("coupling_init must be non-negative");
    }
};

struct TraceRecord {
    int step = 0;
    double total = 0.0;  ///< depth + lambda_sv * sv + lambda_fv * fv
    double depth = 0.0, sv = 0.0, fv = 0.0;
    double data = 0.0;
    double objective = 0.0;  ///< the normalised quantity descent minimises
    double rmse = 0.0;
    double invalid_trend_pct = 0.0;
};

struct SolverTrace {
    std::vector<TraceRecord> records;
};

/// Optimisation variables.
struct SolverParams {
    std::vector<double> logits;  ///< pixel-major H*W*N
    GradientField gamma;
    GradFusionMap theta;
    std::vector<double> coupling;  ///< a[n * C + c]

    /// Flattened view helpers for generic gradient checking and updates.
    [[nodiscard]] std::size_t size() const {
        return logits.size() + gamma.gx.size() + gamma.gy.size() + theta.weights.size() + 2 + coupling.size();
    }
    double& at(std::size_t i) {
        if (i < logits.size()) return logits[i];
        i -= logits.size();
        if (i < gamma.gx.size()) return gamma.gx[i];
        i -= gamma.gx.size();
        if (i < gamma.gy.size()) return gamma.gy[i];
        i -= gamma.gy.size();
        if (i < theta.weights.size()) return theta.weights[i];
        i -= theta.weights.size();
        if (i < 2) return theta.bias[i];
        return coupling.at(i - 2);
    }
    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& v : logits) fn(v);
        for (auto& v : gamma.gx) fn(v);
        for (auto& v : gamma.gy) fn(v);
        for (auto& v : theta.weights) fn(v);
        fn(theta.bias[0]);
        fn(theta.bias[1]);
        for (auto& v : coupling) fn(v);
    }
};

struct ObjectiveBreakdown {
    LossReport report;
    double data = 0.0;  ///< mean cross-entropy to the sharpness target
    double objective = 0.0;
};

/// One scene's objective with its fixed inputs (targets, weights, projector).
class SceneObjective {
public:
    SceneObjective(const FocalStack& stack, const DepthMap& gt, const SolverConfig& cfg)
        : cfg_(validated(cfg)),
          height_(stack.height()),
          width_(stack.width()),
          planes_(stack.size()),
          surf_h_(std::min(cfg.surface_res, stack.height())),
          surf_w_(std::min(cfg.surface_res, stack.width())),
          focal_(stack.focal_distances()),
          gt_(gt),
          projector_(surf_h_, surf_w_, ProjectionOptions{cfg.lambda_reg}),
          up_(surf_h_, surf_w_, stack.height(), stack.width()) {
        if (gt.height() != height_ || gt.width() != width_) throw Error("ground truth and stack are not aligned");
        gt.require_nonempty("solve_scene");

        // Data target: softmax of log-sharpness, i.e. sharpness normalised over planes.
        const SharpnessVolume sv = sharpness_measure(stack, cfg.sharpness, cfg.sharpness_window);
        target_.resize(static_cast<std::size_t>(height_) * width_ * planes_);
        for (std::size_t px = 0; px < static_cast<std::size_t>(height_) * width_; ++px) {
            if (cfg.data_target == DataTarget::softmax) {
                double m = sv.sharpness[0].data[px];
                for (int n = 1; n < planes_; ++n) m = std::max(m, sv.sharpness[n].data[px]);
                double z = 0.0;
                for (int n = 0; n < planes_; ++n) z += std::exp(sv.sharpness[n].data[px] - m);
                for (int n = 0; n < planes_; ++n)
                    target_[px * planes_ + n] = std::exp(sv.sharpness[n].data[px] - m) / z;
                continue;
            }
            double s = 0.0;
            for (int n = 0; n < planes_; ++n) s += sv.sharpness[n].data[px] + cfg.sharpness_floor;
            for (int n = 0; n < planes_; ++n)
                target_[px * planes_ + n] = (sv.sharpness[n].data[px] + cfg.sharpness_floor) / s;
        }

        const DepthMap gt_low = area_downsample(gt, surf_h_, surf_w_);
        target_grad_ = depth_gradient(gt_low);
        const SharpnessWeights q = sharpness_weights(gt_low, focal_);
        switch (cfg.weights) {
            case WeightMode::sharp: q_ = q; break;
            case WeightMode::uniform: q_ = uniform_weights(q); break;
            case WeightMode::inverse: q_ = inverse_weights(q); break;
        }
    }

    [[nodiscard]] SolverParams initial_params() const {
        SolverParams p;
        p.logits.assign(static_cast<std::size_t>(height_) * width_ * planes_, 0.0);
        p.gamma = GradientField(surf_h_, surf_w_, cfg_.channels, planes_);
        auto rng = RandomStream::named(cfg_.seed, "theta-init");
        p.theta = GradFusionMap::random(cfg_.channels, rng);
        auto crng = RandomStream::named(cfg_.seed, "coupling-init");
        p.coupling.resize(static_cast<std::size_t>(planes_) * cfg_.channels);
        for (auto& a : p.coupling) a = crng.uniform(-cfg_.coupling_init, cfg_.coupling_init);
        return p;
    }

    /// Surface features consumed by the logits: z* or the raw x-components.
    [[nodiscard]] SurfaceField surface(const SolverParams& p) const {
        if (cfg_.integrability) return projector_.project(p.gamma);
        SurfaceField s(surf_h_, surf_w_, cfg_.channels, planes_);
        s.z = p.gamma.gx;
        return s;
    }

    [[nodiscard]] std::vector<double> logits(const SolverParams& p, const SurfaceField& s) const {
        std::vector<double> l = p.logits;
        const std::size_t npx = static_cast<std::size_t>(height_) * width_;
        std::vector<double> up(npx);
        for (int n = 0; n < planes_; ++n)
            for (int c = 0; c < cfg_.channels; ++c) {
                const double a = p.coupling[static_cast<std::size_t>(n) * cfg_.channels + c];
                if (a == 0.0) continue;
                up_.apply(s.z.data() + s.offset(n, c), up.data());
                for (std::size_t px = 0; px < npx; ++px) l[px * planes_ + n] += a * up[px];
            }
        return l;
    }

    [[nodiscard]] FocusProbabilityMap probabilities(const std::vector<double>& logits) const {
        FocusLogits fl(height_, width_, planes_);
        fl.logits = logits;
        return to_probabilities(fl);
    }

    /// Objective value; when `grad` is non-null it receives d objective / d params.
    ObjectiveBreakdown evaluate(const SolverParams& p, SolverParams* grad = nullptr) const {
        const std::size_t npx = static_cast<std::size_t>(height_) * width_;
        const int N = planes_;
        const SurfaceField s = surface(p);
        const std::vector<double> l = logits(p, s);
        const FocusProbabilityMap prob = probabilities(l);
        const DepthMap pred = depth_from_probabilities(prob, focal_);

        const DepthLossResult dl = depth_loss(pred, gt_, cfg_.beta);
        FocalLossResult fl = focal_variational_loss(prob);

        std::vector<double> ce(npx);
        for (std::size_t px = 0; px < npx; ++px) {
            double acc = 0.0;
            const double* pp = prob.pixel(px);
            for (int n = 0; n < N; ++n) acc -= target_[px * N + n] * std::log(std::max(pp[n], kProbFloor));
            ce[px] = acc;
        }
        ObjectiveBreakdown out;
        const double inv_px = 1.0 / static_cast<double>(npx);
        const double sv_scale = cfg_.lambda_sv / static_cast<double>(surf_h_ * surf_w_);
        const double fv_scale = cfg_.lambda_fv * inv_px;
        out.data = pairwise_sum(ce) * inv_px;

        SpatialLossResult sl;
        if (cfg_.integrability) {
            sl = spatial_variational_loss(s, s, p.theta, target_grad_, q_);
        } else {
            SurfaceField sy(surf_h_, surf_w_, cfg_.channels, planes_);
            sy.z = p.gamma.gy;
            sl = spatial_variational_loss(s, sy, p.theta, target_grad_, q_);
        }
        out.report = total_loss(dl.value, sl.value, fl.value, cfg_.lambda_sv, cfg_.lambda_fv);
        out.objective = cfg_.data_term_weight * out.data + dl.value + sv_scale * sl.value + fv_scale * fl.value;
        if (!grad) return out;

        // d/dp, then through the softmax to the logits.
        std::vector<double> glogit(l.size());
        std::vector<double> gp(N);
        for (std::size_t px = 0; px < npx; ++px) {
            const double* pp = prob.pixel(px);
            for (int n = 0; n < N; ++n) gp[n] = dl.grad.data[px] * focal_[n] + fv_scale * fl.grad[px * N + n];
            softmax_backward(pp, gp.data(), glogit.data() + px * N, N);
            for (int n = 0; n < N; ++n) glogit[px * N + n] += cfg_.data_term_weight * inv_px * (pp[n] - target_[px * N + n]);
        }

        SolverParams& g = *grad;
        g.logits = glogit;
        g.coupling.assign(p.coupling.size(), 0.0);
        SurfaceField gs(surf_h_, surf_w_, cfg_.channels, planes_);
        std::vector<double> up(npx), plane_grad(npx);
        for (int n = 0; n < N; ++n) {
            for (std::size_t px = 0; px < npx; ++px) plane_grad[px] = glogit[px * N + n];
            for (int c = 0; c < cfg_.channels; ++c) {
                up_.apply(s.z.data() + s.offset(n, c), up.data());
                double acc = 0.0;
                for (std::size_t px = 0; px < npx; ++px) acc += plane_grad[px] * up[px];
                const std::size_t ai = static_cast<std::size_t>(n) * cfg_.channels + c;
                g.coupling[ai] = acc;
                if (p.coupling[ai] != 0.0) {
                    std::vector<double> tmp(gs.slice_size(), 0.0);
                    up_.adjoint(plane_grad.data(), tmp.data());
                    auto dst = gs.slice(n, c);
                    for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += p.coupling[ai] * tmp[i];
                }
            }
        }

        g.theta = sl.grad_theta;
        for (auto& w : g.theta.weights) w *= sv_scale;
        g.theta.bias[0] *= sv_scale;
        g.theta.bias[1] *= sv_scale;

        if (cfg_.integrability) {
            for (std::size_t i = 0; i < gs.z.size(); ++i)
                gs.z[i] += sv_scale * (sl.grad_input_x.z[i] + sl.grad_input_y.z[i]);
            g.gamma = projector_.backward(gs);
        } else {
            g.gamma = GradientField(surf_h_, surf_w_, cfg_.channels, planes_);
            for (std::size_t i = 0; i < gs.z.size(); ++i) {
                g.gamma.gx[i] = gs.z[i] + sv_scale * sl.grad_input_x.z[i];
                g.gamma.gy[i] = sv_scale * sl.grad_input_y.z[i];
            }
        }
        return out;
    }

    /// Per-parameter step multipliers, in for_each order.
    [[nodiscard]] std::vector<double> step_scales(const SolverParams& p) const {
        std::vector<double> s;
        s.reserve(p.size());
        s.insert(s.end(), p.logits.size(), static_cast<double>(height_) * width_ * cfg_.logit_rate_scale);
        s.insert(s.end(), p.gamma.gx.size() + p.gamma.gy.size(), cfg_.gamma_rate_scale);
        s.insert(s.end(), p.size() - s.size() - p.coupling.size(), cfg_.theta_rate_scale);
        s.insert(s.end(), p.coupling.size(), cfg_.coupling_rate_scale);
        return s;
    }

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int planes() const noexcept { return planes_; }
    [[nodiscard]] const std::vector<double>& focal_distances() const noexcept { return focal_; }
    [[nodiscard]] const DepthMap& ground_truth() const noexcept { return gt_; }
    [[nodiscard]] const SolverConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const IntegrabilityProjector& projector() const noexcept { return projector_; }

    static constexpr double kProbFloor = 1e-300;

private:
    static const SolverConfig& validated(const SolverConfig& c) {
        c.validate();
        return c;
    }

    SolverConfig cfg_;
    int height_, width_, planes_, surf_h_, surf_w_;
    std::vector<double> focal_;
    DepthMap gt_;
    IntegrabilityProjector projector_;
    BilinearResize up_;
    std::vector<double> target_;
    DepthGradient target_grad_;
    SharpnessWeights q_;
};

struct SolverResult {
    DepthMap depth;
    FocusProbabilityMap probabilities;
    SurfaceField surface;
    SolverTrace trace;
    SolverParams params;
};

/// RMSE of `pred` against `gt` over gt-valid pixels selected by `mask` (all when empty).
inline double masked_rmse(const DepthMap& pred, const DepthMap& gt, const std::vector<std::uint8_t>& mask = {}) {
    std::vector<double> sq;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt.valid(i) || (!mask.empty() && !mask[i])) continue;
        const double e = pred.values().data[i] - gt.values().data[i];
        sq.push_back(e * e);
    }
    if (sq.empty()) throw Error("no pixels selected for RMSE");
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(sq.size()));
}

/// Plain gradient descent on the scene objective. Deterministic for a seed.
inline SolverResult solve_scene(const FocalStack& stack, const DepthMap& gt, const SolverConfig& cfg) {
    const SceneObjective obj(stack, gt, cfg);
    SolverParams params = obj.initial_params();
    SolverResult result;

    auto record = [&](int step, const ObjectiveBreakdown& b, const FocusProbabilityMap& prob, const DepthMap& pred) {
        TraceRecord r;
        r.step = step;
        r.total = b.report.total;
        r.depth = b.report.depth_term;
        r.sv = b.report.sv_term;
        r.fv = b.report.fv_term;
        r.data = b.data;
        r.objective = b.objective;
        r.rmse = masked_rmse(pred, gt);
        r.invalid_trend_pct = invalid_focus_trend(prob);
        result.trace.records.push_back(r);
    };
    auto snapshot = [&](const SolverParams& p) {
        const SurfaceField s = obj.surface(p);
        FocusProbabilityMap prob = obj.probabilities(obj.logits(p, s));
        DepthMap pred = depth_from_probabilities(prob, obj.focal_distances());
        return std::make_tuple(std::move(prob), std::move(pred), s);
    };

    SolverParams grad;
    ObjectiveBreakdown current = obj.evaluate(params, &grad);
    const double initial = current.objective;
    {
        auto [prob, pred, s] = snapshot(params);
        record(0, current, prob, pred);
    }
    const std::vector<double> scale = obj.step_scales(params);
    std::vector<double> flat;
    flat.reserve(params.size());
    for (int step = 1; step <= cfg.steps; ++step) {
        flat.clear();
        grad.for_each([&](double& v) { flat.push_back(v); });
        std::size_t i = 0;
        params.for_each([&](double& v) {
            v -= cfg.learning_rate * scale[i] * flat[i];
            ++i;
        });

        current = obj.evaluate(params, &grad);
        if (!std::isfinite(current.objective) || current.objective > 10.0 * std::max(initial, 1e-12))
            throw DivergenceError("objective diverged at step " + std::to_string(step) + ": " +
                                  std::to_string(current.objective) + " vs initial " + std::to_string(initial));
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            auto [prob, pred, s] = snapshot(params);
            record(step, current, prob, pred);
        }
    }
    auto [prob, pred, s] = snapshot(params);
    result.depth = std::move(pred);
    result.probabilities = std::move(prob);
    result.surface = std::move(s);
    result.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------
// Ablations

enum class Variant { full, no_sv, no_fv, no_integrability, no_q, inverse_q };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_sv: return "no_sv";
        case Variant::no_fv: return "no_fv";
        case Variant::no_integrability: return "no_integrability";
        case Variant::no_q: return "no_q";
        case Variant::inverse_q: return "inverse_q";
    }
    return "?";
}

inline Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::full, Variant::no_sv, Variant::no_fv, Variant::no_integrability, Variant::no_q,
                      Variant::inverse_q})
        if (name == variant_name(v)) return v;
    throw Error("unknown ablation variant: " + name);
}

inline SolverConfig apply_variant(SolverConfig cfg, Variant v) {
    switch (v) {
        case Variant::full: break;
        case Variant::no_sv: cfg.lambda_sv = 0.0; break;
        case Variant::no_fv: cfg.lambda_fv = 0.0; break;
        case Variant::no_integrability: cfg.integrability = false; break;
        case Variant::no_q: cfg.weights = WeightMode::uniform; break;
        case Variant::inverse_q: cfg.weights = WeightMode::inverse; break;
    }
    return cfg;
}

struct AblationRow {
    std::string variant;
    MetricsReport metrics;
};

/// Solves the scene once per variant plus the full method (first row).
inline std::vector<AblationRow> ablate(const FocalStack& stack, const DepthMap& gt, const SolverConfig& cfg,
                                      const std::vector<Variant>& variants) {
    if (variants.empty()) throw Error("ablate needs at least one variant");
    std::vector<Variant> runs{Variant::full};
    for (Variant v : variants)
        if (v != Variant::full) runs.push_back(v);
    std::vector<AblationRow> rows;
    for (Variant v : runs) {
        const SolverResult r = solve_scene(stack, gt, apply_variant(cfg, v));
        MetricsReport m = evaluate(r.depth, gt);
        m.invalid_trend_pct = invalid_focus_trend(r.probabilities);
        rows.push_back({variant_name(v), m});
    }
    return rows;
}

}  // namespace dff
