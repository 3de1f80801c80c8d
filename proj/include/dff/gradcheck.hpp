// Central finite-difference checks of every analytic gradient used by the
// solver: the spatial and focal variational losses, the depth loss, the
// projection adjoint and the full scene objective.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dff/fusion.hpp"
#include "dff/losses.hpp"
#include "dff/random.hpp"
#include "dff/scenes.hpp"
#include "dff/solver.hpp"
#include "dff/surface.hpp"

namespace dff {

struct GradCheckOptions {
    double step = 1e-5;
    int coordinates = 50;
    /// Relative error denominator floor, so near-zero gradients compare absolutely.
    double denominator_floor = 1e-6;
    /// A coordinate is a kink (L1 corner, argmax switch) when the one-sided
    /// slopes differ by more than this fraction of their magnitude.
    double kink_tolerance = 1e-3;
    double kink_slack = 1e-9;
    int max_attempts_factor = 40;
};

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Generic checker: `f` evaluates the scalar at the current contents of `x`,
/// `analytic` is the gradient at the unperturbed point.
inline GradCheckResult check_gradient(const std::string& name, std::vector<double>& x,
                                      const std::vector<double>& analytic, const std::function<double()>& f,
                                      RandomStream& rng, const GradCheckOptions& opt = {}) {
    if (x.size() != analytic.size()) throw Error("gradient size mismatch in " + name);
    if (x.empty()) throw Error("nothing to check in " + name);
    GradCheckResult r{name};
    const double h = opt.step;
    const double f0 = f();
    const int attempts = opt.coordinates * opt.max_attempts_factor;
    for (int a = 0; a < attempts && r.checked < opt.coordinates; ++a) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x.size()) - 1));
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f();
        x[i] = xi - h;
        const double fm = f();
        x[i] = xi;
        const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
        if (std::abs(fwd - bwd) > opt.kink_tolerance * (std::abs(fwd) + std::abs(bwd)) + opt.kink_slack) {
            ++r.skipped;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i], numeric, opt.denominator_floor));
        ++r.checked;
    }
    if (r.checked < opt.coordinates) throw Error(name + ": too many kinks, only " + std::to_string(r.checked) + " coordinates checked");
    return r;
}

namespace detail {

inline std::vector<double> random_vector(std::size_t n, RandomStream& rng, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline DepthMap random_depth(int h, int w, RandomStream& rng, double lo, double hi) {
    Grid g(h, w);
    for (auto& v : g.data) v = rng.uniform(lo, hi);
    return DepthMap::from_values(std::move(g));
}

}  // namespace detail

/// L_sv with respect to the surface field and the fusion-map parameters.
inline GradCheckResult gradcheck_spatial(std::uint64_t seed, const GradCheckOptions& opt = {}) {
    auto rng = RandomStream::named(seed, "gradcheck-sv");
    const int H = 7, W = 6, C = 3, N = 4;
    const std::vector<double> focal{1.0, 1.5, 2.0, 2.5};
    const DepthMap gt = detail::random_depth(H, W, rng, 1.0, 2.5);
    const DepthGradient target = depth_gradient(gt);
    const SharpnessWeights q = sharpness_weights(gt, focal);
    SurfaceField z(H, W, C, N);
    z.z = detail::random_vector(z.z.size(), rng, -1.0, 1.0);
    GradFusionMap theta = GradFusionMap::random(C, rng, 0.5);
    theta.bias[0] = rng.uniform(-0.1, 0.1);
    theta.bias[1] = rng.uniform(-0.1, 0.1);

    const std::size_t nz = z.z.size(), nw = theta.weights.size();
    std::vector<double> x(nz + nw + 2);
    std::copy(z.z.begin(), z.z.end(), x.begin());
    std::copy(theta.weights.begin(), theta.weights.end(), x.begin() + static_cast<std::ptrdiff_t>(nz));
    x[nz + nw] = theta.bias[0];
    x[nz + nw + 1] = theta.bias[1];

    auto unpack = [&](SurfaceField& zz, GradFusionMap& tt) {
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nz), zz.z.begin());
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(nz), x.begin() + static_cast<std::ptrdiff_t>(nz + nw),
                  tt.weights.begin());
        tt.bias[0] = x[nz + nw];
        tt.bias[1] = x[nz + nw + 1];
    };
    const SpatialLossResult r = spatial_variational_loss(z, z, theta, target, q);
    std::vector<double> analytic(x.size());
    const SurfaceField gz = r.grad_input();
    std::copy(gz.z.begin(), gz.z.end(), analytic.begin());
    std::copy(r.grad_theta.weights.begin(), r.grad_theta.weights.end(), analytic.begin() + static_cast<std::ptrdiff_t>(nz));
    analytic[nz + nw] = r.grad_theta.bias[0];
    analytic[nz + nw + 1] = r.grad_theta.bias[1];

    SurfaceField zz = z;
    GradFusionMap tt = theta;
    return check_gradient("L_sv", x, analytic, [&] {
        unpack(zz, tt);
        return spatial_variational_loss(zz, zz, tt, target, q).value;
    }, rng, opt);
}

/// L_fv composed with the softmax, with respect to the logits.
inline GradCheckResult gradcheck_focal(std::uint64_t seed, const GradCheckOptions& opt = {}) {
    auto rng = RandomStream::named(seed, "gradcheck-fv");
    const int H = 6, W = 5, N = 5;
    std::vector<double> x = detail::random_vector(static_cast<std::size_t>(H) * W * N, rng, -2.0, 2.0);
    auto value = [&](std::vector<double>* grad) {
        FocusLogits l(H, W, N);
        l.logits = x;
        const FocusProbabilityMap p = to_probabilities(l);
        const FocalLossResult fl = focal_variational_loss(p);
        if (grad) {
            grad->assign(x.size(), 0.0);
            for (std::size_t px = 0; px < p.pixel_count(); ++px)
                softmax_backward(p.pixel(px), fl.grad.data() + px * N, grad->data() + px * N, N);
        }
        return fl.value;
    };
    std::vector<double> analytic;
    value(&analytic);
    return check_gradient("L_fv", x, analytic, [&] { return value(nullptr); }, rng, opt);
}

/// Smooth-L1 depth loss with respect to the prediction.
inline GradCheckResult gradcheck_depth(std::uint64_t seed, const GradCheckOptions& opt = {}) {
    auto rng = RandomStream::named(seed, "gradcheck-depth");
    const int H = 8, W = 8;
    const DepthMap gt = detail::random_depth(H, W, rng, 1.0, 3.0);
    Grid pred(H, W);
    for (auto& v : pred.data) v = rng.uniform(0.5, 4.0);
    std::vector<double> x = pred.data;
    const DepthLossResult r = depth_loss(DepthMap::from_values(pred), gt);
    return check_gradient("L_depth", x, r.grad.data, [&] {
        Grid g(H, W);
        g.data = x;
        return depth_loss(DepthMap::from_values(std::move(g)), gt).value;
    }, rng, opt);
}

/// Adjoint of the integrability projection: f(gamma) = <w, project(gamma)>.
inline GradCheckResult gradcheck_projection(std::uint64_t seed, const GradCheckOptions& opt = {},
                                            SolverBackend backend = SolverBackend::automatic, double lambda_reg = 0.0) {
    auto rng = RandomStream::named(seed, "gradcheck-projection");
    const int H = 6, W = 7, C = 2, N = 3;
    const IntegrabilityProjector proj(H, W, ProjectionOptions{lambda_reg, backend});
    GradientField gamma(H, W, C, N);
    gamma.gx = detail::random_vector(gamma.gx.size(), rng, -1.0, 1.0);
    gamma.gy = detail::random_vector(gamma.gy.size(), rng, -1.0, 1.0);
    SurfaceField w(H, W, C, N);
    w.z = detail::random_vector(w.z.size(), rng, -1.0, 1.0);

    const GradientField g = proj.backward(w);
    std::vector<double> analytic = g.gx;
    analytic.insert(analytic.end(), g.gy.begin(), g.gy.end());
    std::vector<double> x = gamma.gx;
    x.insert(x.end(), gamma.gy.begin(), gamma.gy.end());
    const std::size_t half = gamma.gx.size();
    return check_gradient("projection", x, analytic, [&] {
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(half), gamma.gx.begin());
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(half), x.end(), gamma.gy.begin());
        const SurfaceField z = proj.project(gamma);
        double s = 0.0;
        for (std::size_t i = 0; i < z.z.size(); ++i) s += w.z[i] * z.z[i];
        return s;
    }, rng, opt);
}

/// Full solver objective on a small synthetic scene, at the initial point and
/// after `warm_steps` solver iterations.
inline GradCheckResult gradcheck_objective(std::uint64_t seed, int warm_steps, const GradCheckOptions& opt = {},
                                           bool integrability = true) {
    auto rng = RandomStream::named(seed, "gradcheck-objective");
    SceneConfig sc;
    sc.height = 16;
    sc.width = 16;
    const SyntheticScene scene = two_layer_scene(sc, seed, 0.25);
    SolverConfig cfg;
    cfg.seed = seed;
    cfg.surface_res = 6;
    cfg.channels = 3;
    cfg.steps = warm_steps;
    cfg.integrability = integrability;
    const SceneObjective obj(scene.stack, scene.depth, cfg);
    SolverParams p = solve_scene(scene.stack, scene.depth, cfg).params;
    SolverParams g;
    obj.evaluate(p, &g);
    std::vector<double> x, analytic;
    p.for_each([&](double& v) { x.push_back(v); });
    g.for_each([&](double& v) { analytic.push_back(v); });
    SolverParams probe = p;
    const std::string name = std::string("objective") + (integrability ? "" : "_direct") + "@" + std::to_string(warm_steps);
    return check_gradient(name, x, analytic, [&] {
        std::size_t i = 0;
        probe.for_each([&](double& v) { v = x[i++]; });
        return obj.evaluate(probe).objective;
    }, rng, opt);
}

/// The loss-level suite reported by the CLI and the acceptance test.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
    return {gradcheck_spatial(seed, opt), gradcheck_focal(seed, opt), gradcheck_depth(seed, opt),
            gradcheck_projection(seed, opt)};
}

}  // namespace dff
