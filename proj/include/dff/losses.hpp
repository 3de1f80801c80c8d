// Training objective terms with analytic gradients:
//   sharpness weights q, the spatial variational loss (with the 3x3 gradient
//   fusion map), the focal monotonicity loss, smooth-L1 depth loss and their
//   weighted total.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dff/core.hpp"
#include "dff/parallel.hpp"
#include "dff/random.hpp"
#include "dff/surface.hpp"

namespace dff {

/// Per-pixel distribution over planes, pixel-major q[(y*W + x)*N + n].
struct SharpnessWeights {
    int height = 0, width = 0, planes = 0;
    std::vector<double> q;

    [[nodiscard]] const double* pixel(std::size_t px) const noexcept { return q.data() + px * planes; }
};

/// q_n(x) = softmax_n(-|f_n - D*(x)|); invalid pixels get the uniform distribution.
inline SharpnessWeights sharpness_weights(const DepthMap& gt, const std::vector<double>& focal) {
    if (focal.size() < 2) throw Error("sharpness weights need at least two planes");
    gt.require_nonempty("sharpness_weights");
    SharpnessWeights w{gt.height(), gt.width(), static_cast<int>(focal.size()), {}};
    const int N = w.planes;
    w.q.resize(gt.size() * N);
    for (std::size_t px = 0; px < gt.size(); ++px) {
        double* q = w.q.data() + px * N;
        if (!gt.valid(px)) {
            std::fill(q, q + N, 1.0 / N);
            continue;
        }
        const double d = gt.values().data[px];
        double nearest = std::abs(focal[0] - d);
        for (int n = 1; n < N; ++n) nearest = std::min(nearest, std::abs(focal[n] - d));
        double s = 0.0;
        for (int n = 0; n < N; ++n) {
            q[n] = std::exp(-(std::abs(focal[n] - d) - nearest));
            s += q[n];
        }
        for (int n = 0; n < N; ++n) q[n] /= s;
    }
    return w;
}

/// Uniform weights (the "without q" ablation).
inline SharpnessWeights uniform_weights(const SharpnessWeights& like) {
    SharpnessWeights w = like;
    std::fill(w.q.begin(), w.q.end(), 1.0 / like.planes);
    return w;
}

/// (1 - q) renormalised per pixel (the "blurriness weight" ablation).
inline SharpnessWeights inverse_weights(const SharpnessWeights& q) {
    SharpnessWeights w = q;
    const int N = q.planes;
    for (std::size_t px = 0; px * N < w.q.size(); ++px) {
        double s = 0.0;
        for (int n = 0; n < N; ++n) s += (w.q[px * N + n] = 1.0 - q.q[px * N + n]);
        for (int n = 0; n < N; ++n) w.q[px * N + n] /= s;
    }
    return w;
}

/// 3x3 convolution (zero padding) fusing C channels into x/y gradient
/// predictions. weight(o, c, ky, kx) with o = 0 for x and 1 for y.
struct GradFusionMap {
    int channels = 0;
    std::vector<double> weights;  // 2 * C * 9
    double bias[2] = {0.0, 0.0};

    GradFusionMap() = default;
    explicit GradFusionMap(int c) : channels(c), weights(static_cast<std::size_t>(2) * c * 9, 0.0) {}

    /// Uniform in [-range, range], zero bias.
    static GradFusionMap random(int c, RandomStream& rng, double range = 0.1) {
        GradFusionMap m(c);
        for (auto& w : m.weights) w = rng.uniform(-range, range);
        return m;
    }

    double& weight(int o, int c, int ky, int kx) { return weights[((static_cast<std::size_t>(o) * channels + c) * 3 + ky) * 3 + kx]; }
    [[nodiscard]] double weight(int o, int c, int ky, int kx) const {
        return weights[((static_cast<std::size_t>(o) * channels + c) * 3 + ky) * 3 + kx];
    }

    /// out = bias_o + sum_c conv3x3(in[c], w_o,c). `in` holds C contiguous h*w slices.
    void forward(int o, const double* in, int h, int w, double* out) const {
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        std::fill(out, out + hw, bias[o]);
        for (int c = 0; c < channels; ++c) {
            const double* src = in + c * hw;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const double k = weight(o, c, ky, kx);
                    if (k == 0.0) continue;
                    const int dy = ky - 1, dx = kx - 1;
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y)
                        for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x)
                            out[static_cast<std::size_t>(y) * w + x] += k * src[static_cast<std::size_t>(y + dy) * w + x + dx];
                }
        }
    }

    /// Accumulates gradients w.r.t. the input slices and the parameters.
    void backward(int o, const double* in, int h, int w, const double* grad_out, double* grad_in,
                  GradFusionMap& grad_params) const {
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        double gb = 0.0;
        for (std::size_t i = 0; i < hw; ++i) gb += grad_out[i];
        grad_params.bias[o] += gb;
        for (int c = 0; c < channels; ++c) {
            const double* src = in + c * hw;
            double* gsrc = grad_in ? grad_in + c * hw : nullptr;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const double k = weight(o, c, ky, kx);
                    const int dy = ky - 1, dx = kx - 1;
                    double gk = 0.0;
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y)
                        for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
                            const std::size_t oi = static_cast<std::size_t>(y) * w + x;
                            const std::size_t ii = static_cast<std::size_t>(y + dy) * w + x + dx;
                            gk += grad_out[oi] * src[ii];
                            if (gsrc) gsrc[ii] += grad_out[oi] * k;
                        }
                    grad_params.weight(o, c, ky, kx) += gk;
                }
        }
    }
};

/// Forward differences of the ground truth with the DiffOperator stencil.
/// A component is supervised only when every pixel it touches is valid.
struct DepthGradient {
    int height = 0, width = 0;
    std::vector<double> gx, gy;
    std::vector<std::uint8_t> valid_x, valid_y;
};

inline DepthGradient depth_gradient(const DepthMap& gt) {
    const int H = gt.height(), W = gt.width();
    DepthGradient g{H, W, std::vector<double>(gt.size(), 0.0), std::vector<double>(gt.size(), 0.0),
                    std::vector<std::uint8_t>(gt.size(), 0), std::vector<std::uint8_t>(gt.size(), 0)};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (!gt.valid(i)) continue;
            if (x + 1 < W) {
                if (gt.valid(i + 1)) {
                    g.gx[i] = gt.values().data[i + 1] - gt.values().data[i];
                    g.valid_x[i] = 1;
                }
            } else {
                g.valid_x[i] = 1;
            }
            if (y + 1 < H) {
                if (gt.valid(i + W)) {
                    g.gy[i] = gt.values().data[i + W] - gt.values().data[i];
                    g.valid_y[i] = 1;
                }
            } else {
                g.valid_y[i] = 1;
            }
        }
    return g;
}

inline double sign0(double v) noexcept { return (v > 0.0) - (v < 0.0); }

struct SpatialLossResult {
    double value = 0.0;
    SurfaceField grad_input_x;  ///< d/d(input feeding the x output)
    SurfaceField grad_input_y;  ///< d/d(input feeding the y output)
    GradFusionMap grad_theta;

    /// Combined input gradient when both outputs read the same field.
    [[nodiscard]] SurfaceField grad_input() const {
        SurfaceField g = grad_input_x;
        for (std::size_t i = 0; i < g.z.size(); ++i) g.z[i] += grad_input_y.z[i];
        return g;
    }
};

/// sum_{x,n} q_n(x) * || grad D*(x) - theta(in_n)(x) ||_1, where the x output
/// reads `in_x` and the y output reads `in_y`. With in_x == in_y == z* this
/// is the spatial variational loss; passing the raw gradient components gives
/// direct supervision of the gradient field.
inline SpatialLossResult spatial_variational_loss(const SurfaceField& in_x, const SurfaceField& in_y,
                                                  const GradFusionMap& theta, const DepthGradient& target,
                                                  const SharpnessWeights& q) {
    const int H = in_x.height, W = in_x.width, C = in_x.channels, N = in_x.planes;
    if (in_y.height != H || in_y.width != W || in_y.channels != C || in_y.planes != N)
        throw Error("resolution mismatch between fusion inputs");
    if (target.height != H || target.width != W || q.height != H || q.width != W)
        throw Error("resolution mismatch: ground truth must be downsampled to the surface resolution");
    if (q.planes != N) throw Error("plane count mismatch");
    if (theta.channels != C) throw Error("fusion map channel mismatch");

    const std::size_t hw = static_cast<std::size_t>(H) * W;
    SpatialLossResult r{0.0, SurfaceField(H, W, C, N), SurfaceField(H, W, C, N), GradFusionMap(C)};
    std::vector<double> per_plane(N, 0.0);
    std::vector<GradFusionMap> plane_theta(N, GradFusionMap(C));
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t nn) {
        const int n = static_cast<int>(nn);
        std::vector<double> pred(hw), gout(hw), terms(hw, 0.0);
        for (int o = 0; o < 2; ++o) {
            const SurfaceField& in = o == 0 ? in_x : in_y;
            SurfaceField& gin = o == 0 ? r.grad_input_x : r.grad_input_y;
            const auto& tgt = o == 0 ? target.gx : target.gy;
            const auto& ok = o == 0 ? target.valid_x : target.valid_y;
            theta.forward(o, in.z.data() + in.offset(n, 0), H, W, pred.data());
            for (std::size_t i = 0; i < hw; ++i) {
                if (!ok[i]) {
                    gout[i] = 0.0;
                    continue;
                }
                const double qn = q.q[i * N + n];
                const double e = tgt[i] - pred[i];
                terms[i] += qn * std::abs(e);
                gout[i] = -qn * sign0(e);
            }
            theta.backward(o, in.z.data() + in.offset(n, 0), H, W, gout.data(), gin.z.data() + gin.offset(n, 0),
                           plane_theta[n]);
        }
        per_plane[n] = pairwise_sum(terms);
    });
    r.value = pairwise_sum(per_plane);
    for (int n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < r.grad_theta.weights.size(); ++i) r.grad_theta.weights[i] += plane_theta[n].weights[i];
        r.grad_theta.bias[0] += plane_theta[n].bias[0];
        r.grad_theta.bias[1] += plane_theta[n].bias[1];
    }
    return r;
}

inline SpatialLossResult spatial_variational_loss(const SurfaceField& z, const GradFusionMap& theta,
                                                  const DepthGradient& target, const SharpnessWeights& q) {
    return spatial_variational_loss(z, z, theta, target, q);
}

inline SpatialLossResult spatial_variational_loss(const SurfaceField& z, const GradFusionMap& theta,
                                                  const DepthMap& gt_low, const SharpnessWeights& q) {
    return spatial_variational_loss(z, z, theta, depth_gradient(gt_low), q);
}

struct FocalLossResult {
    double value = 0.0;
    std::vector<double> grad;  ///< pixel-major, same layout as the probabilities
};

/// Bidirectional monotonicity penalty for one pixel; adds its gradient into `g`.
inline double focal_variational_pixel(const double* p, int n, double* g) {
    const int k = first_argmax(p, n);
    double loss = 0.0;
    for (int i = 0; i < k; ++i) {  // rising side: penalise p_i > p_{i+1}
        const double v = p[i] - p[i + 1];
        if (v > 0.0) {
            loss += v * v;
            if (g) {
                g[i] += 2.0 * v;
                g[i + 1] -= 2.0 * v;
            }
        }
    }
    for (int i = k; i < n - 1; ++i) {  // falling side: penalise p_{i+1} > p_i
        const double v = p[i + 1] - p[i];
        if (v > 0.0) {
            loss += v * v;
            if (g) {
                g[i + 1] += 2.0 * v;
                g[i] -= 2.0 * v;
            }
        }
    }
    return loss;
}

/// Sum over pixels of the per-pixel monotonicity penalty. The peak index is
/// held fixed when differentiating.
inline FocalLossResult focal_variational_loss(const FocusProbabilityMap& p) {
    FocalLossResult r;
    const int N = p.planes();
    r.grad.assign(p.data().size(), 0.0);
    std::vector<double> per_pixel(p.pixel_count());
    for (std::size_t px = 0; px < p.pixel_count(); ++px)
        per_pixel[px] = focal_variational_pixel(p.pixel(px), N, r.grad.data() + px * N);
    r.value = pairwise_sum(per_pixel);
    return r;
}

inline double smooth_l1(double e, double beta) noexcept {
    const double a = std::abs(e);
    return a < beta ? 0.5 * e * e / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double e, double beta) noexcept {
    return std::abs(e) < beta ? e / beta : sign0(e);
}

struct DepthLossResult {
    double value = 0.0;
    Grid grad;  ///< d/d(pred)
};

/// Smooth-L1 averaged over ground-truth-valid pixels.
inline DepthLossResult depth_loss(const DepthMap& pred, const DepthMap& gt, double beta = 1.0) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) throw Error("dimension mismatch in depth loss");
    if (!(beta > 0.0)) throw Error("smooth-L1 beta must be positive");
    gt.require_nonempty("depth_loss");
    const double inv = 1.0 / static_cast<double>(gt.valid_count());
    DepthLossResult r{0.0, Grid(gt.height(), gt.width())};
    std::vector<double> terms(gt.size(), 0.0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt.valid(i)) continue;
        const double e = pred.values().data[i] - gt.values().data[i];
        terms[i] = smooth_l1(e, beta);
        r.grad.data[i] = smooth_l1_grad(e, beta) * inv;
    }
    r.value = pairwise_sum(terms) * inv;
    return r;
}

struct LossReport {
    double total = 0.0;
    double depth_term = 0.0, sv_term = 0.0, fv_term = 0.0;
    double lambda_sv = 20.0, lambda_fv = 100.0;
};

inline constexpr double kDefaultLambdaSv = 20.0;
inline constexpr double kDefaultLambdaFv = 100.0;

inline LossReport total_loss(double depth_term, double sv_term, double fv_term, double lambda_sv = kDefaultLambdaSv,
                             double lambda_fv = kDefaultLambdaFv) {
    return {depth_term + lambda_sv * sv_term + lambda_fv * fv_term, depth_term, sv_term, fv_term, lambda_sv, lambda_fv};
}

}  // namespace dff
