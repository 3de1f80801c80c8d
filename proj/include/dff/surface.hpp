// Forward-difference operator P and the least-squares integrability
// projection  z* = argmin ||P z - gamma||^2 (+ lambda ||z||^2), gauge-fixed to
// zero mean, with its adjoint for back-propagation.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "dff/core.hpp"
#include "dff/parallel.hpp"

namespace dff {

/// P in {-1,0,1}^{2HW x HW}. Rows [0, HW) hold x-derivatives, rows [HW, 2HW)
/// y-derivatives; forward differences, all-zero rows at the last column / row.
class DiffOperator {
public:
    DiffOperator(int height, int width) : height_(height), width_(width) {
        if (height < 2 || width < 2) throw Error("difference operator needs H, W >= 2");
    }

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] std::size_t cols() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    [[nodiscard]] std::size_t rows() const noexcept { return 2 * cols(); }

    /// out = P z
    void apply(std::span<const double> z, std::span<double> out) const {
        const std::size_t n = cols();
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
                out[i] = x + 1 < width_ ? z[i + 1] - z[i] : 0.0;
                out[n + i] = y + 1 < height_ ? z[i + width_] - z[i] : 0.0;
            }
    }

    /// out = P^T g
    void apply_transpose(std::span<const double> g, std::span<double> out) const {
        const std::size_t n = cols();
        std::fill(out.begin(), out.end(), 0.0);
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
                if (x + 1 < width_) {
                    out[i + 1] += g[i];
                    out[i] -= g[i];
                }
                if (y + 1 < height_) {
                    out[i + width_] += g[n + i];
                    out[i] -= g[n + i];
                }
            }
    }

    /// out = (P^T P + lambda I) z, i.e. the grid graph Laplacian plus a shift.
    void apply_normal(std::span<const double> z, std::span<double> out, double lambda) const {
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
                double acc = lambda * z[i];
                if (x > 0) acc += z[i] - z[i - 1];
                if (x + 1 < width_) acc += z[i] - z[i + 1];
                if (y > 0) acc += z[i] - z[i - width_];
                if (y + 1 < height_) acc += z[i] - z[i + width_];
                out[i] = acc;
            }
    }

    /// Diagonal of P^T P (number of grid neighbours).
    [[nodiscard]] double degree(std::size_t i) const noexcept {
        const int y = static_cast<int>(i / width_), x = static_cast<int>(i % width_);
        return (x > 0) + (x + 1 < width_) + (y > 0) + (y + 1 < height_);
    }

    [[nodiscard]] Eigen::MatrixXd dense() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
        std::vector<double> e(cols(), 0.0), col(rows());
        for (std::size_t j = 0; j < cols(); ++j) {
            e[j] = 1.0;
            apply(e, col);
            for (std::size_t i = 0; i < rows(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
            e[j] = 0.0;
        }
        return m;
    }

private:
    int height_, width_;
};

/// Per-plane, per-channel x/y gradient components, each slice H*W row-major.
/// Slice (n, c) lives at offset (n * channels + c) * H * W.
struct GradientField {
    int height = 0, width = 0, channels = 0, planes = 0;
    std::vector<double> gx, gy;

    GradientField() = default;
    GradientField(int h, int w, int c, int n)
        : height(h), width(w), channels(c), planes(n),
          gx(static_cast<std::size_t>(h) * w * c * n, 0.0), gy(gx.size(), 0.0) {}

    [[nodiscard]] std::size_t slice_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    [[nodiscard]] std::size_t offset(int n, int c) const noexcept {
        return (static_cast<std::size_t>(n) * channels + c) * slice_size();
    }
    std::span<double> x(int n, int c) { return {gx.data() + offset(n, c), slice_size()}; }
    std::span<double> y(int n, int c) { return {gy.data() + offset(n, c), slice_size()}; }
    [[nodiscard]] std::span<const double> x(int n, int c) const { return {gx.data() + offset(n, c), slice_size()}; }
    [[nodiscard]] std::span<const double> y(int n, int c) const { return {gy.data() + offset(n, c), slice_size()}; }

    /// Stacked 2HW vector [gx; gy] for one slice.
    [[nodiscard]] std::vector<double> stacked(int n, int c) const {
        std::vector<double> v(2 * slice_size());
        std::copy(x(n, c).begin(), x(n, c).end(), v.begin());
        std::copy(y(n, c).begin(), y(n, c).end(), v.begin() + static_cast<std::ptrdiff_t>(slice_size()));
        return v;
    }
    void set_stacked(int n, int c, std::span<const double> v) {
        std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(slice_size()), x(n, c).begin());
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(slice_size()), v.end(), y(n, c).begin());
    }
};

/// Per-plane, per-channel scalar surfaces; same slice layout as GradientField.
struct SurfaceField {
    int height = 0, width = 0, channels = 0, planes = 0;
    std::vector<double> z;

    SurfaceField() = default;
    SurfaceField(int h, int w, int c, int n)
        : height(h), width(w), channels(c), planes(n), z(static_cast<std::size_t>(h) * w * c * n, 0.0) {}

    [[nodiscard]] std::size_t slice_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    [[nodiscard]] std::size_t offset(int n, int c) const noexcept {
        return (static_cast<std::size_t>(n) * channels + c) * slice_size();
    }
    std::span<double> slice(int n, int c) { return {z.data() + offset(n, c), slice_size()}; }
    [[nodiscard]] std::span<const double> slice(int n, int c) const { return {z.data() + offset(n, c), slice_size()}; }
};

enum class SolverBackend { automatic, dense, conjugate_gradient };

struct ProjectionOptions {
    /// Tikhonov weight. Zero gives the minimum-norm (pseudoinverse) solution.
    double lambda_reg = 0.0;
    SolverBackend backend = SolverBackend::automatic;
    /// Grids with more unknowns than this use CG under `automatic`.
    std::size_t dense_limit = 32 * 32;
    double cg_tolerance = 1e-13;
};

inline void subtract_mean(std::span<double> v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double& x : v) x -= m;
}

/// Solves the regularised normal equations of P for a fixed grid. The dense
/// factorisation (when used) is computed once and shared by all slices.
class IntegrabilityProjector {
public:
    IntegrabilityProjector(int height, int width, ProjectionOptions opt = {})
        : op_(height, width), opt_(opt) {
        if (!(opt_.lambda_reg >= 0.0) || !std::isfinite(opt_.lambda_reg))
            throw Error("lambda_reg must be finite and non-negative");
        use_dense_ = opt_.backend == SolverBackend::dense ||
                     (opt_.backend == SolverBackend::automatic && op_.cols() <= opt_.dense_limit);
        if (use_dense_) factorize();
    }

    [[nodiscard]] const DiffOperator& op() const noexcept { return op_; }
    [[nodiscard]] const ProjectionOptions& options() const noexcept { return opt_; }
    [[nodiscard]] bool uses_dense() const noexcept { return use_dense_; }

    /// Zero-mean solution of (P^T P + lambda I) z = rhs after projecting rhs
    /// onto the zero-mean subspace.
    void solve(std::span<const double> rhs, std::span<double> z) const {
        std::vector<double> b(rhs.begin(), rhs.end());
        subtract_mean(b);
        if (use_dense_) {
            Eigen::Map<const Eigen::VectorXd> bv(b.data(), static_cast<Eigen::Index>(b.size()));
            Eigen::Map<Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
            zv = llt_->solve(bv);
        } else {
            conjugate_gradient(b, z);
        }
        subtract_mean(z);
    }

    /// z = argmin ||P z - gamma||^2 + lambda ||z||^2, mean removed.
    void project_slice(std::span<const double> gamma, std::span<double> z) const {
        std::vector<double> rhs(op_.cols());
        op_.apply_transpose(gamma, rhs);
        solve(rhs, z);
    }

    /// Vector-Jacobian product of project_slice: d/dgamma given d/dz.
    void backward_slice(std::span<const double> grad_z, std::span<double> grad_gamma) const {
        std::vector<double> w(op_.cols());
        solve(grad_z, w);
        op_.apply(w, grad_gamma);
    }

    [[nodiscard]] SurfaceField project(const GradientField& gamma) const {
        check_shape(gamma.height, gamma.width);
        for (double v : gamma.gx)
            if (!std::isfinite(v)) throw Error("non-finite gradient field");
        for (double v : gamma.gy)
            if (!std::isfinite(v)) throw Error("non-finite gradient field");
        SurfaceField out(gamma.height, gamma.width, gamma.channels, gamma.planes);
        if (use_dense_) {
            const std::size_t n = op_.cols(), slices = static_cast<std::size_t>(gamma.planes) * gamma.channels;
            Eigen::MatrixXd rhs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(slices));
            std::vector<double> col(n);
            for (std::size_t k = 0; k < slices; ++k) {
                const int pn = static_cast<int>(k) / gamma.channels, pc = static_cast<int>(k) % gamma.channels;
                op_.apply_transpose(gamma.stacked(pn, pc), col);
                subtract_mean(col);
                std::copy(col.begin(), col.end(), rhs.col(static_cast<Eigen::Index>(k)).data());
            }
            solve_dense_columns(rhs, out.z.data());
            return out;
        }
        parallel_for(static_cast<std::size_t>(gamma.planes) * gamma.channels, [&](std::size_t k) {
            const int n = static_cast<int>(k) / gamma.channels, c = static_cast<int>(k) % gamma.channels;
            project_slice(gamma.stacked(n, c), out.slice(n, c));
        });
        return out;
    }

    [[nodiscard]] GradientField backward(const SurfaceField& grad_z) const {
        check_shape(grad_z.height, grad_z.width);
        GradientField out(grad_z.height, grad_z.width, grad_z.channels, grad_z.planes);
        if (use_dense_) {
            const std::size_t n = op_.cols(), slices = static_cast<std::size_t>(grad_z.planes) * grad_z.channels;
            Eigen::MatrixXd rhs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(slices));
            for (std::size_t k = 0; k < slices; ++k) {
                std::copy(grad_z.z.begin() + static_cast<std::ptrdiff_t>(k * n),
                          grad_z.z.begin() + static_cast<std::ptrdiff_t>((k + 1) * n), rhs.col(static_cast<Eigen::Index>(k)).data());
                subtract_mean({rhs.col(static_cast<Eigen::Index>(k)).data(), n});
            }
            std::vector<double> w(n * slices);
            solve_dense_columns(rhs, w.data());
            std::vector<double> g(2 * n);
            for (std::size_t k = 0; k < slices; ++k) {
                op_.apply(std::span<const double>(w.data() + k * n, n), g);
                out.set_stacked(static_cast<int>(k) / grad_z.channels, static_cast<int>(k) % grad_z.channels, g);
            }
            return out;
        }
        parallel_for(static_cast<std::size_t>(grad_z.planes) * grad_z.channels, [&](std::size_t k) {
            const int n = static_cast<int>(k) / grad_z.channels, c = static_cast<int>(k) % grad_z.channels;
            std::vector<double> g(2 * out.slice_size());
            backward_slice(grad_z.slice(n, c), g);
            out.set_stacked(n, c, g);
        });
        return out;
    }

private:
    /// Solves every column of `rhs` (already zero-mean) and writes the
    /// mean-free solutions contiguously to `out`.
    void solve_dense_columns(const Eigen::MatrixXd& rhs, double* out) const {
        const Eigen::MatrixXd sol = llt_->solve(rhs);
        const auto n = static_cast<std::size_t>(rhs.rows());
        for (Eigen::Index k = 0; k < sol.cols(); ++k) {
            std::span<double> dst(out + static_cast<std::size_t>(k) * n, n);
            std::copy(sol.col(k).data(), sol.col(k).data() + n, dst.begin());
            subtract_mean(dst);
        }
    }

    void check_shape(int h, int w) const {
        if (h != op_.height() || w != op_.width()) throw Error("field resolution does not match the projector");
    }

    void factorize() {
        const auto n = static_cast<Eigen::Index>(op_.cols());
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        std::vector<double> e(op_.cols(), 0.0), col(op_.cols());
        for (Eigen::Index j = 0; j < n; ++j) {
            e[j] = 1.0;
            op_.apply_normal(e, col, opt_.lambda_reg);
            for (Eigen::Index i = 0; i < n; ++i) a(i, j) = col[i];
            e[j] = 0.0;
        }
        // Without Tikhonov the constant mode is the only null direction; pin
        // it with the rank-one projector onto constants.
        if (opt_.lambda_reg == 0.0) a.array() += 1.0 / static_cast<double>(n);
        llt_ = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(a);
        if (llt_->info() != Eigen::Success) throw Error("normal matrix factorisation failed");
    }

    /// Jacobi-preconditioned CG on the zero-mean subspace.
    void conjugate_gradient(const std::vector<double>& b, std::span<double> z) const {
        const std::size_t n = op_.cols();
        std::vector<double> r(b), p(n), ap(n), s(n), inv_diag(n);
        for (std::size_t i = 0; i < n; ++i) inv_diag[i] = 1.0 / (op_.degree(i) + opt_.lambda_reg);
        std::fill(z.begin(), z.end(), 0.0);
        auto dot = [](const std::vector<double>& a, const std::vector<double>& c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * c[i];
            return acc;
        };
        auto precondition = [&](const std::vector<double>& in, std::vector<double>& out) {
            for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * inv_diag[i];
            subtract_mean(out);
        };
        const double bnorm = std::sqrt(dot(b, b));
        if (bnorm == 0.0) return;
        precondition(r, s);
        p = s;
        double rs = dot(r, s);
        const std::size_t max_iter = 20 * n + 100;
        for (std::size_t it = 0; it < max_iter; ++it) {
            op_.apply_normal(p, ap, opt_.lambda_reg);
            const double pap = dot(p, ap);
            if (!(pap > 0.0)) break;
            const double alpha = rs / pap;
            for (std::size_t i = 0; i < n; ++i) {
                z[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if (std::sqrt(dot(r, r)) <= opt_.cg_tolerance * bnorm) break;
            precondition(r, s);
            const double rs_new = dot(r, s);
            const double beta = rs_new / rs;
            rs = rs_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = s[i] + beta * p[i];
        }
    }

    DiffOperator op_;
    ProjectionOptions opt_;
    bool use_dense_ = false;
    std::shared_ptr<Eigen::LLT<Eigen::MatrixXd>> llt_;
};

inline SurfaceField integrability_project(const GradientField& gamma, ProjectionOptions opt = {}) {
    return IntegrabilityProjector(gamma.height, gamma.width, opt).project(gamma);
}

/// Applies P to every slice of a surface field.
inline GradientField grad_of_surface(const SurfaceField& z) {
    const DiffOperator op(z.height, z.width);
    GradientField out(z.height, z.width, z.channels, z.planes);
    std::vector<double> g(op.rows());
    for (int n = 0; n < z.planes; ++n)
        for (int c = 0; c < z.channels; ++c) {
            op.apply(z.slice(n, c), g);
            out.set_stacked(n, c, g);
        }
    return out;
}

}  // namespace dff
