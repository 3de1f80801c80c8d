// Core domain types shared by every dff module: grids, images, focal stacks,
// depth maps, focus probability maps and stack manifests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dff {

/// Raised when an input violates a documented precondition or invariant.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for arguments outside the domain of a formula (e.g. a singular CoC).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Raised when an iterative procedure blows up.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major 2-D grid of doubles.
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
        if (h < 0 || w < 0) throw Error("grid dimensions must be non-negative");
    }

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] bool empty() const noexcept { return data.empty(); }
    [[nodiscard]] std::size_t index(int y, int x) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }

    double& operator()(int y, int x) noexcept { return data[index(y, x)]; }
    double operator()(int y, int x) const noexcept { return data[index(y, x)]; }

    /// Replicate-padded read.
    [[nodiscard]] double clamped(int y, int x) const noexcept {
        y = std::clamp(y, 0, height - 1);
        x = std::clamp(x, 0, width - 1);
        return data[index(y, x)];
    }

    [[nodiscard]] bool same_shape(const Grid& o) const noexcept {
        return height == o.height && width == o.width;
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Image with one (gray) or three (RGB) channel grids.
struct Image {
    std::vector<Grid> channels;

    Image() = default;
    explicit Image(std::vector<Grid> ch) : channels(std::move(ch)) {
        if (channels.empty()) throw Error("image needs at least one channel");
        for (const auto& c : channels)
            if (!c.same_shape(channels.front())) throw Error("image channels differ in shape");
    }
    static Image gray(Grid g) { return Image(std::vector<Grid>{std::move(g)}); }

    [[nodiscard]] int height() const noexcept { return channels.empty() ? 0 : channels.front().height; }
    [[nodiscard]] int width() const noexcept { return channels.empty() ? 0 : channels.front().width; }
    [[nodiscard]] int channel_count() const noexcept { return static_cast<int>(channels.size()); }

    /// Grayscale conversion with Rec.601 luma weights for RGB.
    [[nodiscard]] Grid luma() const {
        if (channels.size() == 1) return channels.front();
        if (channels.size() != 3) throw Error("luma needs a 1- or 3-channel image");
        Grid out(height(), width());
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data[i] = 0.299 * channels[0].data[i] + 0.587 * channels[1].data[i] +
                          0.114 * channels[2].data[i];
        return out;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

inline bool strictly_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return true;
}

/// Ordered images with their focal distances (meters).
class FocalStack {
public:
    FocalStack(std::vector<Image> planes, std::vector<double> focal_distances)
        : planes_(std::move(planes)), focal_(std::move(focal_distances)) {
        if (planes_.size() != focal_.size()) throw Error("count mismatch between planes and focal distances");
        if (planes_.size() < 2) throw Error("a focal stack needs at least two planes");
        if (!strictly_increasing(focal_)) throw Error("non-increasing focal distances");
        for (double f : focal_)
            if (!std::isfinite(f) || f <= 0.0) throw Error("focal distances must be finite and positive");
        const Image& ref = planes_.front();
        for (const auto& p : planes_) {
            if (p.height() != ref.height() || p.width() != ref.width() ||
                p.channel_count() != ref.channel_count())
                throw Error("dimension mismatch between focal planes");
            for (const auto& c : p.channels)
                for (double v : c.data)
                    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw Error("pixel value outside [0,1]");
        }
    }

    [[nodiscard]] int size() const noexcept { return static_cast<int>(planes_.size()); }
    [[nodiscard]] int height() const noexcept { return planes_.front().height(); }
    [[nodiscard]] int width() const noexcept { return planes_.front().width(); }
    [[nodiscard]] int channel_count() const noexcept { return planes_.front().channel_count(); }
    [[nodiscard]] const std::vector<Image>& planes() const noexcept { return planes_; }
    [[nodiscard]] const Image& plane(int n) const { return planes_.at(static_cast<std::size_t>(n)); }
    [[nodiscard]] const std::vector<double>& focal_distances() const noexcept { return focal_; }

private:
    std::vector<Image> planes_;
    std::vector<double> focal_;
};

inline bool valid_depth_value(double v) noexcept { return std::isfinite(v) && v > 0.0; }

/// Depth grid in meters with a validity mask (1 = valid).
class DepthMap {
public:
    DepthMap() = default;
    DepthMap(Grid values, std::vector<std::uint8_t> mask) : values_(std::move(values)), mask_(std::move(mask)) {
        if (mask_.size() != values_.size()) throw Error("depth mask size mismatch");
        for (std::size_t i = 0; i < mask_.size(); ++i)
            if (mask_[i] && !valid_depth_value(values_.data[i]))
                throw Error("masked-valid depth must be finite and positive");
    }

    /// Mask derived from the values: non-finite or non-positive entries are invalid.
    static DepthMap from_values(Grid values) {
        std::vector<std::uint8_t> mask(values.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = valid_depth_value(values.data[i]) ? 1 : 0;
        return DepthMap(std::move(values), std::move(mask));
    }

    static DepthMap constant(int h, int w, double v) { return from_values(Grid(h, w, v)); }

    [[nodiscard]] int height() const noexcept { return values_.height; }
    [[nodiscard]] int width() const noexcept { return values_.width; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] const Grid& values() const noexcept { return values_; }
    [[nodiscard]] const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
    [[nodiscard]] bool valid(std::size_t i) const noexcept { return mask_[i] != 0; }
    [[nodiscard]] bool valid(int y, int x) const noexcept { return mask_[values_.index(y, x)] != 0; }
    [[nodiscard]] double operator()(int y, int x) const noexcept { return values_(y, x); }

    [[nodiscard]] std::size_t valid_count() const noexcept {
        return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
    }

    /// Intersects the mask with value validity. Idempotent.
    [[nodiscard]] DepthMap revalidated() const {
        auto m = mask_;
        for (std::size_t i = 0; i < m.size(); ++i)
            m[i] = (m[i] && valid_depth_value(values_.data[i])) ? 1 : 0;
        return DepthMap(values_, std::move(m));
    }

    void require_nonempty(const char* what) const {
        if (valid_count() == 0) throw Error(std::string(what) + ": depth map has no valid pixels");
    }

    friend bool operator==(const DepthMap&, const DepthMap&) = default;

private:
    Grid values_;
    std::vector<std::uint8_t> mask_;
};

/// Per-pixel distribution over focal planes, stored pixel-major: probs[(y*W + x)*N + n].
class FocusProbabilityMap {
public:
    FocusProbabilityMap() = default;
    FocusProbabilityMap(int h, int w, int n, std::vector<double> probs)
        : height_(h), width_(w), planes_(n), probs_(std::move(probs)) {
        if (h <= 0 || w <= 0 || n <= 0) throw Error("probability map dimensions must be positive");
        if (probs_.size() != static_cast<std::size_t>(h) * w * n) throw Error("probability map size mismatch");
        for (std::size_t px = 0; px < pixel_count(); ++px) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) {
                double p = probs_[px * n + k];
                if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw Error("probability outside [0,1]");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-6) throw Error("probabilities do not sum to one");
        }
    }

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int planes() const noexcept { return planes_; }
    [[nodiscard]] std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
    }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return probs_; }
    [[nodiscard]] const double* pixel(std::size_t px) const noexcept { return probs_.data() + px * planes_; }
    [[nodiscard]] double at(int y, int x, int n) const noexcept {
        return probs_[(static_cast<std::size_t>(y) * width_ + x) * planes_ + n];
    }

private:
    int height_ = 0, width_ = 0, planes_ = 0;
    std::vector<double> probs_;
};

/// Index of the largest entry, lowest index on ties.
inline int first_argmax(const double* v, int n) noexcept {
    int k = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[k]) k = i;
    return k;
}

/// File-level description of one scene's focal stack.
struct StackManifest {
    std::vector<std::string> image_paths;
    std::vector<double> focal_distances;
    std::optional<std::string> depth_path;
    std::string scene_id;

    void validate() const {
        if (image_paths.size() != focal_distances.size())
            throw Error("count mismatch between image paths and focal distances");
        if (image_paths.size() < 2) throw Error("a manifest needs at least two images");
        if (!strictly_increasing(focal_distances)) throw Error("non-increasing focal distances");
    }
};

}  // namespace dff
