#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "llambda/error.hpp"

namespace llambda {

/// Row-major grayscale raster of doubles. No size floor; Frame adds one.
class Image {
public:
    Image() = default;
    Image(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), pixels_(width * height, fill) {}
    Image(std::size_t width, std::size_t height, std::vector<double> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (pixels_.size() != width_ * height_) {
            throw ConfigError("image pixel count does not match width*height");
        }
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    double& at(std::size_t x, std::size_t y) { return pixels_[y * width_ + x]; }
    double at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }

    std::span<double> pixels() noexcept { return pixels_; }
    std::span<const double> pixels() const noexcept { return pixels_; }

    bool same_shape(const Image& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> pixels_;
};

/// Axis-aligned region in continuous pixel coordinates; pixel (i, j) covers
/// [i, i+1) x [j, j+1).
struct Region {
    double x0 = 0.0;
    double y0 = 0.0;
    double width = 0.0;
    double height = 0.0;
};

/// Bilinear sample at continuous coordinates measured between pixel centers
/// (pixel k has its center at k). Coordinates clamp to the border.
inline double sample_bilinear(const Image& img, double x, double y) {
    const double max_x = static_cast<double>(img.width() - 1);
    const double max_y = static_cast<double>(img.height() - 1);
    x = std::clamp(x, 0.0, max_x);
    y = std::clamp(y, 0.0, max_y);
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
    const double bottom = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
    return top * (1.0 - fy) + bottom * fy;
}

/// Resamples `region` of `img` onto an out_width x out_height grid.
inline Image resample_region(const Image& img, const Region& region, std::size_t out_width,
                             std::size_t out_height) {
    if (img.empty() || out_width == 0 || out_height == 0) {
        throw ConfigError("resample_region: empty source or target");
    }
    Image out(out_width, out_height);
    const double sx = region.width / static_cast<double>(out_width);
    const double sy = region.height / static_cast<double>(out_height);
    for (std::size_t j = 0; j < out_height; ++j) {
        const double y = region.y0 + (static_cast<double>(j) + 0.5) * sy - 0.5;
        for (std::size_t i = 0; i < out_width; ++i) {
            const double x = region.x0 + (static_cast<double>(i) + 0.5) * sx - 0.5;
            out.at(i, j) = sample_bilinear(img, x, y);
        }
    }
    return out;
}

inline Image resize(const Image& img, std::size_t out_width, std::size_t out_height) {
    return resample_region(
        img, Region{0.0, 0.0, static_cast<double>(img.width()), static_cast<double>(img.height())},
        out_width, out_height);
}

inline Image hflip(const Image& img) {
    Image out(img.width(), img.height());
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) {
            out.at(img.width() - 1 - x, y) = img.at(x, y);
        }
    }
    return out;
}

} // namespace llambda
