#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "irdrop/error.hpp"

namespace irdrop {

// Dense row-major H x W map of finite doubles. Every input feature map,
// label and prediction in the pipeline is carried by this type.
class Grid2D {
 public:
  Grid2D() = default;

  Grid2D(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), values_(height * width, fill) {}

  Grid2D(std::size_t height, std::size_t width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height_ * width_) {
      detail::fail(ErrorKind::kShape,
                   "grid of " + std::to_string(height_) + "x" + std::to_string(width_) +
                       " given " + std::to_string(values_.size()) + " values");
    }
    for (double v : values_) {
      if (!std::isfinite(v)) detail::fail(ErrorKind::kInvalidInput, "non-finite grid value");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const Grid2D& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

// Row-major C x H x W stack of channels. The network consumes (3, H, W)
// and produces (1, H, W).
class Tensor3 {
 public:
  Tensor3() = default;

  Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        values_(channels * height * width, fill) {}

  Tensor3(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> values)
      : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != channels_ * height_ * width_) {
      detail::fail(ErrorKind::kShape, "tensor value count does not match its shape");
    }
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t plane() const noexcept { return height_ * width_; }

  double& operator()(std::size_t c, std::size_t row, std::size_t col) {
    return values_[(c * height_ + row) * width_ + col];
  }
  double operator()(std::size_t c, std::size_t row, std::size_t col) const {
    return values_[(c * height_ + row) * width_ + col];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  Grid2D channel(std::size_t c) const {
    detail::require(c < channels_, ErrorKind::kShape, "channel index out of range");
    auto first = values_.begin() + static_cast<std::ptrdiff_t>(c * plane());
    return Grid2D(height_, width_, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plane())));
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

// Min-max rescale into [0, 1]. A constant map carries no spatial
// information and maps to all zeros.
inline Grid2D normalize_minmax(const Grid2D& g) {
  detail::require(!g.empty(), ErrorKind::kInvalidInput, "cannot normalize an empty grid");
  for (double v : g.values()) {
    if (!std::isfinite(v)) detail::fail(ErrorKind::kInvalidInput, "non-finite value in grid");
  }
  const double lo = g.min();
  const double hi = g.max();
  Grid2D out(g.height(), g.width(), 0.0);
  if (hi > lo) {
    const double span = hi - lo;
    auto src = g.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - lo) / span;
  }
  return out;
}

// Truncated, normalized 1-D Gaussian with radius ceil(3 sigma). Index
// `radius` is the center tap.
inline std::vector<double> gaussian_kernel(double sigma) {
  detail::require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::kInvalidParameter,
                  "gaussian sigma must be positive and finite");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& w : k) w /= total;
  return k;
}

namespace detail {

// Half-sample symmetric reflection (edge pixel repeated): ... b a | a b c ... c | c b ...
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

}  // namespace detail

// Separable Gaussian blur with reflect padding. sigma == 0 is the identity.
inline Grid2D gaussian_smooth(const Grid2D& g, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    detail::fail(ErrorKind::kInvalidParameter, "gaussian sigma must be nonnegative");
  }
  if (sigma == 0.0 || g.empty()) return g;

  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t h = g.height();
  const std::size_t w = g.width();

  Grid2D tmp(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const auto cc = detail::reflect_index(static_cast<std::ptrdiff_t>(c) + k, w);
        acc += kernel[static_cast<std::size_t>(k + radius)] * g(r, cc);
      }
      tmp(r, c) = acc;
    }
  }
  Grid2D out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const auto rr = detail::reflect_index(static_cast<std::ptrdiff_t>(r) + k, h);
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(rr, c);
      }
      out(r, c) = acc;
    }
  }
  return out;
}

// Channel order is fixed: (power grid, cell density, switching activity).
inline Tensor3 stack_channels(const Grid2D& power_grid, const Grid2D& cell_density,
                              const Grid2D& switching) {
  if (!power_grid.same_shape(cell_density) || !power_grid.same_shape(switching)) {
    detail::fail(ErrorKind::kShape, "input maps must share height and width");
  }
  const std::size_t plane = power_grid.size();
  std::vector<double> values(3 * plane);
  std::copy(power_grid.values().begin(), power_grid.values().end(), values.begin());
  std::copy(cell_density.values().begin(), cell_density.values().end(),
            values.begin() + static_cast<std::ptrdiff_t>(plane));
  std::copy(switching.values().begin(), switching.values().end(),
            values.begin() + static_cast<std::ptrdiff_t>(2 * plane));
  return Tensor3(3, power_grid.height(), power_grid.width(), std::move(values));
}

// Model input: each map min-max normalized, then stacked in channel order.
inline Tensor3 preprocess_maps(const Grid2D& power_grid, const Grid2D& cell_density, const Grid2D& switching) {
  return stack_channels(normalize_minmax(power_grid), normalize_minmax(cell_density), normalize_minmax(switching));
}

}  // namespace irdrop
