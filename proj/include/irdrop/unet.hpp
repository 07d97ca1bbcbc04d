#pragma once

// Two-level U-Net for pixel-wise regression:
//
//   enc1 -> pool -> enc2 -> pool -> bottleneck -> up -> [.., enc2] -> dec2
//        -> up -> [.., enc1] -> dec1 -> 1x1 head
//
// Every block is two 3x3 convolutions (padding 1) each followed by ReLU.
// Pooling is 2x2 max, upsampling is 2x nearest neighbour, skips are channel
// concatenations (upsampled features first). The head is linear.
//
// Forward and backward are written out by hand; convolutions are lowered to
// im2col + GEMM.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"

namespace irdrop::unet {

struct Widths {
  std::size_t enc1 = 16;
  std::size_t enc2 = 32;
  std::size_t bottleneck = 64;

  friend bool operator==(const Widths&, const Widths&) = default;
};

inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kLayerCount = 11;

enum Layer : std::size_t {
  kEnc1a, kEnc1b, kEnc2a, kEnc2b, kBottleA, kBottleB, kDec2a, kDec2b, kDec1a, kDec1b, kHead
};

inline constexpr std::array<const char*, kLayerCount> kLayerNames = {
    "enc1.0", "enc1.1", "enc2.0", "enc2.1", "bottleneck.0", "bottleneck.1",
    "dec2.0", "dec2.1", "dec1.0", "dec1.1", "head"};

struct ConvSpec {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;  // 3 for block convolutions, 1 for the head

  std::size_t padding() const noexcept { return kernel / 2; }
  std::size_t fan_in() const noexcept { return in_channels * kernel * kernel; }
  std::size_t weight_count() const noexcept { return out_channels * fan_in(); }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline std::array<ConvSpec, kLayerCount> layer_specs(const Widths& w) {
  return {{
      {kInputChannels, w.enc1, 3}, {w.enc1, w.enc1, 3},
      {w.enc1, w.enc2, 3}, {w.enc2, w.enc2, 3},
      {w.enc2, w.bottleneck, 3}, {w.bottleneck, w.bottleneck, 3},
      {w.bottleneck + w.enc2, w.enc2, 3}, {w.enc2, w.enc2, 3},
      {w.enc2 + w.enc1, w.enc1, 3}, {w.enc1, w.enc1, 3},
      {w.enc1, 1, 1},
  }};
}

// Weights are laid out (out, in, ky, kx).
template <typename T>
struct ConvLayer {
  ConvSpec spec{};
  std::vector<T> weight;
  std::vector<T> bias;

  explicit ConvLayer(ConvSpec s = {1, 1, 1})
      : spec(s), weight(s.weight_count(), T(0)), bias(s.out_channels, T(0)) {}

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
struct UNetParams {
  Widths widths;
  std::array<ConvLayer<T>, kLayerCount> layers;

  UNetParams() : UNetParams(Widths{}) {}
  explicit UNetParams(const Widths& w) : widths(w) {
    const auto specs = layer_specs(w);
    for (std::size_t i = 0; i < kLayerCount; ++i) layers[i] = ConvLayer<T>(specs[i]);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Visits every parameter array as (name, values).
  template <typename F>
  void for_each_array(F&& f) {
    for (std::size_t i = 0; i < kLayerCount; ++i) {
      f(std::string(kLayerNames[i]) + ".weight", std::span<T>(layers[i].weight));
      f(std::string(kLayerNames[i]) + ".bias", std::span<T>(layers[i].bias));
    }
  }
  template <typename F>
  void for_each_array(F&& f) const {
    for (std::size_t i = 0; i < kLayerCount; ++i) {
      f(std::string(kLayerNames[i]) + ".weight", std::span<const T>(layers[i].weight));
      f(std::string(kLayerNames[i]) + ".bias", std::span<const T>(layers[i].bias));
    }
  }

  void set_zero() {
    for (auto& l : layers) {
      std::fill(l.weight.begin(), l.weight.end(), T(0));
      std::fill(l.bias.begin(), l.bias.end(), T(0));
    }
  }

  friend bool operator==(const UNetParams&, const UNetParams&) = default;
};

template <typename To, typename From>
UNetParams<To> cast_params(const UNetParams<From>& p) {
  UNetParams<To> out(p.widths);
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    std::transform(p.layers[i].weight.begin(), p.layers[i].weight.end(), out.layers[i].weight.begin(),
                   [](From v) { return static_cast<To>(v); });
    std::transform(p.layers[i].bias.begin(), p.layers[i].bias.end(), out.layers[i].bias.begin(),
                   [](From v) { return static_cast<To>(v); });
  }
  return out;
}

// He initialization: N(0, sqrt(2 / fan_in)) weights, zero biases.
template <typename T>
void he_init(std::mt19937_64& rng, ConvLayer<T>& layer) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.spec.fan_in())));
  for (T& w : layer.weight) w = static_cast<T>(dist(rng));
  std::fill(layer.bias.begin(), layer.bias.end(), T(0));
}

template <typename T>
UNetParams<T> he_init(std::mt19937_64& rng, const Widths& widths = {}) {
  UNetParams<T> p(widths);
  for (auto& l : p.layers) he_init(rng, l);
  return p;
}

// C x H x W activation buffer in the network's working precision.
template <typename T>
struct Activation {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> values;

  Activation() = default;
  Activation(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), values(c * h * w) {}

  std::size_t plane() const noexcept { return height * width; }
};

namespace ops {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

// Column matrix (in * k * k) x (h * w) for a same-size convolution.
template <typename T>
void im2col(const Activation<T>& in, std::size_t k, std::vector<T>& col) {
  const std::size_t h = in.height, w = in.width, hw = in.plane();
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  col.resize(in.channels * k * k * hw);
  T* dst = col.data();
  for (std::size_t c = 0; c < in.channels; ++c) {
    const T* src = in.values.data() + c * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          T* row = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            row[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : srow[sx];
          }
        }
        dst += hw;
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the image.
template <typename T>
void col2im(const std::vector<T>& col, std::size_t k, Activation<T>& out) {
  const std::size_t h = out.height, w = out.width, hw = out.plane();
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  std::fill(out.values.begin(), out.values.end(), T(0));
  const T* src = col.data();
  for (std::size_t c = 0; c < out.channels; ++c) {
    T* dst = out.values.data() + c * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* row = src + y * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) drow[sx] += row[x];
          }
        }
        src += hw;
      }
    }
  }
}

// Same-size cross-correlation with zero padding, bias per output channel.
template <typename T>
Activation<T> conv2d(const Activation<T>& in, const ConvLayer<T>& layer) {
  const ConvSpec& s = layer.spec;
  if (in.channels != s.in_channels) {
    detail::fail(ErrorKind::kShape, "conv2d expects " + std::to_string(s.in_channels) + " input channels, got " +
                                        std::to_string(in.channels));
  }
  Activation<T> out(s.out_channels, in.height, in.width);
  const std::size_t hw = in.plane();
  ConstMapMat<T> weight(layer.weight.data(), static_cast<Eigen::Index>(s.out_channels),
                        static_cast<Eigen::Index>(s.fan_in()));
  MapMat<T> result(out.values.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(hw));
  if (s.kernel == 1) {
    ConstMapMat<T> x(in.values.data(), static_cast<Eigen::Index>(in.channels), static_cast<Eigen::Index>(hw));
    result.noalias() = weight * x;
  } else {
    auto& col = scratch<T>();
    im2col(in, s.kernel, col);
    ConstMapMat<T> x(col.data(), static_cast<Eigen::Index>(s.fan_in()), static_cast<Eigen::Index>(hw));
    result.noalias() = weight * x;
  }
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    T* row = out.values.data() + o * hw;
    const T b = layer.bias[o];
    for (std::size_t i = 0; i < hw; ++i) row[i] += b;
  }
  return out;
}

// Accumulates weight/bias gradients into `grad` and, when `grad_in` is
// non-null, writes the input gradient.
template <typename T>
void conv2d_backward(const Activation<T>& in, const ConvLayer<T>& layer, const Activation<T>& grad_out,
                     ConvLayer<T>& grad, Activation<T>* grad_in) {
  const ConvSpec& s = layer.spec;
  const std::size_t hw = in.plane();
  const auto rows = static_cast<Eigen::Index>(s.out_channels);
  const auto cols = static_cast<Eigen::Index>(hw);
  const auto fan = static_cast<Eigen::Index>(s.fan_in());
  ConstMapMat<T> g(grad_out.values.data(), rows, cols);
  MapMat<T> dw(grad.weight.data(), rows, fan);
  ConstMapMat<T> weight(layer.weight.data(), rows, fan);

  for (std::size_t o = 0; o < s.out_channels; ++o) {
    const T* row = grad_out.values.data() + o * hw;
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += row[i];
    grad.bias[o] += acc;
  }

  if (s.kernel == 1) {
    ConstMapMat<T> x(in.values.data(), fan, cols);
    dw.noalias() += g * x.transpose();
    if (grad_in) {
      *grad_in = Activation<T>(in.channels, in.height, in.width);
      MapMat<T> dx(grad_in->values.data(), fan, cols);
      dx.noalias() = weight.transpose() * g;
    }
    return;
  }

  auto& col = scratch<T>();
  im2col(in, s.kernel, col);
  {
    ConstMapMat<T> x(col.data(), fan, cols);
    dw.noalias() += g * x.transpose();
  }
  if (grad_in) {
    MapMat<T> dcol(col.data(), fan, cols);
    dcol.noalias() = weight.transpose() * g;
    *grad_in = Activation<T>(in.channels, in.height, in.width);
    col2im(col, s.kernel, *grad_in);
  }
}

template <typename T>
Activation<T> relu(const Activation<T>& pre) {
  Activation<T> out = pre;
  for (T& v : out.values) v = v > T(0) ? v : T(0);
  return out;
}

// Gradient passes where the cached pre-activation was strictly positive.
template <typename T>
void relu_backward(const Activation<T>& pre, Activation<T>& grad) {
  for (std::size_t i = 0; i < grad.values.size(); ++i) {
    if (!(pre.values[i] > T(0))) grad.values[i] = T(0);
  }
}

// 2x2 stride-2 max pooling; `argmax` records the winning input index of
// each output (first maximum in row-major window order).
template <typename T>
Activation<T> maxpool2(const Activation<T>& in, std::vector<std::size_t>& argmax) {
  Activation<T> out(in.channels, in.height / 2, in.width / 2);
  argmax.resize(out.values.size());
  std::size_t o = 0;
  for (std::size_t c = 0; c < in.channels; ++c) {
    const std::size_t base = c * in.plane();
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x, ++o) {
        std::size_t best = base + (2 * y) * in.width + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * in.width + 2 * x + dx;
            if (in.values[idx] > in.values[best]) best = idx;
          }
        }
        argmax[o] = best;
        out.values[o] = in.values[best];
      }
    }
  }
  return out;
}

template <typename T>
void maxpool2_backward(const Activation<T>& grad_out, const std::vector<std::size_t>& argmax,
                       Activation<T>& grad_in) {
  for (std::size_t o = 0; o < grad_out.values.size(); ++o) grad_in.values[argmax[o]] += grad_out.values[o];
}

template <typename T>
Activation<T> upsample2(const Activation<T>& in) {
  Activation<T> out(in.channels, in.height * 2, in.width * 2);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      const T* src = in.values.data() + c * in.plane() + (y / 2) * in.width;
      T* dst = out.values.data() + c * out.plane() + y * out.width;
      for (std::size_t x = 0; x < out.width; ++x) dst[x] = src[x / 2];
    }
  }
  return out;
}

// Sums each 2x2 replication block.
template <typename T>
Activation<T> upsample2_backward(const Activation<T>& grad_out) {
  Activation<T> grad(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (std::size_t c = 0; c < grad_out.channels; ++c) {
    for (std::size_t y = 0; y < grad_out.height; ++y) {
      const T* src = grad_out.values.data() + c * grad_out.plane() + y * grad_out.width;
      T* dst = grad.values.data() + c * grad.plane() + (y / 2) * grad.width;
      for (std::size_t x = 0; x < grad_out.width; ++x) dst[x / 2] += src[x];
    }
  }
  return grad;
}

template <typename T>
Activation<T> concat(const Activation<T>& a, const Activation<T>& b) {
  Activation<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.values.begin(), a.values.end(), out.values.begin());
  std::copy(b.values.begin(), b.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
  return out;
}

template <typename T>
void split(const Activation<T>& joined, std::size_t first_channels, Activation<T>& a, Activation<T>& b) {
  const std::size_t n = first_channels * joined.plane();
  a = Activation<T>(first_channels, joined.height, joined.width);
  b = Activation<T>(joined.channels - first_channels, joined.height, joined.width);
  std::copy(joined.values.begin(), joined.values.begin() + static_cast<std::ptrdiff_t>(n), a.values.begin());
  std::copy(joined.values.begin() + static_cast<std::ptrdiff_t>(n), joined.values.end(), b.values.begin());
}

}  // namespace ops

template <typename T>
Activation<T> to_activation(const Tensor3& x) {
  Activation<T> a(x.channels(), x.height(), x.width());
  std::transform(x.values().begin(), x.values().end(), a.values.begin(), [](double v) { return static_cast<T>(v); });
  return a;
}

template <typename T>
Tensor3 to_tensor(const Activation<T>& a) {
  std::vector<double> v(a.values.begin(), a.values.end());
  return Tensor3(a.channels, a.height, a.width, std::move(v));
}

// Everything backward() needs from the matching forward() call.
template <typename T>
struct ActivationCache {
  Widths widths;
  std::array<Activation<T>, kLayerCount> layer_input;  // what each conv consumed
  std::array<Activation<T>, kLayerCount> pre_activation;  // each conv's raw output
  std::vector<std::size_t> pool1_argmax;
  std::vector<std::size_t> pool2_argmax;
  std::size_t pool1_in_size = 0;
  std::size_t pool2_in_size = 0;
};

template <typename T>
struct ForwardResult {
  Activation<T> output;
  ActivationCache<T> cache;
};

inline void check_input_shape(std::size_t channels, std::size_t height, std::size_t width) {
  if (channels != kInputChannels) {
    detail::fail(ErrorKind::kShape, "network input must have 3 channels, got " + std::to_string(channels));
  }
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    detail::fail(ErrorKind::kShape, "network input height and width must be positive multiples of 4, got " +
                                        std::to_string(height) + "x" + std::to_string(width));
  }
}

template <typename T>
ForwardResult<T> forward(const UNetParams<T>& params, Activation<T> x) {
  using namespace ops;
  check_input_shape(x.channels, x.height, x.width);
  ForwardResult<T> res;
  ActivationCache<T>& cache = res.cache;
  cache.widths = params.widths;

  auto layer = [&](Layer id, Activation<T> in, bool activate) {
    cache.pre_activation[id] = conv2d(in, params.layers[id]);
    cache.layer_input[id] = std::move(in);
    return activate ? relu(cache.pre_activation[id]) : cache.pre_activation[id];
  };

  Activation<T> e1 = layer(kEnc1b, layer(kEnc1a, std::move(x), true), true);
  cache.pool1_in_size = e1.values.size();
  Activation<T> p1 = maxpool2(e1, cache.pool1_argmax);
  Activation<T> e2 = layer(kEnc2b, layer(kEnc2a, std::move(p1), true), true);
  cache.pool2_in_size = e2.values.size();
  Activation<T> p2 = maxpool2(e2, cache.pool2_argmax);
  Activation<T> b = layer(kBottleB, layer(kBottleA, std::move(p2), true), true);
  Activation<T> d2 = layer(kDec2b, layer(kDec2a, concat(upsample2(b), e2), true), true);
  Activation<T> d1 = layer(kDec1b, layer(kDec1a, concat(upsample2(d2), e1), true), true);
  res.output = layer(kHead, std::move(d1), false);
  return res;
}

template <typename T>
ForwardResult<T> forward(const UNetParams<T>& params, const Tensor3& x) {
  check_input_shape(x.channels(), x.height(), x.width());
  return forward(params, to_activation<T>(x));
}

template <typename T>
struct BackwardResult {
  UNetParams<T> grads;
  Activation<T> grad_input;
};

// Accumulates parameter gradients of <grad_y, y> into `grads`. The input
// gradient is produced only when `grad_input` is non-null.
template <typename T>
void backward_accumulate(const UNetParams<T>& params, const ActivationCache<T>& cache,
                         const Activation<T>& grad_y, UNetParams<T>& grads,
                         std::type_identity_t<Activation<T>>* grad_input) {
  using namespace ops;
  if (!(cache.widths == params.widths) || !(grads.widths == params.widths) ||
      cache.pre_activation[kHead].values.size() != grad_y.values.size() ||
      cache.layer_input[kEnc1a].values.empty()) {
    detail::fail(ErrorKind::kInvalidState, "activation cache does not match the parameters or output gradient");
  }
  const Widths& w = params.widths;

  // Back through conv `id`; `g` is the gradient w.r.t. its (post-ReLU when
  // `activated`) output.
  auto layer_back = [&](Layer id, Activation<T> g, bool activated, bool need_input_grad) {
    if (activated) relu_backward(cache.pre_activation[id], g);
    Activation<T> gin;
    conv2d_backward(cache.layer_input[id], params.layers[id], g, grads.layers[id],
                    need_input_grad ? &gin : nullptr);
    return gin;
  };

  Activation<T> g = layer_back(kHead, grad_y, false, true);
  g = layer_back(kDec1b, std::move(g), true, true);
  g = layer_back(kDec1a, std::move(g), true, true);
  Activation<T> g_up1, g_skip1;
  split(g, w.enc2, g_up1, g_skip1);

  g = upsample2_backward(g_up1);
  g = layer_back(kDec2b, std::move(g), true, true);
  g = layer_back(kDec2a, std::move(g), true, true);
  Activation<T> g_up2, g_skip2;
  split(g, w.bottleneck, g_up2, g_skip2);

  g = upsample2_backward(g_up2);
  g = layer_back(kBottleB, std::move(g), true, true);
  g = layer_back(kBottleA, std::move(g), true, true);

  Activation<T> g_e2 = std::move(g_skip2);
  maxpool2_backward(g, cache.pool2_argmax, g_e2);
  g = layer_back(kEnc2b, std::move(g_e2), true, true);
  g = layer_back(kEnc2a, std::move(g), true, true);

  Activation<T> g_e1 = std::move(g_skip1);
  maxpool2_backward(g, cache.pool1_argmax, g_e1);
  g = layer_back(kEnc1b, std::move(g_e1), true, true);
  g = layer_back(kEnc1a, std::move(g), true, grad_input != nullptr);
  if (grad_input) *grad_input = std::move(g);
}

template <typename T>
BackwardResult<T> backward(const UNetParams<T>& params, const ActivationCache<T>& cache,
                           const Activation<T>& grad_y) {
  BackwardResult<T> res{UNetParams<T>(params.widths), {}};
  backward_accumulate(params, cache, grad_y, res.grads, &res.grad_input);
  return res;
}

// Inference convenience: (3, H, W) in, (H, W) map out.
template <typename T>
Grid2D predict_map(const UNetParams<T>& params, const Tensor3& x) {
  const auto res = forward(params, x);
  const Activation<T>& y = res.output;
  return Grid2D(y.height, y.width, std::vector<double>(y.values.begin(), y.values.end()));
}

}  // namespace irdrop::unet
