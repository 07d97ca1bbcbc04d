#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "irdrop/unet.hpp"
#include "support.hpp"

using irdrop::ErrorKind;
using irdrop::Tensor3;
using irdrop::testing::kind_of;
namespace unet = irdrop::unet;
using unet::Activation;
using unet::UNetParams;

namespace {

const unet::Widths kTiny{4, 4, 4};

Activation<double> random_activation(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Activation<double> a(c, h, w);
  for (double& v : a.values) v = dist(rng);
  return a;
}

// Small random biases keep ReLUs away from exact zeros.
UNetParams<double> random_params(std::mt19937_64& rng, const unet::Widths& w) {
  auto p = unet::he_init<double>(rng, w);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (auto& l : p.layers) {
    for (double& b : l.bias) b = dist(rng);
  }
  return p;
}

double inner(const Activation<double>& a, const Activation<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

}  // namespace

TEST(LayerSpecs, ChannelArithmetic) {
  const auto s = unet::layer_specs(unet::Widths{});
  EXPECT_EQ(s[unet::kEnc1a].in_channels, 3u);
  EXPECT_EQ(s[unet::kEnc1b].out_channels, 16u);
  EXPECT_EQ(s[unet::kEnc2a].in_channels, 16u);
  EXPECT_EQ(s[unet::kBottleA].in_channels, 32u);
  EXPECT_EQ(s[unet::kBottleB].out_channels, 64u);
  EXPECT_EQ(s[unet::kDec2a].in_channels, 96u);
  EXPECT_EQ(s[unet::kDec2b].out_channels, 32u);
  EXPECT_EQ(s[unet::kDec1a].in_channels, 48u);
  EXPECT_EQ(s[unet::kDec1b].out_channels, 16u);
  EXPECT_EQ(s[unet::kHead].in_channels, 16u);
  EXPECT_EQ(s[unet::kHead].out_channels, 1u);
  EXPECT_EQ(s[unet::kHead].kernel, 1u);
  EXPECT_EQ(UNetParams<float>().parameter_count(), 118273u);
}

TEST(HeInit, StandardDeviationMatchesFanIn) {
  unet::ConvLayer<double> layer(unet::ConvSpec{3, 3704, 3});
  ASSERT_GE(layer.weight.size(), 100000u);
  std::mt19937_64 rng(42);
  unet::he_init(rng, layer);
  double sum = 0.0, sq = 0.0;
  for (double w : layer.weight) {
    sum += w;
    sq += w * w;
  }
  const double n = static_cast<double>(layer.weight.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, std::sqrt(2.0 / 27.0), 0.05 * std::sqrt(2.0 / 27.0));
  for (double b : layer.bias) EXPECT_EQ(b, 0.0);
}

TEST(HeInit, SeedDeterminesParametersBitwise) {
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(unet::he_init<float>(a), unet::he_init<float>(b));
}

TEST(Conv2d, CenterTapIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_activation(rng, 1, 6, 5);
  unet::ConvLayer<double> layer(unet::ConvSpec{1, 1, 3});
  layer.weight[4] = 1.0;
  EXPECT_EQ(unet::ops::conv2d(x, layer).values, x.values);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(2);
  unet::ConvLayer<double> layer(unet::ConvSpec{2, 3, 3});
  layer.bias = {0.5, -1.0, 2.0};
  const auto y = unet::ops::conv2d(random_activation(rng, 2, 4, 4), layer);
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y.values[o * 16 + i], layer.bias[o]);
  }
}

TEST(Conv2d, OnesKernelCountsOverlap) {
  Activation<double> x(1, 3, 3);
  std::fill(x.values.begin(), x.values.end(), 1.0);
  unet::ConvLayer<double> layer(unet::ConvSpec{1, 1, 3});
  std::fill(layer.weight.begin(), layer.weight.end(), 1.0);
  const auto y = unet::ops::conv2d(x, layer);
  EXPECT_EQ(y.values, (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, ChannelMismatchIsShapeError) {
  unet::ConvLayer<double> layer(unet::ConvSpec{3, 1, 3});
  EXPECT_EQ(kind_of([&] { unet::ops::conv2d(Activation<double>(2, 4, 4), layer); }), ErrorKind::kShape);
}

TEST(Pooling, ArgmaxTakesFirstMaximumAndRoutesGradient) {
  Activation<double> x(1, 2, 4);
  x.values = {1, 3, 5, 5, 3, 2, 5, 0};
  std::vector<std::size_t> argmax;
  const auto y = unet::ops::maxpool2(x, argmax);
  EXPECT_EQ(y.values, (std::vector<double>{3, 5}));
  EXPECT_EQ(argmax, (std::vector<std::size_t>{1, 2}));
  Activation<double> g(1, 1, 2);
  g.values = {10, 20};
  Activation<double> gin(1, 2, 4);
  unet::ops::maxpool2_backward(g, argmax, gin);
  EXPECT_EQ(gin.values, (std::vector<double>{0, 10, 20, 0, 0, 0, 0, 0}));
}

TEST(Upsample, BackwardSumsEachBlock) {
  Activation<double> x(1, 1, 2);
  x.values = {1, 2};
  const auto up = unet::ops::upsample2(x);
  EXPECT_EQ(up.values, (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
  Activation<double> g(1, 2, 4);
  g.values = {1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_EQ(unet::ops::upsample2_backward(g).values, (std::vector<double>{14, 22}));
}

TEST(Forward, ShapeContract) {
  std::mt19937_64 rng(3);
  const auto p = unet::he_init<float>(rng);
  const auto y = unet::forward(p, Tensor3(3, 64, 64, 0.5)).output;
  EXPECT_EQ(y.channels, 1u);
  EXPECT_EQ(y.height, 64u);
  EXPECT_EQ(y.width, 64u);
  const auto y2 = unet::forward(p, Tensor3(3, 16, 40, 0.5)).output;
  EXPECT_EQ(y2.height, 16u);
  EXPECT_EQ(y2.width, 40u);
}

TEST(Forward, RejectsBadInputShape) {
  const UNetParams<float> p;
  EXPECT_EQ(kind_of([&] { unet::forward(p, Tensor3(3, 62, 64)); }), ErrorKind::kShape);
  EXPECT_EQ(kind_of([&] { unet::forward(p, Tensor3(2, 64, 64)); }), ErrorKind::kShape);
}

TEST(Forward, ZeroNetworkGivesZeros) {
  const UNetParams<double> p;
  std::mt19937_64 rng(4);
  const auto y = unet::forward(p, random_activation(rng, 3, 64, 64)).output;
  for (double v : y.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, DeterministicBitwise) {
  std::mt19937_64 a(5), b(5), in(6);
  const auto pa = unet::he_init<float>(a);
  const auto pb = unet::he_init<float>(b);
  Tensor3 x(3, 64, 64);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (double& v : x.values()) v = d(in);
  EXPECT_EQ(unet::forward(pa, x).output.values, unet::forward(pb, x).output.values);
}

TEST(Forward, FloatTracksDouble) {
  std::mt19937_64 rng(7);
  const auto pd = random_params(rng, unet::Widths{});
  const auto pf = unet::cast_params<float>(pd);
  const auto x = random_activation(rng, 3, 32, 32);
  Activation<float> xf(3, 32, 32);
  std::copy(x.values.begin(), x.values.end(), xf.values.begin());
  const auto yd = unet::forward(pd, x).output;
  const auto yf = unet::forward(pf, xf).output;
  for (std::size_t i = 0; i < yd.values.size(); ++i) EXPECT_NEAR(yf.values[i], yd.values[i], 1e-4);
}

// Two 2x poolings make the network co-variant only under shifts that are
// multiples of 4; the receptive field (about 26 px) sets the margin.
TEST(Forward, TranslationCovariance) {
  std::mt19937_64 rng(8);
  const auto p = random_params(rng, unet::Widths{});
  const std::size_t n = 96, shift = 4, margin = 32;
  const auto x = random_activation(rng, 3, n, n);
  auto xs = random_activation(rng, 3, n, n);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = shift; r < n; ++r) {
      for (std::size_t col = shift; col < n; ++col) {
        xs.values[(c * n + r) * n + col] = x.values[(c * n + r - shift) * n + col - shift];
      }
    }
  }
  const auto y = unet::forward(p, x).output;
  const auto ys = unet::forward(p, xs).output;
  for (std::size_t r = margin; r + margin < n; ++r) {
    for (std::size_t c = margin; c + margin < n; ++c) {
      EXPECT_NEAR(ys.values[(r + shift) * n + c + shift], y.values[r * n + c], 1e-6);
    }
  }
}

TEST(Backward, ZeroOutputGradientGivesZeroGradients) {
  std::mt19937_64 rng(9);
  const auto p = random_params(rng, kTiny);
  const auto fwd = unet::forward(p, random_activation(rng, 3, 8, 8));
  const auto res = unet::backward(p, fwd.cache, Activation<double>(1, 8, 8));
  res.grads.for_each_array([](const std::string&, std::span<const double> v) {
    for (double x : v) EXPECT_EQ(x, 0.0);
  });
  for (double v : res.grad_input.values) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearInOutputGradient) {
  std::mt19937_64 rng(10);
  const auto p = random_params(rng, unet::Widths{});
  const auto fwd = unet::forward(p, random_activation(rng, 3, 16, 16));
  const auto g = random_activation(rng, 1, 16, 16);
  auto g2 = g;
  for (double& v : g2.values) v *= 2.0;
  const auto a = unet::backward(p, fwd.cache, g);
  const auto b = unet::backward(p, fwd.cache, g2);
  for (std::size_t l = 0; l < unet::kLayerCount; ++l) {
    for (std::size_t i = 0; i < a.grads.layers[l].weight.size(); ++i) {
      EXPECT_EQ(b.grads.layers[l].weight[i], 2.0 * a.grads.layers[l].weight[i]);
    }
    for (std::size_t i = 0; i < a.grads.layers[l].bias.size(); ++i) {
      EXPECT_EQ(b.grads.layers[l].bias[i], 2.0 * a.grads.layers[l].bias[i]);
    }
  }
}

TEST(Backward, CacheMismatchIsInvalidState) {
  std::mt19937_64 rng(11);
  const auto p = random_params(rng, kTiny);
  const auto other = random_params(rng, unet::Widths{4, 8, 8});
  const auto fwd = unet::forward(other, random_activation(rng, 3, 8, 8));
  EXPECT_EQ(kind_of([&] { unet::backward(p, fwd.cache, Activation<double>(1, 8, 8)); }), ErrorKind::kInvalidState);
  EXPECT_EQ(kind_of([&] { unet::backward(p, unet::ActivationCache<double>{}, Activation<double>(1, 8, 8)); }),
            ErrorKind::kInvalidState);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const double h = 1e-5;
  for (int trial = 0; trial < 3; ++trial) {
    auto p = random_params(rng, kTiny);
    const auto x = random_activation(rng, 3, 8, 8);
    const auto g = random_activation(rng, 1, 8, 8);
    const auto res = unet::backward(p, unet::forward(p, x).cache, g);
    auto loss = [&] { return inner(unet::forward(p, x).output, g); };

    double worst = 0.0;
    for (std::size_t l = 0; l < unet::kLayerCount; ++l) {
      auto check = [&](std::vector<double>& param, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double saved = param[i];
          param[i] = saved + h;
          const double up = loss();
          param[i] = saved - h;
          const double down = loss();
          param[i] = saved;
          const double numeric = (up - down) / (2.0 * h);
          const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
          worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        }
      };
      check(p.layers[l].weight, res.grads.layers[l].weight);
      check(p.layers[l].bias, res.grads.layers[l].bias);
    }
    EXPECT_LE(worst, 1e-4) << "trial " << trial;

    // Input gradient through the same functional.
    auto xp = x;
    for (std::size_t i = 0; i < xp.values.size(); i += 7) {
      const double saved = xp.values[i];
      xp.values[i] = saved + h;
      const double up = inner(unet::forward(p, xp).output, g);
      xp.values[i] = saved - h;
      const double down = inner(unet::forward(p, xp).output, g);
      xp.values[i] = saved;
      EXPECT_NEAR((up - down) / (2.0 * h), res.grad_input.values[i], 1e-6);
    }
  }
}

TEST(Backward, DeterministicBitwise) {
  std::mt19937_64 rng(13);
  const auto p = random_params(rng, unet::Widths{});
  const auto x = random_activation(rng, 3, 16, 16);
  const auto g = random_activation(rng, 1, 16, 16);
  const auto a = unet::backward(p, unet::forward(p, x).cache, g);
  const auto b = unet::backward(p, unet::forward(p, x).cache, g);
  EXPECT_EQ(a.grads, b.grads);
  EXPECT_EQ(a.grad_input.values, b.grad_input.values);
}
