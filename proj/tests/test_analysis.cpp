#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "irdrop/analysis.hpp"
#include "support.hpp"

using irdrop::ErrorKind;
using irdrop::Grid2D;
using irdrop::testing::kind_of;
namespace analysis = irdrop::analysis;
using analysis::RiskLevel;

namespace {

void fill_square(Grid2D& g, std::size_t r0, std::size_t c0, std::size_t size, double v) {
  for (std::size_t r = r0; r < r0 + size; ++r) {
    for (std::size_t c = c0; c < c0 + size; ++c) g(r, c) = v;
  }
}

// Seventeen separated 3x3 squares above 0.8 on a 6-px pitch, plus one
// isolated peak above 1.
Grid2D seventeen_hotspots() {
  Grid2D g(64, 64, 0.1);
  for (std::size_t k = 0; k < 17; ++k) fill_square(g, 2 + 6 * (k / 8), 2 + 6 * (k % 8), 3, 0.9);
  g(60, 60) = 1.0904;
  return g;
}

}  // namespace

TEST(Psnr, KnownValues) {
  EXPECT_NEAR(analysis::psnr(1e-4), 40.0, 1e-12);
  EXPECT_NEAR(analysis::psnr(4.9e-4), 33.09803919971486, 1e-12);
  EXPECT_NEAR(analysis::psnr(4.0, 2.0), 0.0, 1e-15);
  EXPECT_EQ(analysis::psnr(0.0), std::numeric_limits<double>::infinity());
}

TEST(Psnr, Errors) {
  EXPECT_EQ(kind_of([] { analysis::psnr(-1e-9); }), ErrorKind::kInvalidInput);
  EXPECT_EQ(kind_of([] { analysis::psnr(std::nan("")); }), ErrorKind::kInvalidInput);
  EXPECT_EQ(kind_of([] { analysis::psnr(1e-3, 0.0); }), ErrorKind::kInvalidParameter);
}

TEST(Psnr, StrictlyDecreasingInMse) {
  double prev = analysis::psnr(1e-9);
  for (double mse = 2e-9; mse < 10.0; mse *= 1.7) {
    const double cur = analysis::psnr(mse);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Hotspots, AllBelowThreshold) {
  const auto res = analysis::detect_hotspots(Grid2D(16, 16, 0.8), 0.8);
  EXPECT_EQ(res.count, 0);
  EXPECT_EQ(res.mask.max(), 0.0);
}

TEST(Hotspots, SinglePixel) {
  Grid2D g(16, 16, 0.0);
  g(5, 9) = 0.81;
  const auto res = analysis::detect_hotspots(g, 0.8);
  EXPECT_EQ(res.count, 1);
  EXPECT_EQ(res.mask(5, 9), 1.0);
  double total = 0.0;
  for (double v : res.mask.values()) total += v;
  EXPECT_EQ(total, 1.0);
}

TEST(Hotspots, TwoPixelGapSeparatesSquares) {
  Grid2D g(16, 16, 0.0);
  fill_square(g, 2, 2, 3, 1.0);
  fill_square(g, 2, 7, 3, 1.0);
  EXPECT_EQ(analysis::detect_hotspots(g, 0.8).count, 2);
  EXPECT_EQ(analysis::detect_hotspots(g, 0.8, analysis::CountMode::kPixels).count, 18);
}

TEST(Hotspots, DiagonalTouchJoinsSquares) {
  Grid2D g(16, 16, 0.0);
  fill_square(g, 2, 2, 3, 1.0);
  fill_square(g, 5, 5, 3, 1.0);
  EXPECT_EQ(analysis::detect_hotspots(g, 0.8).count, 1);
}

TEST(Hotspots, CountIsInvariantUnderTransposition) {
  std::mt19937_64 rng(3);
  const auto g = irdrop::testing::random_grid(rng, 20, 30);
  Grid2D t(30, 20);
  for (std::size_t r = 0; r < 20; ++r) {
    for (std::size_t c = 0; c < 30; ++c) t(c, r) = g(r, c);
  }
  EXPECT_EQ(analysis::detect_hotspots(g, 0.7).count, analysis::detect_hotspots(t, 0.7).count);
}

TEST(Hotspots, FlippingOnePixelAddsAtMostOne) {
  std::mt19937_64 rng(4);
  auto g = irdrop::testing::random_grid(rng, 24, 24);
  for (int trial = 0; trial < 50; ++trial) {
    const auto before = analysis::detect_hotspots(g, 0.75).count;
    const std::size_t i = rng() % g.size();
    if (g.values()[i] > 0.75) continue;
    g.values()[i] = 0.95;
    EXPECT_LE(analysis::detect_hotspots(g, 0.75).count, before + 1);
  }
}

TEST(Risk, Classification) {
  EXPECT_EQ(analysis::classify_risk(17), RiskLevel::kHigh);
  EXPECT_EQ(analysis::classify_risk(0), RiskLevel::kLow);
  EXPECT_EQ(analysis::classify_risk(5), RiskLevel::kMedium);
  EXPECT_EQ(analysis::classify_risk(1), RiskLevel::kMedium);
  EXPECT_EQ(analysis::classify_risk(9), RiskLevel::kMedium);
  EXPECT_EQ(analysis::classify_risk(10), RiskLevel::kHigh);
  EXPECT_EQ(kind_of([] { analysis::classify_risk(-1); }), ErrorKind::kInvalidInput);
  EXPECT_EQ(kind_of([] { analysis::classify_risk(3, {5, 5}); }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(analysis::classify_risk(3, {4, 20}), RiskLevel::kLow);
  EXPECT_STREQ(analysis::to_string(RiskLevel::kHigh), "HIGH");
}

TEST(Risk, MonotoneInCount) {
  int prev = 0;
  for (std::int64_t n = 0; n < 40; ++n) {
    const int cur = static_cast<int>(analysis::classify_risk(n));
    EXPECT_GE(cur, prev);
    prev = cur;
  }
}

TEST(RiskReport, ZeroMap) {
  const auto rep = analysis::risk_report(Grid2D(64, 64, 0.0));
  EXPECT_EQ(rep.max_ir_drop, 0.0);
  EXPECT_EQ(rep.mean_ir_drop, 0.0);
  EXPECT_EQ(rep.hotspot_count, 0);
  EXPECT_EQ(rep.risk_level, RiskLevel::kLow);
  EXPECT_EQ(rep.threshold_used, 0.8);
}

TEST(RiskReport, SeventeenComponentsIsHighAndUnclipped) {
  const auto g = seventeen_hotspots();
  const auto rep = analysis::risk_report(g);
  EXPECT_EQ(rep.hotspot_count, 18);
  auto without_peak = g;
  without_peak(60, 60) = 0.1;
  const auto rep17 = analysis::risk_report(without_peak);
  EXPECT_EQ(rep17.hotspot_count, 17);
  EXPECT_EQ(rep17.risk_level, RiskLevel::kHigh);
  EXPECT_EQ(rep.max_ir_drop, 1.0904);
}

TEST(RiskReport, MeanIsArithmeticMean) {
  std::mt19937_64 rng(5);
  const auto g = irdrop::testing::random_grid(rng, 64, 64, -0.2, 1.3);
  long double sum = 0.0L;
  for (double v : g.values()) sum += v;
  const auto rep = analysis::risk_report(g, 0.5);
  EXPECT_NEAR(rep.mean_ir_drop, static_cast<double>(sum / 4096.0L), 1e-12);
  EXPECT_EQ(rep.max_ir_drop, g.max());
  EXPECT_EQ(rep.threshold_used, 0.5);
  EXPECT_EQ(kind_of([] { analysis::risk_report(Grid2D()); }), ErrorKind::kInvalidInput);
}

TEST(Evaluate, PerfectPredictor) {
  // Zero switching gives all-zero labels, which the zero network reproduces.
  irdrop::GenConfig cfg;
  cfg.n_samples = 3;
  auto ds = irdrop::generate_dataset(cfg);
  for (auto& s : ds.samples) s.ir_drop = Grid2D(64, 64, 0.0);
  const auto rep = analysis::evaluate(irdrop::unet::UNetParams<float>(), ds);
  EXPECT_EQ(rep.mse, 0.0);
  EXPECT_EQ(rep.psnr_db, std::numeric_limits<double>::infinity());
  EXPECT_EQ(rep.n_samples, 3u);
}

TEST(Evaluate, ZeroPredictorGivesLabelMeanSquare) {
  irdrop::GenConfig cfg;
  cfg.n_samples = 5;
  const auto ds = irdrop::generate_dataset(cfg);
  double m = 0.0;
  for (const auto& s : ds.samples) {
    for (double v : s.ir_drop.values()) m += v * v;
  }
  m /= 5.0 * 4096.0;
  const auto rep = analysis::evaluate(irdrop::unet::UNetParams<double>(), ds);
  EXPECT_NEAR(rep.mse, m, 1e-14);
  EXPECT_NEAR(rep.psnr_db, analysis::psnr(m), 1e-10);
}

TEST(Evaluate, ConstantHeadBiasPredictor) {
  irdrop::GenConfig cfg;
  cfg.n_samples = 2;
  auto ds = irdrop::generate_dataset(cfg);
  for (auto& s : ds.samples) s.ir_drop = Grid2D(64, 64, 0.25);
  irdrop::unet::UNetParams<double> p;
  p.layers[irdrop::unet::kHead].bias[0] = 0.25;
  EXPECT_EQ(analysis::evaluate(p, ds).mse, 0.0);
  p.layers[irdrop::unet::kHead].bias[0] = 0.35;
  EXPECT_NEAR(analysis::evaluate(p, ds).mse, 0.01, 1e-15);
}

TEST(Evaluate, DeterministicAndRejectsEmpty) {
  irdrop::GenConfig cfg;
  cfg.n_samples = 2;
  const auto ds = irdrop::generate_dataset(cfg);
  std::mt19937_64 rng(6);
  const auto p = irdrop::unet::he_init<float>(rng);
  const auto a = analysis::evaluate(p, ds);
  const auto b = analysis::evaluate(p, ds);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.psnr_db, b.psnr_db);
  EXPECT_EQ(kind_of([&] { analysis::evaluate(p, irdrop::Dataset{}); }), ErrorKind::kInvalidInput);
}
