#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "irdrop/datagen.hpp"
#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"
#include "irdrop/unet.hpp"

namespace irdrop::analysis {

inline constexpr double kDefaultThreshold = 0.8;

// 10 log10(max^2 / mse). A perfect reconstruction reports +infinity.
inline double psnr(double mse, double max_val = 1.0) {
  if (std::isnan(mse) || mse < 0.0) detail::fail(ErrorKind::kInvalidInput, "mse must be nonnegative");
  detail::require(max_val > 0.0 && std::isfinite(max_val), ErrorKind::kInvalidParameter, "max_val must be positive");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

struct HotspotResult {
  Grid2D mask;
  std::int64_t count = 0;
};

enum class CountMode { kComponents, kPixels };

// Pixels strictly above threshold form the mask; count is the number of
// 8-connected regions (or raw pixels in kPixels mode).
inline HotspotResult detect_hotspots(const Grid2D& map, double threshold, CountMode mode = CountMode::kComponents) {
  detail::require(std::isfinite(threshold), ErrorKind::kInvalidParameter, "threshold must be finite");
  const std::size_t h = map.height();
  const std::size_t w = map.width();
  HotspotResult res{Grid2D(h, w, 0.0), 0};
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.values()[i] > threshold) res.mask.values()[i] = 1.0;
  }
  if (mode == CountMode::kPixels) {
    for (double v : res.mask.values()) res.count += v > 0.0 ? 1 : 0;
    return res;
  }

  std::vector<bool> seen(map.size(), false);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < map.size(); ++start) {
    if (seen[start] || res.mask.values()[start] == 0.0) continue;
    ++res.count;
    seen[start] = true;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const auto r = static_cast<std::ptrdiff_t>(cur / w);
      const auto c = static_cast<std::ptrdiff_t>(cur % w);
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto rr = r + dr;
          const auto cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
          const auto n = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
          if (!seen[n] && res.mask.values()[n] != 0.0) {
            seen[n] = true;
            stack.push_back(n);
          }
        }
      }
    }
  }
  return res;
}

enum class RiskLevel { kLow, kMedium, kHigh };

inline const char* to_string(RiskLevel r) {
  switch (r) {
    case RiskLevel::kLow: return "LOW";
    case RiskLevel::kMedium: return "MEDIUM";
    case RiskLevel::kHigh: return "HIGH";
  }
  return "LOW";
}

// count == 0 is LOW, count >= high is HIGH, anything between is MEDIUM.
struct RiskBands {
  std::int64_t medium = 1;
  std::int64_t high = 10;
};

inline RiskLevel classify_risk(std::int64_t count, const RiskBands& bands = {}) {
  detail::require(count >= 0, ErrorKind::kInvalidInput, "hotspot count must be nonnegative");
  detail::require(bands.medium >= 1 && bands.high > bands.medium, ErrorKind::kInvalidParameter,
                  "risk bands must satisfy 1 <= medium < high");
  if (count >= bands.high) return RiskLevel::kHigh;
  if (count >= bands.medium) return RiskLevel::kMedium;
  return RiskLevel::kLow;
}

struct RiskOptions {
  CountMode mode = CountMode::kComponents;
  RiskBands bands;
};

struct RiskReport {
  double max_ir_drop = 0.0;
  double mean_ir_drop = 0.0;
  std::int64_t hotspot_count = 0;
  RiskLevel risk_level = RiskLevel::kLow;
  double threshold_used = kDefaultThreshold;

  friend bool operator==(const RiskReport&, const RiskReport&) = default;
};

// Values are analysed as predicted; nothing is clipped to [0, 1].
inline RiskReport risk_report(const Grid2D& prediction, double threshold = kDefaultThreshold,
                              const RiskOptions& options = {}) {
  detail::require(!prediction.empty(), ErrorKind::kInvalidInput, "empty prediction map");
  RiskReport rep;
  rep.threshold_used = threshold;
  rep.max_ir_drop = prediction.max();
  double sum = 0.0;
  for (double v : prediction.values()) sum += v;
  rep.mean_ir_drop = sum / static_cast<double>(prediction.size());
  rep.hotspot_count = detect_hotspots(prediction, threshold, options.mode).count;
  rep.risk_level = classify_risk(rep.hotspot_count, options.bands);
  return rep;
}

struct MetricsReport {
  double mse = 0.0;
  double psnr_db = 0.0;
  std::size_t n_samples = 0;
};

// Per-pixel MSE over every labelled sample, accumulated in sample order.
template <typename T>
MetricsReport evaluate(const unet::UNetParams<T>& params, const Dataset& ds) {
  detail::require(!ds.empty(), ErrorKind::kInvalidInput, "evaluation dataset is empty");
  double total = 0.0;
  for (const auto& s : ds.samples) {
    detail::require(!s.ir_drop.empty(), ErrorKind::kInvalidInput, "evaluation sample without a label");
    const Grid2D pred = unet::predict_map(params, preprocess_maps(s.power_grid, s.cell_density, s.switching));
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.values()[i] - s.ir_drop.values()[i];
      sq += d * d;
    }
    total += sq / static_cast<double>(pred.size());
  }
  MetricsReport rep;
  rep.n_samples = ds.size();
  rep.mse = total / static_cast<double>(ds.size());
  rep.psnr_db = psnr(rep.mse);
  return rep;
}

}  // namespace irdrop::analysis
