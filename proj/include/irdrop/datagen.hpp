#pragma once

// Procedural layout feature maps and the physics-inspired synthetic label
//   raw = density * switching / (power_grid + eps)
// followed by Gaussian smoothing and min-max normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"
#include "irdrop/npy.hpp"

namespace irdrop {

using Rng = std::mt19937_64;

inline constexpr const char* kPowerGridFile = "input_power_grid.npy";
inline constexpr const char* kCellDensityFile = "input_cell_density.npy";
inline constexpr const char* kSwitchingFile = "input_switching.npy";
inline constexpr const char* kLabelsFile = "labels_ir_drop.npy";

template <typename T>
struct Interval {
  T low;
  T high;
};

struct GenConfig {
  std::uint64_t seed = 42;
  std::size_t n_samples = 1000;
  std::size_t height = 64;
  std::size_t width = 64;
  double eps = 1e-6;
  double label_sigma = 2.0;
  Interval<int> blob_count_range{3, 8};
  Interval<double> blob_sigma_range{3.0, 10.0};
  Interval<int> stripe_period_range{4, 12};
  double grid_floor = 0.05;
  // Correlation length of the smoothed noise fields used by the power grid
  // and switching recipes.
  double noise_sigma = 1.0;

  void validate() const {
    using detail::require;
    require(n_samples > 0, ErrorKind::kInvalidParameter, "n_samples must be positive");
    require(height > 0 && width > 0, ErrorKind::kInvalidParameter, "grid size must be positive");
    require(eps > 0.0, ErrorKind::kInvalidParameter, "eps must be positive");
    require(label_sigma >= 0.0, ErrorKind::kInvalidParameter, "label_sigma must be nonnegative");
    require(noise_sigma >= 0.0, ErrorKind::kInvalidParameter, "noise_sigma must be nonnegative");
    require(grid_floor > 0.0 && grid_floor < 1.0, ErrorKind::kInvalidParameter,
            "grid_floor must lie in (0, 1)");
    require(blob_count_range.low >= 1 && blob_count_range.low <= blob_count_range.high,
            ErrorKind::kInvalidParameter, "blob_count_range must be a non-empty range of positive counts");
    require(blob_sigma_range.low > 0.0 && blob_sigma_range.low <= blob_sigma_range.high,
            ErrorKind::kInvalidParameter, "blob_sigma_range must be a non-empty positive range");
    require(stripe_period_range.low >= 1 && stripe_period_range.low <= stripe_period_range.high,
            ErrorKind::kInvalidParameter, "stripe_period_range must be a non-empty positive range");
  }
};

struct LabeledSample {
  Grid2D power_grid;
  Grid2D cell_density;
  Grid2D switching;
  Grid2D ir_drop;
};

// splitmix64 finalizer; decorrelates neighbouring (seed, index) pairs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ index);
}

inline Rng sample_rng(std::uint64_t seed, std::uint64_t index) { return Rng(sample_seed(seed, index)); }

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline Grid2D smooth_noise(Rng& rng, const GenConfig& cfg) {
  Grid2D noise(cfg.height, cfg.width);
  for (double& v : noise.values()) v = uniform(rng, 0.0, 1.0);
  return normalize_minmax(gaussian_smooth(noise, cfg.noise_sigma));
}

}  // namespace detail

// Power delivery strength: a mesh of one-pixel horizontal and vertical
// straps blended with smoothed noise, mapped into [grid_floor, 1].
inline Grid2D gen_power_grid(Rng& rng, const GenConfig& cfg) {
  const int period_h = detail::uniform_int(rng, cfg.stripe_period_range.low, cfg.stripe_period_range.high);
  const int period_v = detail::uniform_int(rng, cfg.stripe_period_range.low, cfg.stripe_period_range.high);
  const int offset_h = detail::uniform_int(rng, 0, period_h - 1);
  const int offset_v = detail::uniform_int(rng, 0, period_v - 1);
  const Grid2D noise = detail::smooth_noise(rng, cfg);

  Grid2D blend(cfg.height, cfg.width);
  for (std::size_t r = 0; r < cfg.height; ++r) {
    const bool row_strap = (static_cast<int>(r) + offset_h) % period_h == 0;
    for (std::size_t c = 0; c < cfg.width; ++c) {
      const bool col_strap = (static_cast<int>(c) + offset_v) % period_v == 0;
      const double strap = (row_strap || col_strap) ? 1.0 : 0.0;
      blend(r, c) = 0.5 * strap + 0.5 * noise(r, c);
    }
  }
  Grid2D out = normalize_minmax(blend);
  for (double& v : out.values()) v = cfg.grid_floor + (1.0 - cfg.grid_floor) * v;
  return out;
}

struct Blob {
  double row;
  double col;
  double sigma;
  double amplitude;
};

// Sum of isotropic Gaussian blobs, min-max normalized.
inline Grid2D render_blobs(std::span<const Blob> blobs, std::size_t height, std::size_t width) {
  Grid2D acc(height, width);
  for (const Blob& b : blobs) {
    const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
    for (std::size_t r = 0; r < height; ++r) {
      const double dr = static_cast<double>(r) - b.row;
      for (std::size_t c = 0; c < width; ++c) {
        const double dc = static_cast<double>(c) - b.col;
        acc(r, c) += b.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  }
  return normalize_minmax(acc);
}

inline Grid2D gen_cell_density(Rng& rng, const GenConfig& cfg) {
  const int count = detail::uniform_int(rng, cfg.blob_count_range.low, cfg.blob_count_range.high);
  std::vector<Blob> blobs(static_cast<std::size_t>(count));
  for (Blob& b : blobs) {
    b.row = detail::uniform(rng, 0.0, static_cast<double>(cfg.height));
    b.col = detail::uniform(rng, 0.0, static_cast<double>(cfg.width));
    b.sigma = detail::uniform(rng, cfg.blob_sigma_range.low, cfg.blob_sigma_range.high);
    b.amplitude = detail::uniform(rng, 0.5, 1.0);
  }
  return render_blobs(blobs, cfg.height, cfg.width);
}

// 0.6 * density + 0.4 * noise, clipped to [0, 1] and renormalized.
inline Grid2D blend_switching(const Grid2D& cell_density, const Grid2D& noise) {
  if (!cell_density.same_shape(noise)) detail::fail(ErrorKind::kShape, "switching blend shape mismatch");
  Grid2D out(cell_density.height(), cell_density.width());
  auto d = cell_density.values();
  auto n = noise.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(0.6 * d[i] + 0.4 * n[i], 0.0, 1.0);
  return normalize_minmax(out);
}

inline Grid2D gen_switching(Rng& rng, const GenConfig& cfg, const Grid2D& cell_density) {
  return blend_switching(cell_density, detail::smooth_noise(rng, cfg));
}

// Unsmoothed, unnormalized label: current demand over grid strength.
inline Grid2D raw_label(const Grid2D& power_grid, const Grid2D& cell_density, const Grid2D& switching,
                        double eps) {
  if (!power_grid.same_shape(cell_density) || !power_grid.same_shape(switching)) {
    detail::fail(ErrorKind::kShape, "label inputs must share one shape");
  }
  Grid2D raw(power_grid.height(), power_grid.width());
  auto g = power_grid.values();
  auto d = cell_density.values();
  auto s = switching.values();
  auto out = raw.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] * s[i] / (g[i] + eps);
  return raw;
}

inline Grid2D synth_label(const Grid2D& power_grid, const Grid2D& cell_density, const Grid2D& switching,
                          const GenConfig& cfg) {
  return normalize_minmax(
      gaussian_smooth(raw_label(power_grid, cell_density, switching, cfg.eps), cfg.label_sigma));
}

inline LabeledSample generate_sample(const GenConfig& cfg, std::uint64_t index) {
  Rng rng = sample_rng(cfg.seed, index);
  LabeledSample s;
  s.power_grid = gen_power_grid(rng, cfg);
  s.cell_density = gen_cell_density(rng, cfg);
  s.switching = gen_switching(rng, cfg, s.cell_density);
  s.ir_drop = synth_label(s.power_grid, s.cell_density, s.switching, cfg);
  return s;
}

struct Dataset {
  std::vector<LabeledSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                         npy::DType dtype = npy::DType::kF4) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) detail::fail(ErrorKind::kIo, "cannot create directory '" + dir.string() + "': " + ec.message());

  auto write_field = [&](const char* name, Grid2D LabeledSample::*field) {
    std::vector<Grid2D> maps;
    maps.reserve(ds.size());
    for (const auto& s : ds.samples) maps.push_back(s.*field);
    npy::save(dir / name, npy::from_grids(maps), dtype);
  };
  write_field(kPowerGridFile, &LabeledSample::power_grid);
  write_field(kCellDensityFile, &LabeledSample::cell_density);
  write_field(kSwitchingFile, &LabeledSample::switching);
  write_field(kLabelsFile, &LabeledSample::ir_drop);
}

// Samples are seeded from (seed, index) alone, so the output does not
// depend on generation order.
inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.samples.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) ds.samples.push_back(generate_sample(cfg, i));
  return ds;
}

inline Dataset generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  Dataset ds = generate_dataset(cfg);
  save_dataset(ds, out_dir);
  return ds;
}

// Reads the three input stacks and, when `require_labels` is set, the
// label stack. Missing labels leave `ir_drop` empty.
inline Dataset load_dataset(const std::filesystem::path& dir, bool require_labels = true) {
  auto stack = [&](const char* name) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) {
      detail::fail(ErrorKind::kIo, "missing dataset file '" + path.string() + "'");
    }
    return npy::to_grids(npy::load(path));
  };
  auto grid = stack(kPowerGridFile);
  auto density = stack(kCellDensityFile);
  auto switching = stack(kSwitchingFile);
  std::vector<Grid2D> labels;
  if (require_labels || std::filesystem::exists(dir / kLabelsFile)) labels = stack(kLabelsFile);

  if (density.size() != grid.size() || switching.size() != grid.size() ||
      (!labels.empty() && labels.size() != grid.size())) {
    detail::fail(ErrorKind::kShape, "dataset files in '" + dir.string() + "' disagree on sample count");
  }
  Dataset ds;
  ds.samples.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto& s = ds.samples[i];
    s.power_grid = std::move(grid[i]);
    s.cell_density = std::move(density[i]);
    s.switching = std::move(switching[i]);
    if (!labels.empty()) s.ir_drop = std::move(labels[i]);
    if (!s.power_grid.same_shape(s.cell_density) || !s.power_grid.same_shape(s.switching) ||
        (!s.ir_drop.empty() && !s.power_grid.same_shape(s.ir_drop))) {
      detail::fail(ErrorKind::kShape, "dataset maps disagree on height/width");
    }
  }
  return ds;
}

}  // namespace irdrop
