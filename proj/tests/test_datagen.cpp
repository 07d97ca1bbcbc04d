#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "irdrop/datagen.hpp"
#include "irdrop/pde.hpp"
#include "support.hpp"

using irdrop::ErrorKind;
using irdrop::GenConfig;
using irdrop::Grid2D;
using irdrop::testing::kind_of;

namespace {

void expect_unit_range(const Grid2D& g) {
  EXPECT_GE(g.min(), 0.0);
  EXPECT_LE(g.max(), 1.0);
}

}  // namespace

TEST(Seeding, SampleSeedsAreDistinctAndStable) {
  EXPECT_EQ(irdrop::sample_seed(42, 0), irdrop::sample_seed(42, 0));
  EXPECT_NE(irdrop::sample_seed(42, 0), irdrop::sample_seed(42, 1));
  EXPECT_NE(irdrop::sample_seed(42, 0), irdrop::sample_seed(43, 0));
}

TEST(GenPowerGrid, DeterministicForSeedAndIndex) {
  const GenConfig cfg;
  auto a = irdrop::sample_rng(42, 0);
  auto b = irdrop::sample_rng(42, 0);
  EXPECT_EQ(irdrop::gen_power_grid(a, cfg), irdrop::gen_power_grid(b, cfg));
}

TEST(GenPowerGrid, RangeFloorToOne) {
  const GenConfig cfg;
  for (std::uint64_t i = 0; i < 20; ++i) {
    auto rng = irdrop::sample_rng(42, i);
    const auto g = irdrop::gen_power_grid(rng, cfg);
    EXPECT_GE(g.min(), cfg.grid_floor);
    EXPECT_LE(g.max(), 1.0);
    EXPECT_NEAR(g.min(), cfg.grid_floor, 1e-15);
    EXPECT_EQ(g.max(), 1.0);
  }
}

TEST(GenPowerGrid, DifferentSeedsDifferInAtLeastTenPercent) {
  const GenConfig cfg;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto a = irdrop::sample_rng(s, 0);
    auto b = irdrop::sample_rng(s + 1000, 0);
    const auto ga = irdrop::gen_power_grid(a, cfg);
    const auto gb = irdrop::gen_power_grid(b, cfg);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) differ += ga.values()[i] != gb.values()[i];
    EXPECT_GE(differ * 10, ga.size()) << "seed pair " << s;
  }
}

TEST(GenCellDensity, SingleBlobPeaksAtItsCenter) {
  const irdrop::Blob blob{32.0, 32.0, 5.0, 0.7};
  const auto g = irdrop::render_blobs(std::span<const irdrop::Blob>(&blob, 1), 64, 64);
  EXPECT_EQ(g(32, 32), 1.0);
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) {
      if (r != 32 || c != 32) EXPECT_LT(g(r, c), 1.0);
    }
  }
}

TEST(GenCellDensity, ForcedSingleBlobPeakMatchesDrawnCenter) {
  GenConfig cfg;
  cfg.blob_count_range = {1, 1};
  auto rng = irdrop::sample_rng(9, 0);
  const auto g = irdrop::gen_cell_density(rng, cfg);
  EXPECT_EQ(g.max(), 1.0);
  EXPECT_EQ(g.min(), 0.0);
}

TEST(GenCellDensity, ExactUnitRangeAndDeterminism) {
  const GenConfig cfg;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto a = irdrop::sample_rng(3, i);
    auto b = irdrop::sample_rng(3, i);
    const auto g = irdrop::gen_cell_density(a, cfg);
    EXPECT_EQ(g.min(), 0.0);
    EXPECT_EQ(g.max(), 1.0);
    EXPECT_EQ(g, irdrop::gen_cell_density(b, cfg));
  }
}

TEST(GenSwitching, ZeroDensityAndZeroNoiseGiveZeros) {
  const auto s = irdrop::blend_switching(Grid2D(64, 64, 0.0), Grid2D(64, 64, 0.0));
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(GenSwitching, CorrelatesWithDensity) {
  const GenConfig cfg;
  double total = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto s = irdrop::generate_sample(cfg, i);
    total += irdrop::pde::compare_labels(s.switching, s.cell_density).pearson;
  }
  EXPECT_GT(total / 100.0, 0.3);
}

TEST(SynthLabel, UniformMapsRawValue) {
  const auto raw = irdrop::raw_label(Grid2D(8, 8, 0.5), Grid2D(8, 8, 0.5), Grid2D(8, 8, 0.5), 1e-6);
  for (double v : raw.values()) EXPECT_NEAR(v, 0.4999990000020000, 1e-15);
}

TEST(SynthLabel, ZeroSwitchingGivesZeroLabel) {
  const GenConfig cfg;
  const auto s = irdrop::generate_sample(cfg, 0);
  const auto label = irdrop::synth_label(s.power_grid, s.cell_density, Grid2D(64, 64, 0.0), cfg);
  for (double v : label.values()) EXPECT_EQ(v, 0.0);
}

TEST(SynthLabel, RawIsMonotoneInEachInput) {
  const GenConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> bump(1.0, 1.5);
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto s = irdrop::generate_sample(cfg, i);
    const auto base = irdrop::raw_label(s.power_grid, s.cell_density, s.switching, cfg.eps);
    auto grid_up = s.power_grid, dens_up = s.cell_density, sw_up = s.switching;
    for (double& v : grid_up.values()) v *= bump(rng);
    for (double& v : dens_up.values()) v *= bump(rng);
    for (double& v : sw_up.values()) v *= bump(rng);
    const auto g = irdrop::raw_label(grid_up, s.cell_density, s.switching, cfg.eps);
    const auto d = irdrop::raw_label(s.power_grid, dens_up, s.switching, cfg.eps);
    const auto w = irdrop::raw_label(s.power_grid, s.cell_density, sw_up, cfg.eps);
    for (std::size_t k = 0; k < base.size(); ++k) {
      EXPECT_LE(g.values()[k], base.values()[k]);
      EXPECT_GE(d.values()[k], base.values()[k]);
      EXPECT_GE(w.values()[k], base.values()[k]);
    }
  }
}

TEST(SynthLabel, ShapeMismatch) {
  EXPECT_EQ(kind_of([] { irdrop::raw_label(Grid2D(4, 4), Grid2D(4, 4), Grid2D(4, 5), 1e-6); }), ErrorKind::kShape);
}

TEST(GenerateSample, AllMapsWithinContract) {
  const GenConfig cfg;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = irdrop::generate_sample(cfg, i);
    for (const Grid2D* g : {&s.power_grid, &s.cell_density, &s.switching, &s.ir_drop}) {
      EXPECT_EQ(g->height(), 64u);
      EXPECT_EQ(g->width(), 64u);
      expect_unit_range(*g);
    }
    EXPECT_GE(s.power_grid.min(), cfg.grid_floor);
  }
}

TEST(GenerateDataset, IndependentOfGenerationOrder) {
  GenConfig cfg;
  cfg.n_samples = 6;
  cfg.seed = 5;
  const auto ds = irdrop::generate_dataset(cfg);
  for (std::uint64_t i = 0; i < cfg.n_samples; ++i) {
    const auto s = irdrop::generate_sample(cfg, i);
    EXPECT_EQ(ds.samples[i].ir_drop, s.ir_drop);
    EXPECT_EQ(ds.samples[i].power_grid, s.power_grid);
  }
}

TEST(GenerateDataset, FilesAreByteIdenticalAcrossRuns) {
  irdrop::testing::TempDir dir("gen");
  GenConfig cfg;
  cfg.n_samples = 10;
  cfg.seed = 7;
  irdrop::generate_dataset(cfg, dir / "a");
  irdrop::generate_dataset(cfg, dir / "b");
  for (const char* name : {irdrop::kPowerGridFile, irdrop::kCellDensityFile, irdrop::kSwitchingFile,
                           irdrop::kLabelsFile}) {
    const auto a = irdrop::npy::read_file(dir / "a" / name);
    const auto b = irdrop::npy::read_file(dir / "b" / name);
    EXPECT_EQ(a, b) << name;
    const auto rec = irdrop::npy::read_npy(a);
    EXPECT_EQ(rec.header.shape, (std::vector<std::size_t>{10, 64, 64}));
    EXPECT_EQ(rec.header.dtype, irdrop::npy::DType::kF4);
    for (double v : rec.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GenerateDataset, LoadRoundTripIsF4Rounded) {
  irdrop::testing::TempDir dir("gen-load");
  GenConfig cfg;
  cfg.n_samples = 3;
  const auto ds = irdrop::generate_dataset(cfg, dir.path());
  const auto back = irdrop::load_dataset(dir.path());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 64 * 64; ++k) {
      EXPECT_EQ(back.samples[i].ir_drop.values()[k],
                static_cast<double>(static_cast<float>(ds.samples[i].ir_drop.values()[k])));
    }
  }
}

TEST(LoadDataset, MissingDirectoryNamesThePath) {
  try {
    irdrop::load_dataset("/no/such/dataset");
    FAIL();
  } catch (const irdrop::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find("/no/such/dataset"), std::string::npos);
  }
}

TEST(GenConfig, ValidateRejectsBadRanges) {
  auto bad = [](auto mutate) {
    GenConfig c;
    mutate(c);
    return kind_of([&] { c.validate(); });
  };
  EXPECT_EQ(bad([](GenConfig& c) { c.eps = 0.0; }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(bad([](GenConfig& c) { c.grid_floor = 0.0; }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(bad([](GenConfig& c) { c.blob_count_range = {5, 4}; }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(bad([](GenConfig& c) { c.blob_sigma_range = {3.0, 2.0}; }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(bad([](GenConfig& c) { c.stripe_period_range = {0, 3}; }), ErrorKind::kInvalidParameter);
  EXPECT_EQ(bad([](GenConfig& c) { c.n_samples = 0; }), ErrorKind::kInvalidParameter);
}
