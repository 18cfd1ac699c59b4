#include <gtest/gtest.h>

#include <cmath>

#include "ttm/metrics.hpp"
#include "ttm/synth.hpp"
#include "ttm/test_time_matching.hpp"

namespace ttm {
namespace {

double mean_raw_margin(const SynthData& data) {
  const auto plain = AdapterParams::identity(data.table.dim(), 1.0, 0.0);
  double sum = 0.0;
  for (const auto& g : data.dataset.groups) sum += margin(score_group(plain, g, data.table));
  return sum / static_cast<double>(data.dataset.groups.size());
}

TEST(Generate, ShapeIdsAndUnitNorms) {
  SynthConfig cfg;
  cfg.n_groups = 5;
  cfg.shape = {2, 3};
  cfg.dim = 8;
  const auto data = generate(cfg);
  EXPECT_EQ(data.dataset.groups.size(), 5u);
  EXPECT_EQ(data.table.size(), 25u);
  EXPECT_EQ(data.dataset.groups[3].id, "g00003");
  EXPECT_EQ(data.dataset.groups[3].caption_ids[2], "g00003/c2");
  EXPECT_FALSE(validate_dataset(data.dataset, data.table));
  for (std::size_t r = 0; r < data.table.size(); ++r) {
    double n = 0.0;
    for (double x : data.table.row(r)) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(Generate, NoiselessIsPerfect) {
  SynthConfig cfg;
  cfg.n_groups = 200;
  cfg.noise = 0.0;
  cfg.anchor_weight = 0.0;
  const auto m = raw_metrics(generate(cfg));
  EXPECT_DOUBLE_EQ(m.group_score, 100.0);
  EXPECT_DOUBLE_EQ(m.group_match, 100.0);
}

TEST(Generate, ModalityMixHurtsRawCosine) {
  SynthConfig cfg;
  cfg.n_groups = 400;
  cfg.noise = 1.0;
  const double aligned = raw_metrics(generate(cfg)).group_score;
  cfg.modality_mix = 0.8;
  EXPECT_LT(raw_metrics(generate(cfg)).group_score, aligned);
}

TEST(Generate, OverwhelmingNoiseIsChance) {
  SynthConfig cfg;
  cfg.n_groups = 10000;
  cfg.noise = 100.0;
  cfg.dim = 16;
  cfg.seed = 3;
  const auto m = raw_metrics(generate(cfg));
  const double n = 10000.0;
  auto band = [&](double p) { return 100.0 * 3.0 * std::sqrt(p * (1 - p) / n); };
  EXPECT_NEAR(m.group_score, 100.0 / 6.0, band(1.0 / 6.0));
  EXPECT_NEAR(m.group_match, 50.0, band(0.5));
}

TEST(Generate, Deterministic) {
  SynthConfig cfg;
  cfg.n_groups = 20;
  cfg.modality_mix = 0.5;
  cfg.seed = 9;
  const auto a = generate(cfg), b = generate(cfg);
  EXPECT_EQ(a.table.ids(), b.table.ids());
  EXPECT_EQ(a.table.data(), b.table.data());
  cfg.seed = 10;
  EXPECT_NE(generate(cfg).table.data(), a.table.data());
}

TEST(Generate, GroupsDoNotDependOnGroupCount) {
  SynthConfig cfg;
  cfg.n_groups = 3;
  const auto small = generate(cfg);
  cfg.n_groups = 6;
  const auto big = generate(cfg);
  for (std::size_t r = 0; r < small.table.size(); ++r) {
    const auto a = small.table.row(r), b = big.table.row(big.table.index_of(small.table.ids()[r]));
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Generate, DifficultyGrowsWithNoise) {
  double previous = 101.0;
  for (double sigma : {1.0, 2.0, 4.0, 8.0}) {
    SynthConfig cfg;
    cfg.n_groups = 1000;
    cfg.noise = sigma;
    cfg.seed = 4;
    const double gs = raw_metrics(generate(cfg)).group_score;
    EXPECT_LT(gs, previous) << "sigma " << sigma;
    previous = gs;
  }
}

TEST(Generate, AnchorShrinksMargins) {
  SynthConfig cfg;
  cfg.n_groups = 500;
  cfg.noise = 0.5;
  cfg.anchor_weight = 0.0;
  const double loose = mean_raw_margin(generate(cfg));
  cfg.anchor_weight = 4.0;
  EXPECT_LT(mean_raw_margin(generate(cfg)), loose);
}

TEST(Generate, RejectsBadConfig) {
  SynthConfig cfg;
  cfg.shape = {3, 2};
  EXPECT_THROW(generate(cfg), Error);
  cfg = {};
  cfg.modality_mix = 1.5;
  EXPECT_THROW(generate(cfg), Error);
  cfg = {};
  cfg.noise = -1.0;
  EXPECT_THROW(generate(cfg), Error);
}

TEST(Flatten, Counts) {
  SynthConfig cfg;
  cfg.n_groups = 2;
  auto flat = flatten(generate(cfg).dataset);
  EXPECT_EQ(flat.image_ids.size(), 4u);
  EXPECT_EQ(flat.caption_ids.size(), 4u);
  EXPECT_EQ(*flat.ground_truth, Matching({0, 1, 2, 3}));

  cfg.n_groups = 1;
  cfg.shape = {1, 4};
  flat = flatten(generate(cfg).dataset);
  EXPECT_EQ(flat.image_ids.size(), 1u);
  EXPECT_EQ(flat.caption_ids.size(), 4u);
}

TEST(Flatten, DuplicateIdsAcrossGroups) {
  GroupedDataset ds{{1, 1},
                    {{"a", {"x"}, {"y"}, Matching({0})}, {"b", {"x"}, {"z"}, Matching({0})}}};
  try {
    flatten(ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate id"), std::string::npos);
  }
}

TEST(CalibrateNoise, LandsInRange) {
  SynthConfig cfg;
  cfg.n_groups = 400;
  cfg.modality_mix = 0.8;
  const std::vector<double> grid{0.8, 1.2, 1.6, 2.0, 2.4};
  const auto c = calibrate_noise(cfg, grid);
  EXPECT_GE(c.raw_group_score, 10.0);
  EXPECT_LE(c.raw_group_score, 30.0);
  EXPECT_EQ(c.sweep.size(), grid.size());
  cfg.noise = c.noise;
  EXPECT_DOUBLE_EQ(raw_metrics(generate(cfg)).group_score, c.raw_group_score);
  const std::vector<double> hopeless{0.0};
  cfg.anchor_weight = 0.0;
  cfg.modality_mix = 0.0;
  EXPECT_THROW(calibrate_noise(cfg, hopeless), Error);
}

}  // namespace
}  // namespace ttm
