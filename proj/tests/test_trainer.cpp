#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "croco/synthgen.hpp"
#include "croco/trainer.hpp"
#include "oracles.hpp"

using namespace croco;

namespace {

/// Four 64x64 tiles at 0.5 m: two train, one val, one test.
Dataset tiny_dataset(std::uint64_t seed = 1) {
  SceneSpec spec;
  spec.seed = seed;
  spec.size_px = 128;
  spec.n_structures = 10;
  const auto tiles = cut_scene(generate_scene(spec, "d"), 2, "d");
  Dataset d;
  d.tiles = tiles;
  std::vector<std::string> ids;
  for (const auto& t : tiles) ids.push_back(t.id);
  d.splits = assign_splits(ids, default_split_spec(tiles));
  return d;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.steps = 3;
  c.patch_m = 4.0;  // 8 px
  c.stride_m = 2.0;
  c.eval_every = 2;
  c.eval_max_queries = 20;
  return c;
}

std::vector<ParamBlock<float>> blocks(std::initializer_list<float> w) {
  return {ParamBlock<float>{"w", {static_cast<int>(w.size())}, std::vector<float>(w)}};
}

}  // namespace

TEST(Optimizer, SgdMomentumMatchesHandComputation) {
  auto p = blocks({1.0f, -2.0f});
  BlockVectors<float> g = {{0.5f, 1.0f}}, v = {{0.0f, 0.0f}};
  sgd_momentum_update(p, g, 0.1, 0.9, v);
  EXPECT_FLOAT_EQ(p[0].value[0], 1.0f - 0.05f);
  sgd_momentum_update(p, g, 0.1, 0.9, v);
  // v = 0.9 * 0.5 + 0.5 = 0.95
  EXPECT_FLOAT_EQ(p[0].value[0], 0.95f - 0.095f);
  EXPECT_FLOAT_EQ(v[0][1], 1.9f);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersBitIdentical) {
  auto p = blocks({0.3f, -7.0f, 1e-20f});
  const auto before = p;
  BlockVectors<float> g = {{1.0f, -3.0f, 5.0f}}, v = {{0.0f, 0.0f, 0.0f}};
  for (int i = 0; i < 5; ++i) sgd_momentum_update(p, g, 0.0, 0.9, v);
  EXPECT_EQ(p[0].value, before[0].value);
  BlockVectors<float> v2 = {{0.0f, 0.0f, 0.0f}};
  for (int i = 0; i < 5; ++i) lars_update(p, g, 0.0, 1e-3, 0.9, v2);
  EXPECT_EQ(p[0].value, before[0].value);
}

TEST(Optimizer, LarsZeroGradientLeavesWeights) {
  auto p = blocks({2.0f, 0.0f});
  const auto before = p;
  BlockVectors<float> g = {{0.0f, 0.0f}}, v = {{0.0f, 0.0f}};
  lars_update(p, g, 1.0, 0.01, 0.0, v);
  EXPECT_EQ(p[0].value, before[0].value);
}

TEST(Optimizer, LarsTrustRatioExample) {
  // |w| = 2, |g| = 1, trust 0.01, lr 1: step = 0.01 * 2 / 1 * g = 0.02
  auto p = blocks({2.0f});
  BlockVectors<float> g = {{1.0f}}, v = {{0.0f}};
  lars_update(p, g, 1.0, 0.01, 0.0, v);
  EXPECT_NEAR(2.0f - p[0].value[0], 0.02f, 1e-7);
}

TEST(Optimizer, LarsStepIgnoresGradientScale) {
  auto a = blocks({1.0f, 2.0f, -0.5f});
  auto b = a;
  BlockVectors<float> g = {{0.1f, -0.2f, 0.3f}}, g1000 = {{100.0f, -200.0f, 300.0f}};
  BlockVectors<float> va = {{0, 0, 0}}, vb = {{0, 0, 0}};
  lars_update(a, g, 0.5, 1e-3, 0.0, va);
  lars_update(b, g1000, 0.5, 1e-3, 0.0, vb);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[0].value[i], b[0].value[i], 1e-7);
}

TEST(Optimizer, NamesRoundTrip) {
  for (auto k : {OptimizerKind::SgdMomentum, OptimizerKind::Lars}) EXPECT_EQ(optimizer_from_string(to_string(k)), k);
  EXPECT_THROW(optimizer_from_string("adam"), Error);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.loss.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainStep, BothBranchesChangeEveryStep) {
  const auto data = tiny_dataset();
  const auto cfg = tiny_config();
  const auto p = prepare_tiles(data, cfg);
  TrainState s = TrainState::fresh(cfg);
  for (int step = 0; step < 3; ++step) {
    const auto rgb = s.rgb, dem = s.dem;
    const auto batch = sample_pair_batch(p.tiles[0].rgb, p.rgb_grids[0], p.tiles[0].dem, p.dem_grids[0], 4, step);
    const double loss = train_step(s, batch, cfg);
    EXPECT_GE(loss, 0.0);
    EXPECT_FALSE(s.rgb == rgb);
    EXPECT_FALSE(s.dem == dem);
  }
  EXPECT_EQ(s.step, 3u);
}

TEST(TrainStep, ZeroLearningRateKeepsWeights) {
  const auto data = tiny_dataset();
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto p = prepare_tiles(data, cfg);
  TrainState s = TrainState::fresh(cfg);
  const auto rgb = s.rgb, dem = s.dem;
  const auto batch = sample_pair_batch(p.tiles[0].rgb, p.rgb_grids[0], p.tiles[0].dem, p.dem_grids[0], 4, 0);
  train_step(s, batch, cfg);
  EXPECT_TRUE(s.rgb == rgb);
  EXPECT_TRUE(s.dem == dem);
}

TEST(TrainStep, MisalignedBatchIsRejected) {
  const auto data = tiny_dataset();
  const auto cfg = tiny_config();
  const auto p = prepare_tiles(data, cfg);
  TrainState s = TrainState::fresh(cfg);
  auto batch = sample_pair_batch(p.tiles[0].rgb, p.rgb_grids[0], p.tiles[0].dem, p.dem_grids[0], 4, 0);
  std::swap(batch.dem_locations[0], batch.dem_locations[1]);
  EXPECT_THROW(train_step(s, batch, cfg), Error);
}

TEST(Train, SameSeedGivesIdenticalTraces) {
  const auto data = tiny_dataset();
  const auto a = train(data, tiny_config());
  const auto b = train(data, tiny_config());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].top1, b.log[i].top1);
  }
  EXPECT_TRUE(a.final_checkpoint == b.final_checkpoint);
  auto other = tiny_config();
  other.seed = 9;
  EXPECT_NE(train(data, other).log[0].loss, a.log[0].loss);
}

TEST(Train, SingleStepLogsOneRowAndWritesArtifacts) {
  const auto dir = oracle::scratch_dir("train_one");
  auto cfg = tiny_config();
  cfg.steps = 1;
  const auto r = train(tiny_dataset(), cfg, dir);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_TRUE(r.log[0].top1.has_value());
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "final.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "best.ckpt"));
  std::ifstream in(dir / "reports" / "train_log.csv");
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "step,loss,top1,top5,seconds");
  EXPECT_EQ(row.rfind("1,", 0), 0u);
  EXPECT_FALSE(std::getline(in, extra));
  EXPECT_TRUE(load_checkpoint(dir / "checkpoints" / "final.ckpt") == r.final_checkpoint);
}

TEST(Train, LossTrendsDownwardOnSmallBatches) {
  auto cfg = tiny_config();
  cfg.steps = 200;
  cfg.eval_every = 1000;
  cfg.eval_max_queries = 5;
  const auto r = train(tiny_dataset(2), cfg);
  std::vector<double> ma;
  for (std::size_t i = 20; i <= r.log.size(); i += 20) {
    double s = 0;
    for (std::size_t j = i - 20; j < i; ++j) s += r.log[j].loss;
    ma.push_back(s / 20);
  }
  ASSERT_EQ(ma.size(), 10u);
  EXPECT_LT(ma.back(), ma.front());
  EXPECT_LT(ma.back(), std::log(7.0));
}

TEST(Train, CheckpointCarriesTrainStatistics) {
  const auto data = tiny_dataset();
  const auto cfg = tiny_config();
  const auto r = train(data, cfg);
  const auto p = prepare_tiles(data, cfg);
  EXPECT_EQ(r.final_checkpoint.rgb_stats, p.rgb_stats);
  EXPECT_EQ(r.final_checkpoint.dem_stats, p.dem_stats);
  EXPECT_EQ(r.final_checkpoint.step, 3u);
}

TEST(Train, EmptyTrainSplitAndBadPatchSizeFail) {
  auto data = tiny_dataset();
  std::vector<std::string> ids;
  SplitSpec spec;
  for (const auto& t : data.tiles) {
    ids.push_back(t.id);
    spec.emplace_back(t.id, "val");
  }
  auto no_train = data;
  no_train.splits = assign_splits(ids, spec);
  EXPECT_THROW(train(no_train, tiny_config()), Error);
  auto cfg = tiny_config();
  cfg.patch_m = 6.0;  // 12 px
  EXPECT_THROW(train(data, cfg), Error);
}

TEST(Train, BatchLargerThanTrainPopulationFails) {
  auto cfg = tiny_config();
  cfg.patch_m = 32.0;  // 64 px: one anchor per tile, two train tiles
  cfg.batch_size = 3;
  EXPECT_THROW(train(tiny_dataset(), cfg), Error);
}

TEST(Log, SelectBestPicksHighestTopOneEarliestOnTies) {
  TrainLog log(3);
  const double t[] = {0.1, 0.4, 0.2};
  for (int i = 0; i < 3; ++i) {
    log[i].step = i + 1;
    log[i].top1 = t[i];
  }
  EXPECT_EQ(select_best(log), 2u);
  log.push_back({});
  log.back().step = 4;
  log.back().top1 = 0.4;
  EXPECT_EQ(select_best(log), 2u);
  EXPECT_FALSE(select_best(TrainLog(2)).has_value());
}

TEST(Dataset, DiskRoundTrip) {
  const auto dir = oracle::scratch_dir("dataset");
  const auto data = tiny_dataset();
  write_dataset(data.tiles, default_split_spec(data.tiles), dir);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.tiles.size(), data.tiles.size());
  EXPECT_EQ(back.splits.train, data.splits.train);
  EXPECT_EQ(back.splits.test, data.splits.test);
  for (std::size_t i = 0; i < data.tiles.size(); ++i) {
    const auto& a = data.tiles[i];
    const auto it = std::find_if(back.tiles.begin(), back.tiles.end(), [&](const TilePair& t) { return t.id == a.id; });
    ASSERT_NE(it, back.tiles.end());
    EXPECT_EQ(it->rgb.data, a.rgb.data);
    for (std::size_t k = 0; k < a.dem.data.size(); ++k) ASSERT_NEAR(it->dem.data[k], a.dem.data[k], 1e-3);
  }
}

TEST(Ablation, EmptySweepIsRejected) {
  EXPECT_THROW(run_ablation(tiny_dataset(), tiny_config(), SweepSpec{}), Error);
}

TEST(Ablation, FailedCellIsRecordedAndSweepContinues) {
  const auto dir = oracle::scratch_dir("ablation");
  SweepSpec sweep;
  sweep.patch_m = {4.0, 6.0};
  sweep.seeds = {1, 2};
  auto cfg = tiny_config();
  cfg.steps = 2;
  const auto t = run_ablation(tiny_dataset(), cfg, sweep, dir);
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_TRUE(t.rows[0].error.empty());
  EXPECT_TRUE(t.rows[1].error.empty());
  EXPECT_FALSE(t.rows[2].error.empty());
  EXPECT_TRUE(std::isnan(t.rows[2].top1));
  ASSERT_EQ(t.summary.size(), 2u);
  EXPECT_EQ(t.summary[0].runs, 2u);
  EXPECT_EQ(t.summary[0].failed, 0u);
  EXPECT_EQ(t.summary[1].failed, 2u);
  write_ablation(t, dir / "reports");
  std::ifstream errors(dir / "reports" / "ablation_errors.csv");
  std::string line;
  int n = 0;
  while (std::getline(errors, line)) ++n;
  EXPECT_EQ(n, 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "cells"));
}

TEST(Ablation, SummaryUsesSampleStandardDeviation) {
  std::vector<AblationRow> rows(3);
  const double v[] = {0.2, 0.4, 0.6};
  for (int i = 0; i < 3; ++i) {
    rows[i].batch_size = 8;
    rows[i].seed = i;
    rows[i].top1 = v[i];
    rows[i].top5 = 1.0;
  }
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].top1_mean, 0.4, 1e-12);
  EXPECT_NEAR(s[0].top1_std, 0.2, 1e-12);
  EXPECT_EQ(s[0].top5_std, 0.0);
  std::ostringstream out;
  write_ablation_summary(s, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "gsd_m,patch_m,batch_size,runs,failed,top1_mean,top1_std,top5_mean,top5_std");
}

TEST(Ablation, MeanStdEdgeCases) {
  EXPECT_TRUE(std::isnan(mean_std({}).first));
  EXPECT_EQ(mean_std({0.5}).second, 0.0);
}
