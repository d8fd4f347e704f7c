#pragma once

// Joint training of the RGB and DEM branches on sampled positive-pair
// batches, with periodic validation and best-checkpoint tracking.

#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <tuple>
#include <map>
#include <optional>

#include "croco/contrastive.hpp"
#include "croco/encoder.hpp"
#include "croco/evaluator.hpp"
#include "croco/mapstore.hpp"
#include "croco/sampling.hpp"

namespace croco {

enum class OptimizerKind { SgdMomentum, Lars };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::SgdMomentum ? "sgd_momentum" : "lars"; }

inline OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::SgdMomentum;
  if (s == "lars") return OptimizerKind::Lars;
  throw Error("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  int batch_size = 32;
  int steps = 1000;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double lars_trust = 1e-3;
  LossConfig loss;
  Arch arch = Arch::Desk;
  double patch_m = 16.0;
  double stride_m = 2.0;
  double gsd_m = 0.0;  // 0 keeps the tiles' native GSD
  std::uint64_t seed = 0;
  int eval_every = 250;
  std::size_t eval_max_queries = 0;  // 0 = every anchor of every validation tile
  unsigned threads = 1;

  void validate() const {
    if (batch_size < 2) throw Error("batch size must be at least 2");
    if (steps < 1) throw Error("steps must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
    if (!(lars_trust > 0.0)) throw Error("LARS trust coefficient must be positive");
    if (!(patch_m > 0.0) || !(stride_m > 0.0)) throw Error("patch and stride must be positive");
    if (gsd_m < 0.0) throw Error("gsd must be non-negative");
    if (eval_every < 1) throw Error("eval_every must be at least 1");
    loss.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"optimizer", to_string(c.optimizer)},
          {"lars_trust", c.lars_trust},
          {"temperature", c.loss.temperature},
          {"negative_set", to_string(c.loss.negative_set)},
          {"arch", to_string(c.arch)},
          {"patch_m", c.patch_m},
          {"stride_m", c.stride_m},
          {"gsd_m", c.gsd_m},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_max_queries", c.eval_max_queries}};
}

// ---------------------------------------------------------------------------
// Optimizers

/// SGD with heavy-ball momentum: v = m v + g; w -= lr v.
template <class T>
void sgd_momentum_update(std::vector<ParamBlock<T>>& params, const BlockVectors<T>& grads, double lr, double momentum,
                         BlockVectors<T>& velocity) {
  if (grads.size() != params.size() || velocity.size() != params.size()) throw Error("sgd: block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& w = params[b].value;
    if (grads[b].size() != w.size() || velocity[b].size() != w.size()) throw Error("sgd: shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      velocity[b][i] = static_cast<T>(momentum) * velocity[b][i] + grads[b][i];
      w[i] -= static_cast<T>(lr) * velocity[b][i];
    }
  }
}

/// Layer-wise adaptive rate scaling. Per block:
///   local = trust * |w| / (|g| + eps)   (1 when |w| or |g| is zero)
///   v = m v + lr * local * g;  w -= v
template <class T>
void lars_update(std::vector<ParamBlock<T>>& params, const BlockVectors<T>& grads, double lr, double trust,
                 double momentum, BlockVectors<T>& velocity, double eps = 1e-9) {
  if (grads.size() != params.size() || velocity.size() != params.size()) throw Error("lars: block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& w = params[b].value;
    const auto& g = grads[b];
    if (g.size() != w.size() || velocity[b].size() != w.size()) throw Error("lars: shape mismatch");
    double wn = 0.0, gn = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      wn += static_cast<double>(w[i]) * w[i];
      gn += static_cast<double>(g[i]) * g[i];
    }
    wn = std::sqrt(wn);
    gn = std::sqrt(gn);
    const double local = (wn > 0.0 && gn > 0.0) ? trust * wn / (gn + eps) : 1.0;
    const double scale = lr * local;
    for (std::size_t i = 0; i < w.size(); ++i) {
      velocity[b][i] = static_cast<T>(momentum * velocity[b][i] + scale * g[i]);
      w[i] -= velocity[b][i];
    }
  }
}

struct Optimizer {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double trust = 1e-3;
  BlockVectors<float> velocity;

  void step(std::vector<ParamBlock<float>>& params, const BlockVectors<float>& grads) {
    if (velocity.empty())
      for (const auto& p : params) velocity.emplace_back(p.value.size(), 0.0f);
    if (kind == OptimizerKind::SgdMomentum)
      sgd_momentum_update(params, grads, learning_rate, momentum, velocity);
    else
      lars_update(params, grads, learning_rate, trust, momentum, velocity);
  }
};

/// Both branches plus their optimizer state.
struct TrainState {
  EncoderBranch<float> rgb;
  EncoderBranch<float> dem;
  Optimizer rgb_opt;
  Optimizer dem_opt;
  std::uint64_t step = 0;

  static TrainState fresh(const TrainConfig& cfg) {
    TrainState s;
    s.rgb = init_branch(Modality::RGB, cfg.arch, cfg.seed);
    s.dem = init_branch(Modality::DEM, cfg.arch, cfg.seed);
    for (auto* o : {&s.rgb_opt, &s.dem_opt}) {
      o->kind = cfg.optimizer;
      o->learning_rate = cfg.learning_rate;
      o->momentum = cfg.momentum;
      o->trust = cfg.lars_trust;
    }
    return s;
  }
};

/// One optimization step on both branches. Returns the loss before the update.
inline double train_step(TrainState& state, const PairBatch& batch, const TrainConfig& cfg) {
  if (batch.size() < 2 || batch.dem_patches.size() != batch.size()) throw Error("train_step: invalid batch");
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (!(batch.rgb_locations[i].cell == batch.dem_locations[i].cell) ||
        !(batch.rgb_locations[i].anchor == batch.dem_locations[i].anchor))
      throw Error("train_step: batch pair " + std::to_string(i) + " is not co-located");

  EncoderBranch<float>::Cache rgb_cache, dem_cache;
  const Mat<float> z_rgb = state.rgb.forward(batch.rgb_patches, rgb_cache);
  const Mat<float> z_dem = state.dem.forward(batch.dem_patches, dem_cache);
  const auto g = nt_xent_grad(z_rgb, z_dem, cfg.loss);
  const auto rgb_grads = state.rgb.backward(rgb_cache, g.d_rgb);
  const auto dem_grads = state.dem.backward(dem_cache, g.d_dem);
  state.rgb_opt.step(state.rgb.params(), rgb_grads);
  state.dem_opt.step(state.dem.params(), dem_grads);
  ++state.step;
  return g.value.loss;
}

// ---------------------------------------------------------------------------
// Logs

struct LogEntry {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::optional<double> top1;
  std::optional<double> top5;
  double seconds = 0.0;
};

using TrainLog = std::vector<LogEntry>;

/// Step of the highest validation Top-1; the earliest wins ties.
inline std::optional<std::uint64_t> select_best(const TrainLog& log) {
  std::optional<std::uint64_t> best;
  double best_top1 = -1.0;
  for (const auto& e : log)
    if (e.top1 && *e.top1 > best_top1) {
      best_top1 = *e.top1;
      best = e.step;
    }
  return best;
}

inline void write_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "step,loss,top1,top5,seconds\n";
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.loss);
    out << e.step << ',' << buf << ',';
    if (e.top1) out << *e.top1;
    out << ',';
    if (e.top5) out << *e.top5;
    std::snprintf(buf, sizeof(buf), "%.6f", e.seconds);
    out << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Datasets and split evaluation

struct Dataset {
  std::vector<TilePair> tiles;
  SplitAssignment splits;
};

/// Tiles after resampling and normalization, with their lattices.
struct PreparedTiles {
  std::vector<TilePair> tiles;
  std::vector<PatchGrid> rgb_grids;
  std::vector<PatchGrid> dem_grids;
  NormalizationStats rgb_stats;
  NormalizationStats dem_stats;

  std::vector<std::size_t> indices_in(const std::set<std::string>& ids) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tiles.size(); ++i)
      if (ids.count(tiles[i].id)) out.push_back(i);
    return out;
  }
};

/// Resamples to cfg.gsd_m, normalizes every tile and builds its lattice.
/// Statistics are fitted on the training split unless `stats` is given.
inline PreparedTiles prepare_tiles(const Dataset& data, const TrainConfig& cfg,
                                   const std::optional<std::pair<NormalizationStats, NormalizationStats>>& stats = {}) {
  PreparedTiles p;
  std::vector<RasterTile> train_rgb, train_dem;
  for (const auto& t : data.tiles) {
    if (!same_geometry(t.rgb, t.dem)) throw Error("tile pair '" + t.id + "' is not co-registered");
    if (t.rgb.modality != Modality::RGB || t.dem.modality != Modality::DEM)
      throw Error("tile pair '" + t.id + "' has the wrong modalities");
    TilePair r{t.id, cfg.gsd_m > 0.0 ? resample(t.rgb, cfg.gsd_m) : t.rgb,
               cfg.gsd_m > 0.0 ? resample(t.dem, cfg.gsd_m) : t.dem};
    if (data.splits.is_train(t.id)) {
      train_rgb.push_back(r.rgb);
      train_dem.push_back(r.dem);
    }
    p.tiles.push_back(std::move(r));
  }
  if (stats) {
    p.rgb_stats = stats->first;
    p.dem_stats = stats->second;
  } else {
    if (train_rgb.empty()) throw Error("training split is empty");
    p.rgb_stats = fit_normalization(train_rgb);
    p.dem_stats = fit_normalization(train_dem);
  }
  for (auto& t : p.tiles) {
    t.rgb = normalize(t.rgb, p.rgb_stats);
    t.dem = normalize(t.dem, p.dem_stats);
    p.rgb_grids.push_back(generate_grid(t.rgb, cfg.patch_m, cfg.stride_m));
    p.dem_grids.push_back(generate_grid(t.dem, cfg.patch_m, cfg.stride_m));
    if (!supported_patch_size(p.rgb_grids.back().patch_px))
      throw Error("patch of " + std::to_string(p.rgb_grids.back().patch_px) + " px is not supported by the encoder");
  }
  return p;
}

struct SplitScore {
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t n = 0;
};

/// Builds one feature map per tile and localizes that tile's DEM anchors in it.
template <PatchEncoder R, PatchEncoder D>
SplitScore evaluate_tiles(const PreparedTiles& p, std::span<const std::size_t> which, const R& rgb, const D& dem,
                          std::size_t max_queries, std::uint64_t seed, unsigned threads = 1,
                          std::vector<EvalReport>* reports = nullptr) {
  std::size_t hit1 = 0, hit5 = 0, n = 0;
  for (std::size_t i : which) {
    const auto map = build_feature_map(p.tiles[i].rgb, p.rgb_grids[i], rgb, "eval", threads);
    const auto queries = queries_from_tile(p.tiles[i].dem, p.dem_grids[i], max_queries, Rng::combine(seed, i));
    auto rep = evaluate(queries, dem, map, {}, threads);
    if (rep.top1 > rep.top5) throw Error("invariant violated: top1 > top5");
    hit1 += rep.top1_count();
    hit5 += rep.top5_count();
    n += rep.n_queries;
    if (reports) reports->push_back(std::move(rep));
  }
  SplitScore s;
  s.n = n;
  if (n) {
    s.top1 = static_cast<double>(hit1) / n;
    s.top5 = static_cast<double>(hit5) / n;
  }
  return s;
}

inline Checkpoint to_checkpoint(const TrainState& s, const PreparedTiles& p, const TrainConfig& cfg) {
  Checkpoint c;
  c.rgb = s.rgb;
  c.dem = s.dem;
  c.rgb_stats = p.rgb_stats;
  c.dem_stats = p.dem_stats;
  c.config = to_json(cfg);
  c.seed = cfg.seed;
  c.step = s.step;
  return c;
}

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::uint64_t best_step = 0;
  TrainLog log;
};

using StepCallback = std::function<void(const LogEntry&)>;

/// Trains for cfg.steps steps on the training split, validating every
/// cfg.eval_every steps (and after the last step). When `run_dir` is set the
/// final and best checkpoints and the CSV log are written under it.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& run_dir = {},
                         const StepCallback& on_step = {}) {
  cfg.validate();
  const PreparedTiles p = prepare_tiles(data, cfg);
  const auto train_idx = p.indices_in(data.splits.train);
  const auto val_idx = p.indices_in(data.splits.val);

  std::vector<std::string> train_ids, val_ids;
  for (auto i : train_idx) train_ids.push_back(p.tiles[i].id);
  for (auto i : val_idx) val_ids.push_back(p.tiles[i].id);
  check_no_leakage(data.splits, train_ids, val_ids);

  std::map<std::string, std::string> pair_of_raster;
  for (const auto& t : p.tiles) pair_of_raster[t.rgb.id] = t.id;

  std::vector<PairSource> sources;
  std::size_t population = 0;
  for (auto i : train_idx) {
    sources.push_back({&p.tiles[i].rgb, &p.tiles[i].dem, &p.rgb_grids[i], &p.dem_grids[i]});
    population += p.rgb_grids[i].size();
  }
  if (population < static_cast<std::size_t>(cfg.batch_size))
    throw Error("training split has fewer anchors than the batch size");

  TrainState state = TrainState::fresh(cfg);
  TrainResult result;
  std::optional<double> best_top1;
  const auto start = std::chrono::steady_clock::now();

  for (int step = 1; step <= cfg.steps; ++step) {
    const PairBatch batch =
        sample_pair_batch(sources, static_cast<std::size_t>(cfg.batch_size), Rng::combine(cfg.seed, step));
    std::vector<std::string> batch_tiles;
    for (const auto& loc : batch.rgb_locations) {
      const auto it = pair_of_raster.find(loc.tile_id);
      if (it == pair_of_raster.end()) throw LeakageError("split leakage: batch drew from unknown tile '" + loc.tile_id + "'");
      batch_tiles.push_back(it->second);
    }
    check_no_leakage(data.splits, batch_tiles, {});

    LogEntry entry;
    entry.step = static_cast<std::uint64_t>(step);
    entry.loss = train_step(state, batch, cfg);
    if (!(entry.loss >= 0.0)) throw Error("invariant violated: negative or NaN loss");

    if (!val_idx.empty() && (step % cfg.eval_every == 0 || step == cfg.steps)) {
      const auto score = evaluate_tiles(p, val_idx, state.rgb, state.dem, cfg.eval_max_queries,
                                        Rng::combine(cfg.seed, 0xe7a1u), cfg.threads);
      entry.top1 = score.top1;
      entry.top5 = score.top5;
      if (!best_top1 || score.top1 > *best_top1) {
        best_top1 = score.top1;
        result.best_checkpoint = to_checkpoint(state, p, cfg);
        result.best_step = entry.step;
      }
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }

  result.final_checkpoint = to_checkpoint(state, p, cfg);
  if (!best_top1) {
    result.best_checkpoint = result.final_checkpoint;
    result.best_step = state.step;
  }
  if (!run_dir.empty()) {
    save_checkpoint(result.final_checkpoint, run_dir / "checkpoints" / "final.ckpt");
    save_checkpoint(result.best_checkpoint, run_dir / "checkpoints" / "best.ckpt");
    write_log_csv(result.log, run_dir / "reports" / "train_log.csv");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Datasets on disk

/// Reads `<dir>/splits.json` and, for every pair id listed, the tiles
/// `<id>_rgb` and `<id>_dem` from `dir`.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const SplitSpec spec = load_split_spec(dir / "splits.json");
  Dataset d;
  std::vector<std::string> ids;
  for (const auto& [id, split] : spec) {
    ids.push_back(id);
    d.tiles.push_back({id, ingest_tile(dir / (id + "_rgb")), ingest_tile(dir / (id + "_dem"))});
  }
  d.splits = assign_splits(ids, spec);
  return d;
}

inline void write_dataset(const std::vector<TilePair>& tiles, const SplitSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& t : tiles) {
    write_tile(t.rgb, dir);
    write_tile(t.dem, dir);
  }
  write_split_spec(spec, dir / "splits.json");
}

/// Last tile to test, second-to-last to val, the rest to train. Two tiles
/// become train/val and a single tile is train only.
inline SplitSpec default_split_spec(const std::vector<TilePair>& tiles) {
  SplitSpec spec;
  const std::size_t n = tiles.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::string split = "train";
    if (n >= 3 && i == n - 1) split = "test";
    else if (n >= 3 && i == n - 2) split = "val";
    else if (n == 2 && i == 1) split = "val";
    spec.emplace_back(tiles[i].id, split);
  }
  return spec;
}

/// Scores a checkpoint on the tiles of one split, preprocessed with the
/// checkpoint's own normalization statistics.
inline SplitScore evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& data, const std::set<std::string>& split,
                                      const TrainConfig& cfg, std::vector<EvalReport>* reports = nullptr) {
  const PreparedTiles p = prepare_tiles(data, cfg, std::make_pair(ckpt.rgb_stats, ckpt.dem_stats));
  const auto idx = p.indices_in(split);
  if (idx.empty()) throw Error("evaluation split is empty");
  std::vector<std::string> ids;
  for (auto i : idx) ids.push_back(p.tiles[i].id);
  check_no_leakage(data.splits, {}, ids);
  return evaluate_tiles(p, idx, ckpt.rgb, ckpt.dem, cfg.eval_max_queries, Rng::combine(cfg.seed, 0x7e57u),
                        cfg.threads, reports);
}

// ---------------------------------------------------------------------------
// Ablation sweeps

struct SweepSpec {
  std::vector<double> gsd_m;
  std::vector<double> patch_m;
  std::vector<int> batch_size;
  std::vector<std::uint64_t> seeds;

  bool empty() const { return gsd_m.empty() && patch_m.empty() && batch_size.empty(); }
};

struct AblationRow {
  double gsd_m = 0.0;
  double patch_m = 0.0;
  int batch_size = 0;
  std::uint64_t seed = 0;
  double top1 = std::numeric_limits<double>::quiet_NaN();
  double top5 = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // empty on success
};

struct AblationSummary {
  double gsd_m = 0.0;
  double patch_m = 0.0;
  int batch_size = 0;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double top1_mean = 0.0, top1_std = 0.0;
  double top5_mean = 0.0, top5_std = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;
};

/// Mean and sample standard deviation (0 for fewer than two values).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  auto same = [](const AblationSummary& s, const AblationRow& r) {
    return s.gsd_m == r.gsd_m && s.patch_m == r.patch_m && s.batch_size == r.batch_size;
  };
  std::vector<std::vector<double>> t1, t5;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AblationSummary& s) { return same(s, r); });
    if (it == out.end()) {
      AblationSummary fresh;
      fresh.gsd_m = r.gsd_m;
      fresh.patch_m = r.patch_m;
      fresh.batch_size = r.batch_size;
      out.push_back(fresh);
      t1.emplace_back();
      t5.emplace_back();
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    ++it->runs;
    if (!r.error.empty()) {
      ++it->failed;
      continue;
    }
    t1[k].push_back(r.top1);
    t5[k].push_back(r.top5);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::tie(out[k].top1_mean, out[k].top1_std) = mean_std(t1[k]);
    std::tie(out[k].top5_mean, out[k].top5_std) = mean_std(t5[k]);
  }
  return out;
}

using CellCallback = std::function<void(const AblationRow&)>;

/// Runs the full train-then-evaluate pipeline for every (gsd, patch, batch,
/// seed) cell. Each cell is scored with its best-on-val checkpoint on the
/// test split, or on val when there is no test split. Failing cells are
/// recorded and the sweep continues.
inline AblationTable run_ablation(const Dataset& data, const TrainConfig& base, const SweepSpec& sweep,
                                  const std::filesystem::path& run_dir = {}, const CellCallback& on_cell = {}) {
  if (sweep.empty()) throw Error("sweep spec is empty");
  const auto gsds = sweep.gsd_m.empty() ? std::vector<double>{base.gsd_m} : sweep.gsd_m;
  const auto patches = sweep.patch_m.empty() ? std::vector<double>{base.patch_m} : sweep.patch_m;
  const auto batches = sweep.batch_size.empty() ? std::vector<int>{base.batch_size} : sweep.batch_size;
  const auto seeds = sweep.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : sweep.seeds;
  const auto& eval_split = data.splits.test.empty() ? data.splits.val : data.splits.test;

  AblationTable table;
  for (double g : gsds)
    for (double pm : patches)
      for (int b : batches)
        for (auto seed : seeds) {
          AblationRow row;
          row.gsd_m = g;
          row.patch_m = pm;
          row.batch_size = b;
          row.seed = seed;
          TrainConfig cfg = base;
          cfg.gsd_m = g;
          cfg.patch_m = pm;
          cfg.batch_size = b;
          cfg.seed = seed;
          try {
            char name[128];
            std::snprintf(name, sizeof(name), "gsd%g_patch%g_batch%d_seed%llu", g, pm, b,
                          static_cast<unsigned long long>(seed));
            const auto cell_dir = run_dir.empty() ? std::filesystem::path{} : run_dir / "cells" / name;
            const auto res = train(data, cfg, cell_dir);
            const auto score = evaluate_checkpoint(res.best_checkpoint, data, eval_split, cfg);
            row.top1 = score.top1;
            row.top5 = score.top5;
          } catch (const std::exception& e) {
            row.error = e.what();
          }
          table.rows.push_back(row);
          if (on_cell) on_cell(row);
        }
  table.summary = summarize(table.rows);
  return table;
}

/// Per-run table. Failed cells carry "nan" scores; their messages go to the
/// companion errors file written by write_ablation.
inline void write_ablation_rows(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "gsd_m,patch_m,batch_size,seed,top1,top5\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%g,%g,%d,%llu,%.6f,%.6f\n", r.gsd_m, r.patch_m, r.batch_size,
                  static_cast<unsigned long long>(r.seed), r.top1, r.top5);
    out << buf;
  }
}

inline void write_ablation_summary(const std::vector<AblationSummary>& summary, std::ostream& out) {
  out << "gsd_m,patch_m,batch_size,runs,failed,top1_mean,top1_std,top5_mean,top5_std\n";
  char buf[256];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof(buf), "%g,%g,%d,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", s.gsd_m, s.patch_m, s.batch_size, s.runs,
                  s.failed, s.top1_mean, s.top1_std, s.top5_mean, s.top5_std);
    out << buf;
  }
}

inline void write_ablation(const AblationTable& t, const std::filesystem::path& reports_dir) {
  std::filesystem::create_directories(reports_dir);
  std::ofstream rows(reports_dir / "ablation.csv"), summary(reports_dir / "ablation_summary.csv"),
      errors(reports_dir / "ablation_errors.csv");
  if (!rows || !summary || !errors) throw Error("cannot write ablation reports under '" + reports_dir.string() + "'");
  write_ablation_rows(t.rows, rows);
  write_ablation_summary(t.summary, summary);
  errors << "gsd_m,patch_m,batch_size,seed,error\n";
  for (const auto& r : t.rows)
    if (!r.error.empty()) {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      errors << r.gsd_m << ',' << r.patch_m << ',' << r.batch_size << ',' << r.seed << ",\"" << msg << "\"\n";
    }
}

}  // namespace croco
