// croco: command-line front end for the mapping / localization pipeline.
//
//   croco synth     --out DIR [scene options]
//   croco train     -c CFG [overrides]
//   croco build-map --checkpoint CKPT --tile TILE
//   croco localize  --checkpoint CKPT --map MAP --dem TILE --row R --col C [--k 5]
//   croco eval      --checkpoint CKPT --map MAP --dem TILE
//   croco heatmap   --checkpoint CKPT --map MAP --dem TILE --row R --col C
//   croco ablate    -c CFG --sweep-batch-size 8,32 --sweep-seeds 0,1,2
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>

#include "croco/croco.hpp"

namespace fs = std::filesystem;
using namespace croco;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct KeyDef {
  std::string key;
  std::string help;
};

const std::vector<KeyDef> kTrainKeys = {
    {"data", "dataset directory holding tiles and splits.json"},
    {"batch_size", "positive pairs per step (N >= 2)"},
    {"steps", "optimization steps"},
    {"learning_rate", "learning rate"},
    {"momentum", "momentum in [0, 1)"},
    {"optimizer", "sgd_momentum or lars"},
    {"lars_trust", "LARS trust coefficient"},
    {"temperature", "NT-Xent temperature"},
    {"negative_set", "all_2N or cross_modal_only"},
    {"arch", "desk or deep"},
    {"patch_m", "patch side in meters"},
    {"stride_m", "grid stride in meters"},
    {"gsd_m", "resample tiles to this GSD (0 keeps native)"},
    {"seed", "random seed"},
    {"eval_every", "validate every this many steps"},
    {"eval_max_queries", "validation queries per tile (0 = all anchors)"},
    {"threads", "worker threads for encoding and scoring"},
};

const std::vector<KeyDef> kSweepKeys = {
    {"sweep_gsd_m", "comma-separated GSD values"},
    {"sweep_patch_m", "comma-separated patch sizes in meters"},
    {"sweep_batch_size", "comma-separated batch sizes"},
    {"sweep_seeds", "comma-separated seeds"},
};

const std::vector<KeyDef> kSynthKeys = {
    {"seed", "scene seed"},
    {"size_px", "scene side in pixels"},
    {"gsd_m", "ground sample distance"},
    {"n_structures", "number of buildings"},
    {"terrain_smoothness", "coarsest noise wavelength in pixels"},
    {"texture_noise", "per-pixel RGB noise amplitude"},
    {"terrain_relief_m", "terrain relief amplitude"},
    {"flat_strip", "include a featureless flat strip (true/false)"},
    {"tiles", "cut the scene into tiles x tiles pairs"},
    {"name", "scene base name"},
};

const std::vector<KeyDef> kEncoderKeys = {
    {"checkpoint", "trained checkpoint file"},
    {"encoder", "checkpoint or oracle"},
    {"seed", "oracle seed"},
    {"threads", "worker threads"},
};

std::string kebab(std::string k) {
  for (char& c : k)
    if (c == '_') c = '-';
  return k;
}

/// A subcommand with config-file keys that all double as --kebab-case flags.
struct Command {
  CLI::App* app = nullptr;
  std::vector<std::string> keys;
  std::map<std::string, std::string> flag_values;
  std::string config_path;
  std::string run_dir;
  std::string runs_root = "runs";

  void add_keys(const std::vector<KeyDef>& defs) {
    for (const auto& d : defs) {
      if (std::find(keys.begin(), keys.end(), d.key) != keys.end()) continue;
      keys.push_back(d.key);
      app->add_option("--" + kebab(d.key), flag_values[d.key], d.help);
    }
  }

  void add_run_options() {
    app->add_option("-c,--config", config_path, "configuration file (key = value)");
    app->add_option("--run-dir", run_dir, "output directory (default runs/<timestamp>-<name>)");
    app->add_option("--runs-root", runs_root, "parent of generated run directories");
  }

  /// File values, then flags given on the command line.
  Config resolve() const {
    Config cfg;
    if (!config_path.empty()) cfg = Config::load(config_path);
    for (const auto& [k, v] : cfg.values())
      if (std::find(keys.begin(), keys.end(), k) == keys.end())
        std::cerr << "warning: config key '" << k << "' is not used by '" << app->get_name() << "'\n";
    for (const auto& k : keys)
      if (app->get_option("--" + kebab(k))->count() > 0) cfg.set(k, flag_values.at(k));
    return cfg;
  }
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const Command& cmd, const std::string& name) {
  fs::path dir;
  if (!cmd.run_dir.empty()) {
    dir = cmd.run_dir;
  } else {
    const auto base = fs::path(cmd.runs_root) / (timestamp() + "-" + name);
    dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  for (const char* sub : {"checkpoints", "maps", "reports", "figures"}) fs::create_directories(dir / sub);
  return dir;
}

void write_resolved(const fs::path& dir, const Config& cfg) {
  std::ofstream out(dir / "config.resolved");
  if (!out) throw Error("cannot write '" + (dir / "config.resolved").string() + "'");
  out << cfg.dump();
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.batch_size = c.num<int>("batch_size", t.batch_size);
  t.steps = c.num<int>("steps", t.steps);
  t.learning_rate = c.num<double>("learning_rate", t.learning_rate);
  t.momentum = c.num<double>("momentum", t.momentum);
  t.optimizer = optimizer_from_string(c.str("optimizer", to_string(t.optimizer)));
  t.lars_trust = c.num<double>("lars_trust", t.lars_trust);
  t.loss.temperature = c.num<double>("temperature", t.loss.temperature);
  t.loss.negative_set = negative_set_from_string(c.str("negative_set", to_string(t.loss.negative_set)));
  t.arch = arch_from_string(c.str("arch", to_string(t.arch)));
  t.patch_m = c.num<double>("patch_m", t.patch_m);
  t.stride_m = c.num<double>("stride_m", t.stride_m);
  t.gsd_m = c.num<double>("gsd_m", t.gsd_m);
  t.seed = c.num<std::uint64_t>("seed", t.seed);
  t.eval_every = c.num<int>("eval_every", t.eval_every);
  t.eval_max_queries = c.num<std::size_t>("eval_max_queries", t.eval_max_queries);
  t.threads = c.num<unsigned>("threads", t.threads);
  t.validate();
  return t;
}

/// Every resolved train key with its effective value, so that the persisted
/// file alone reproduces the run.
Config with_train_defaults(Config c, const TrainConfig& t) {
  const auto j = to_json(t);
  for (const auto& [k, v] : j.items())
    if (!c.has(k)) c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
  if (!c.has("threads")) c.set("threads", std::to_string(t.threads));
  return c;
}

std::string require(const Config& c, const std::string& key) {
  if (!c.has(key)) throw UsageError("missing required option --" + kebab(key));
  return c.str(key, "");
}

// ---------------------------------------------------------------------------

int cmd_synth(const Command& cmd, const std::string& out_dir) {
  Config c;
  SceneSpec spec;
  int tiles = 1;
  std::string name;
  try {
    c = cmd.resolve();
    spec.seed = c.num<std::uint64_t>("seed", spec.seed);
    spec.size_px = c.num<int>("size_px", spec.size_px);
    spec.gsd_m = c.num<double>("gsd_m", spec.gsd_m);
    spec.n_structures = c.num<int>("n_structures", spec.n_structures);
    spec.terrain_smoothness = c.num<double>("terrain_smoothness", spec.terrain_smoothness);
    spec.texture_noise = c.num<double>("texture_noise", spec.texture_noise);
    spec.terrain_relief_m = c.num<double>("terrain_relief_m", spec.terrain_relief_m);
    spec.flat_strip = c.flag("flat_strip", spec.flat_strip);
    tiles = c.num<int>("tiles", tiles);
    name = c.str("name", "scene");
    spec.validate();
    if (tiles < 1 || spec.size_px / tiles < 2 * kSupportedPatchSizes.front())
      throw Error("tiles must be at least 1 and leave tiles of at least " +
                  std::to_string(2 * kSupportedPatchSizes.front()) + " px");
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Scene scene = generate_scene(spec, name);
  const auto pairs = cut_scene(scene, tiles, name);
  write_dataset(pairs, default_split_spec(pairs), out_dir);
  std::printf("synth tiles=%zu size_px=%d gsd_m=%g out=%s\n", pairs.size(), spec.size_px, spec.gsd_m, out_dir.c_str());
  return 0;
}

int cmd_train(const Command& cmd) {
  Config c;
  TrainConfig t;
  std::string data;
  try {
    c = cmd.resolve();
    t = train_config(c);
    data = require(c, "data");
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = load_dataset(data);
  const auto dir = make_run_dir(cmd, "train");
  write_resolved(dir, with_train_defaults(c, t));
  const auto res = train(ds, t, dir, [&](const LogEntry& e) {
    if (e.top1)
      std::fprintf(stderr, "step %llu loss %.5f val top1 %.4f top5 %.4f\n", static_cast<unsigned long long>(e.step),
                   e.loss, *e.top1, *e.top5);
  });
  const auto& last = res.log.back();
  std::printf("run=%s steps=%zu loss=%.6f best_step=%llu\n", dir.c_str(), res.log.size(), last.loss,
              static_cast<unsigned long long>(res.best_step));
  return 0;
}

/// Resamples to the map's GSD when needed and applies the checkpoint's
/// normalization (the oracle consumes raw tiles).
RasterTile preprocess(const RasterTile& tile, double gsd_m, const std::optional<Checkpoint>& ckpt) {
  RasterTile t = gsd_m > 0.0 && std::abs(tile.gsd_m - gsd_m) > 1e-9 ? resample(tile, gsd_m) : tile;
  if (ckpt) t = normalize(t, ckpt->stats(t.modality));
  return t;
}

struct EncoderSource {
  bool oracle = false;
  std::uint64_t seed = 0;
  std::string ckpt_path;
  std::optional<Checkpoint> ckpt;
  unsigned threads = 1;

  void load() {
    if (!oracle) ckpt = load_checkpoint(ckpt_path);
  }

  std::string fingerprint() const { return oracle ? "oracle:" + std::to_string(seed) : ckpt->fingerprint(); }
};

EncoderSource encoder_source(const Config& c) {
  EncoderSource s;
  const auto kind = c.str("encoder", "checkpoint");
  if (kind != "checkpoint" && kind != "oracle") throw UsageError("--encoder must be checkpoint or oracle");
  s.oracle = kind == "oracle";
  s.seed = c.num<std::uint64_t>("seed", 0);
  s.threads = c.num<unsigned>("threads", 1);
  if (!s.oracle) s.ckpt_path = require(c, "checkpoint");
  return s;
}

/// Calls fn(encoder) with the DEM-side encoder for `dem` on `grid`.
template <class Fn>
auto with_dem_encoder(const EncoderSource& src, const RasterTile& dem, const PatchGrid& grid, Fn&& fn) {
  if (src.oracle) {
    PatchGrid g = grid;
    g.tile_id = dem.id;
    return fn(OracleEncoder(dem, g, src.seed));
  }
  return fn(src.ckpt->dem);
}

int cmd_build_map(const Command& cmd) {
  Config c;
  std::string tile_path;
  double patch_m = 0, stride_m = 0, gsd_m = 0;
  EncoderSource src;
  try {
    c = cmd.resolve();
    tile_path = require(c, "tile");
    patch_m = c.num<double>("patch_m", 16.0);
    stride_m = c.num<double>("stride_m", 2.0);
    gsd_m = c.num<double>("gsd_m", 0.0);
    src = encoder_source(c);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  src.load();
  const RasterTile tile = preprocess(ingest_tile(tile_path), gsd_m, src.ckpt);
  const PatchGrid grid = generate_grid(tile, patch_m, stride_m);
  const FeatureMap map = src.oracle ? build_feature_map(tile, grid, OracleEncoder(tile, grid, src.seed),
                                                        src.fingerprint(), src.threads)
                                    : build_feature_map(tile, grid, src.ckpt->rgb, src.fingerprint(), src.threads);
  fs::path out = c.str("out", "");
  if (out.empty()) {
    const auto dir = make_run_dir(cmd, "map");
    write_resolved(dir, c);
    out = dir / "maps" / (tile.id + ".map");
  }
  save_map(map, out);
  std::printf("map=%s rows=%d cols=%d patch_px=%d stride_px=%d\n", out.c_str(), map.rows, map.cols, map.patch_px,
              map.stride_px);
  return 0;
}

struct QueryContext {
  Config cfg;
  EncoderSource src;
  FeatureMap map;
  RasterTile dem;
  PatchGrid grid;
};

QueryContext query_context(const Command& cmd) {
  QueryContext q;
  std::string map_path, dem_path;
  try {
    q.cfg = cmd.resolve();
    map_path = require(q.cfg, "map");
    dem_path = require(q.cfg, "dem");
    q.src = encoder_source(q.cfg);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  q.src.load();
  q.map = load_map(map_path);
  q.dem = preprocess(ingest_tile(dem_path), q.map.gsd_m, q.src.ckpt);
  q.grid = q.map.grid();
  if (q.dem.height_px != q.grid.tile_height_px || q.dem.width_px != q.grid.tile_width_px)
    throw Error("DEM tile '" + q.dem.id + "' does not match the extent of map '" + q.map.tile_id + "'");
  q.grid.tile_id = q.dem.id;
  return q;
}

GridCoord query_cell(const QueryContext& q) {
  const GridCoord cell{q.cfg.num<int>("row", -1), q.cfg.num<int>("col", -1)};
  if (!q.grid.contains(cell))
    throw UsageError("--row/--col must name a cell of the " + std::to_string(q.grid.rows) + " x " +
                     std::to_string(q.grid.cols) + " map grid");
  return cell;
}

void print_warnings(const std::vector<std::string>& ws) {
  for (const auto& w : ws) std::cerr << "warning: " << w << '\n';
}

int cmd_localize(const Command& cmd) {
  const QueryContext q = query_context(cmd);
  const GridCoord cell = query_cell(q);
  const int k = q.cfg.num<int>("k", 5);
  if (k < 1 || static_cast<std::size_t>(k) > q.map.size())
    throw UsageError("--k must lie in [1, " + std::to_string(q.map.size()) + "]");
  const Patch patch = extract_patch(q.dem, q.grid.anchor(cell), q.grid.patch_px);
  const auto r = with_dem_encoder(q.src, q.dem, q.grid, [&](const auto& enc) {
    return localize(patch, enc, q.map, k, q.src.fingerprint());
  });
  print_warnings(r.warnings);
  for (const auto& rc : r.ranking) std::printf("%d %d %.9f\n", rc.cell.row, rc.cell.col, rc.score);
  return 0;
}

int cmd_eval(const Command& cmd) {
  const QueryContext q = query_context(cmd);
  const auto max_q = q.cfg.num<std::size_t>("max_queries", 0);
  const auto queries = queries_from_tile(q.dem, q.grid, max_q, q.src.seed);
  const auto rep = with_dem_encoder(q.src, q.dem, q.grid, [&](const auto& enc) {
    return evaluate(queries, enc, q.map, q.src.fingerprint(), q.src.threads);
  });
  print_warnings(rep.warnings);
  const auto dir = make_run_dir(cmd, "eval");
  write_resolved(dir, q.cfg);
  std::ofstream(dir / "reports" / "eval.json") << report_json(rep).dump(2) << '\n';
  render_error_map(rep, dir / "figures" / "error_map.png");
  std::printf("%s\n", summary_line(rep).c_str());
  return 0;
}

int cmd_heatmap(const Command& cmd) {
  const QueryContext q = query_context(cmd);
  const GridCoord cell = query_cell(q);
  const Patch patch = extract_patch(q.dem, q.grid.anchor(cell), q.grid.patch_px);
  const auto grid = with_dem_encoder(q.src, q.dem, q.grid,
                                     [&](const auto& enc) { return similarity_grid(patch, enc, q.map); });
  fs::path out = q.cfg.str("out", "");
  if (out.empty()) {
    const auto dir = make_run_dir(cmd, "heatmap");
    write_resolved(dir, q.cfg);
    out = dir / "figures" / ("heatmap_r" + std::to_string(cell.row) + "c" + std::to_string(cell.col) + ".png");
  }
  render_heatmap(grid, out);
  const auto best = std::max_element(grid.values.begin(), grid.values.end()) - grid.values.begin();
  std::printf("heatmap=%s best_row=%d best_col=%d score=%.6f\n", out.c_str(), static_cast<int>(best / grid.cols),
              static_cast<int>(best % grid.cols), grid.values[static_cast<std::size_t>(best)]);
  return 0;
}

int cmd_ablate(const Command& cmd) {
  Config c;
  TrainConfig t;
  SweepSpec sweep;
  std::string data;
  try {
    c = cmd.resolve();
    t = train_config(c);
    data = require(c, "data");
    sweep.gsd_m = c.list<double>("sweep_gsd_m");
    sweep.patch_m = c.list<double>("sweep_patch_m");
    sweep.batch_size = c.list<int>("sweep_batch_size");
    sweep.seeds = c.list<std::uint64_t>("sweep_seeds");
    if (sweep.empty()) throw Error("sweep spec is empty: give --sweep-gsd-m, --sweep-patch-m or --sweep-batch-size");
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = load_dataset(data);
  const auto dir = make_run_dir(cmd, "ablate");
  write_resolved(dir, with_train_defaults(c, t));
  const auto table = run_ablation(ds, t, sweep, dir, [](const AblationRow& r) {
    if (r.error.empty())
      std::fprintf(stderr, "cell gsd=%g patch=%g batch=%d seed=%llu top1=%.4f top5=%.4f\n", r.gsd_m, r.patch_m,
                   r.batch_size, static_cast<unsigned long long>(r.seed), r.top1, r.top5);
    else
      std::fprintf(stderr, "cell gsd=%g patch=%g batch=%d seed=%llu failed: %s\n", r.gsd_m, r.patch_m, r.batch_size,
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
  });
  write_ablation(table, dir / "reports");
  write_ablation_summary(table.summary, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal RGB/DEM patch localization"};
  app.require_subcommand(1);

  Command synth, trainc, build, loc, eval, heat, ablate;
  std::string synth_out;

  synth.app = app.add_subcommand("synth", "generate a synthetic co-registered RGB/DEM scene");
  synth.app->add_option("-c,--config", synth.config_path, "configuration file");
  synth.app->add_option("--out", synth_out, "output directory")->required();
  synth.add_keys(kSynthKeys);

  trainc.app = app.add_subcommand("train", "train both branches");
  trainc.add_run_options();
  trainc.add_keys(kTrainKeys);

  build.app = app.add_subcommand("build-map", "encode an RGB tile into a feature map");
  build.add_run_options();
  build.add_keys(kEncoderKeys);
  build.add_keys({{"tile", "RGB tile (base path of .raw/.json)"},
                  {"patch_m", "patch side in meters"},
                  {"stride_m", "grid stride in meters"},
                  {"gsd_m", "resample the tile to this GSD first (0 keeps native)"},
                  {"out", "map file (default <run>/maps/<tile>.map)"}});

  const std::vector<KeyDef> query_keys = {{"map", "feature map file"}, {"dem", "co-registered DEM tile"}};
  const std::vector<KeyDef> cell_keys = {{"row", "query grid row"}, {"col", "query grid column"}};

  loc.app = app.add_subcommand("localize", "rank map cells for one DEM query");
  loc.add_run_options();
  loc.add_keys(kEncoderKeys);
  loc.add_keys(query_keys);
  loc.add_keys(cell_keys);
  loc.add_keys({{"k", "number of ranked cells to print"}});

  eval.app = app.add_subcommand("eval", "Top-1/Top-5 over every anchor of a DEM tile");
  eval.add_run_options();
  eval.add_keys(kEncoderKeys);
  eval.add_keys(query_keys);
  eval.add_keys({{"max_queries", "evaluate a seeded subset of anchors (0 = all)"}});

  heat.app = app.add_subcommand("heatmap", "similarity heatmap for one DEM query");
  heat.add_run_options();
  heat.add_keys(kEncoderKeys);
  heat.add_keys(query_keys);
  heat.add_keys(cell_keys);
  heat.add_keys({{"out", "PNG path (default <run>/figures/heatmap_r<row>c<col>.png)"}});

  ablate.app = app.add_subcommand("ablate", "train and score every cell of a parameter sweep");
  ablate.add_run_options();
  ablate.add_keys(kTrainKeys);
  ablate.add_keys(kSweepKeys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth.app) return cmd_synth(synth, synth_out);
    if (*trainc.app) return cmd_train(trainc);
    if (*build.app) return cmd_build_map(build);
    if (*loc.app) return cmd_localize(loc);
    if (*eval.app) return cmd_eval(eval);
    if (*heat.app) return cmd_heatmap(heat);
    if (*ablate.app) return cmd_ablate(ablate);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
