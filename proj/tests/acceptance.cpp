// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
// Usage: acceptance [A1 A2 ...]   (default: all)

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>

#include "croco/croco.hpp"
#include "oracles.hpp"

using namespace croco;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Mat<double> random_rows(std::mt19937_64& g, int n, int d) {
  std::normal_distribution<double> nd;
  Mat<double> m(n, d);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = nd(g);
  return m;
}

oracle::Rows to_rows(const Mat<double>& m) {
  oracle::Rows out(m.rows(), std::vector<double>(m.cols()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

double fd_rel(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

FeatureMap map_from_rows(const oracle::Rows& rows, int r, int c) {
  FeatureMap m;
  m.tile_id = "acc_rgb";
  m.rows = r;
  m.cols = c;
  m.patch_px = 8;
  m.stride_px = 1;
  m.tile_height_px = r + 7;
  m.tile_width_px = c + 7;
  m.fingerprint = "acc";
  m.embeddings.resize(r * c, kEmbedDim);
  for (int i = 0; i < r * c; ++i)
    for (int k = 0; k < kEmbedDim; ++k) m.embeddings(i, k) = static_cast<float>(rows[i][k]);
  return m;
}

Dataset scene_dataset(const SceneSpec& spec, int k) {
  const auto tiles = cut_scene(generate_scene(spec, "acc"), k, "acc");
  std::vector<std::string> ids;
  for (const auto& t : tiles) ids.push_back(t.id);
  return {tiles, assign_splits(ids, default_split_spec(tiles))};
}

// ---------------------------------------------------------------------------

Outcome a1() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(101);
  const double taus[] = {0.1, 0.5, 1.0};
  double worst = 0.0;
  for (int b = 0; b < 200; ++b) {
    const int n = 2 + static_cast<int>(g() % 7), d = 4 + static_cast<int>(g() % 13);
    const double tau = taus[g() % 3];
    const bool cross = b % 2 == 1;
    const Mat<double> rgb = random_rows(g, n, d), dem = random_rows(g, n, d);
    const double got = nt_xent(rgb, dem, LossConfig{tau, cross ? NegativeSet::CrossModalOnly : NegativeSet::All2N}).loss;
    const long double want = oracle::nt_xent(to_rows(rgb), to_rows(dem), tau, cross);
    worst = std::max(worst, static_cast<double>(std::abs(got - want) / std::abs(want)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, fmt("200 batches, max rel err %.3g, %.2f s", worst, secs)};
}

Outcome a2() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(202);
  const double h = 1e-5;
  double loss_worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + static_cast<int>(g() % 5), d = 3 + static_cast<int>(g() % 8);
    const LossConfig cfg{inst % 3 == 0 ? 0.1 : 0.5, inst % 2 ? NegativeSet::CrossModalOnly : NegativeSet::All2N};
    const Mat<double> rgb = random_rows(g, n, d), dem = random_rows(g, n, d);
    const auto grad = nt_xent_grad(rgb, dem, cfg);
    for (int side = 0; side < 2; ++side)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          Mat<double> p = side ? dem : rgb, m = p;
          p(i, j) += h;
          m(i, j) -= h;
          const double lp = side ? nt_xent(rgb, p, cfg).loss : nt_xent(p, dem, cfg).loss;
          const double lm = side ? nt_xent(rgb, m, cfg).loss : nt_xent(m, dem, cfg).loss;
          const double an = side ? grad.d_dem(i, j) : grad.d_rgb(i, j);
          loss_worst = std::max(loss_worst, fd_rel(an, (lp - lm) / (2 * h)));
        }
  }

  // End to end through both desk branches on a 2-pair batch of 8x8 patches.
  auto rgb = init_branch<double>(Modality::RGB, Arch::Desk, 31);
  auto dem = init_branch<double>(Modality::DEM, Arch::Desk, 32);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<BasicPatch<double>> xr, xd;
  for (int i = 0; i < 2; ++i) {
    BasicPatch<double> a{3, 8, std::vector<double>(192)}, b{3, 8, std::vector<double>(192)};
    for (auto& v : a.data) v = u(g);
    for (auto& v : b.data) v = u(g);
    xr.push_back(a);
    xd.push_back(b);
  }
  const LossConfig cfg{0.5, NegativeSet::All2N};
  auto loss = [&] { return nt_xent(rgb.forward(xr), dem.forward(xd), cfg).loss; };
  EncoderBranch<double>::Cache cr, cd;
  const Mat<double> zr = rgb.forward(xr, cr), zd = dem.forward(xd, cd);
  const auto lg = nt_xent_grad(zr, zd, cfg);
  const auto gr = rgb.backward(cr, lg.d_rgb), gd = dem.backward(cd, lg.d_dem);
  double net_worst = 0.0;
  std::size_t checked = 0;
  for (int side = 0; side < 2; ++side) {
    auto& br = side ? dem : rgb;
    const auto& grads = side ? gd : gr;
    for (std::size_t blk = 0; blk < br.params().size(); ++blk) {
      auto& w = br.params()[blk].value;
      for (int t = 0; t < 64; ++t) {
        const std::size_t i = g() % w.size();
        const double w0 = w[i];
        w[i] = w0 + h;
        const double lp = loss();
        w[i] = w0 - h;
        const double lm = loss();
        w[i] = w0;
        net_worst = std::max(net_worst, fd_rel(grads[blk][i], (lp - lm) / (2 * h)));
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {loss_worst <= 1e-4 && net_worst <= 1e-4 && secs < 60.0,
          fmt("loss: 50 instances max rel err %.3g; desk net: %zu params max rel err %.3g; %.1f s", loss_worst,
              checked, net_worst, secs)};
}

struct A3Artifacts {
  TrainResult result;
  SplitScore val;
  bool ran = false;
};
A3Artifacts g_a3;

Outcome a3() {
  const auto t0 = Clock::now();
  SceneSpec spec;
  spec.seed = 1;
  spec.size_px = 512;
  spec.gsd_m = 0.5;
  // 2x2 tiles of 256 px: three train, the last one held out for validation.
  Dataset data = scene_dataset(spec, 2);
  std::vector<std::string> ids;
  SplitSpec split;
  for (const auto& t : data.tiles) {
    ids.push_back(t.id);
    split.emplace_back(t.id, ids.size() < 4 ? "train" : "val");
  }
  data.splits = assign_splits(ids, split);
  TrainConfig cfg;
  cfg.arch = Arch::Desk;
  cfg.batch_size = 32;
  cfg.steps = 2000;
  cfg.patch_m = 16.0;  // 32 px
  cfg.stride_m = 2.0;  // 4 px
  cfg.eval_every = 500;
  cfg.eval_max_queries = 400;
  g_a3.result = train(data, cfg);
  TrainConfig full = cfg;
  full.eval_max_queries = 0;
  std::vector<EvalReport> reports;
  g_a3.val = evaluate_checkpoint(g_a3.result.final_checkpoint, data, data.splits.val, full, &reports);
  g_a3.ran = true;
  const double m = static_cast<double>(reports.at(0).rows) * reports.at(0).cols;
  const double secs = seconds_since(t0);
  const bool ok = g_a3.val.top1 >= 5.0 / m && g_a3.val.top5 >= 25.0 / m && secs <= 600.0;
  return {ok, fmt("M=%.0f top1=%.4f (need %.4f) top5=%.4f (need %.4f) final loss %.3f, %.0f s", m, g_a3.val.top1,
                  5.0 / m, g_a3.val.top5, 25.0 / m, g_a3.result.log.back().loss, secs)};
}

Outcome a4() {
  double worst = 0.0;
  for (int n : {2, 4, 8}) {
    Mat<double> z(n, 6);
    for (int i = 0; i < z.size(); ++i) z.data()[i] = 0.25 * (i % 6 + 1);
    for (int i = 1; i < n; ++i) z.row(i) = z.row(0);
    for (double tau : {0.1, 0.5, 1.0})
      worst = std::max(worst, std::abs(nt_xent(z, z, LossConfig{tau, NegativeSet::All2N}).loss - std::log(2.0 * n - 1)));
  }
  Mat<double> e = Mat<double>::Identity(2, 2);
  const double orth = nt_xent(e, e, LossConfig{1.0, NegativeSet::All2N}).loss;
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  const double err = std::abs(orth - want);
  return {worst <= 1e-12 && err <= 1e-12,
          fmt("identical: max |L - ln(2N-1)| = %.3g; orthogonal N=2: %.15f vs %.15f", worst, orth, want)};
}

Outcome a5() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(505);
  int bad = 0, with_ties = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int rows = 1 + static_cast<int>(g() % 8), cols = 1 + static_cast<int>(g() % 8), m = rows * cols;
    oracle::Rows pool;
    const int distinct = 1 + static_cast<int>(g() % 4);
    for (int i = 0; i < distinct; ++i) pool.push_back(oracle::random_unit(g, kEmbedDim));
    oracle::Rows cells;
    for (int i = 0; i < m; ++i) cells.push_back(pool[g() % pool.size()]);
    const auto map = map_from_rows(cells, rows, cols);
    const auto q = oracle::random_unit(g, kEmbedDim);
    std::vector<double> oracle_scores;
    for (const auto& c : cells) oracle_scores.push_back(static_cast<double>(oracle::cosine(q, c)));
    const auto order = oracle::sorted_cells(oracle_scores);
    with_ties += static_cast<int>(std::set<double>(oracle_scores.begin(), oracle_scores.end()).size()) < m;
    const int k = 1 + static_cast<int>(g() % m);
    const auto r = localize_embedding(std::vector<float>(q.begin(), q.end()), map, k);
    for (int i = 0; i < k; ++i)
      if (static_cast<std::size_t>(r.ranking[i].cell.row * cols + r.ranking[i].cell.col) != order[i]) {
        ++bad;
        break;
      }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && with_ties > 0 && secs < 5.0,
          fmt("100 instances (%d with ties), %d mismatches, %.2f s", with_ties, bad, secs)};
}

Outcome a6() {
  SceneSpec spec;
  spec.seed = 6;
  spec.size_px = 268;  // (268 - 16) / 4 + 1 = 64 anchors per side
  spec.flat_strip = false;
  const Scene s = generate_scene(spec, "a6");
  const auto grid = make_grid(s.rgb.id, s.rgb.height_px, s.rgb.width_px, 16, 4);
  const auto pair = oracle_branch_pair(s.rgb, s.dem, grid, 6);
  const auto map = build_feature_map(s.rgb, grid, pair.rgb, "oracle:6");
  PatchGrid dem_grid = grid;
  dem_grid.tile_id = s.dem.id;
  const auto queries = queries_from_tile(s.dem, dem_grid);
  const auto rep = evaluate(std::span<const Query>(queries), pair.dem, map);

  std::mt19937_64 g(606);
  oracle::Rows cells;
  for (int i = 0; i < 100; ++i) cells.push_back(oracle::random_unit(g, kEmbedDim));
  const auto rmap = map_from_rows(cells, 10, 10);
  const std::size_t n = 4000;
  Mat<float> q(static_cast<Eigen::Index>(n), kEmbedDim);
  std::vector<GridCoord> truths;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = oracle::random_unit(g, kEmbedDim);
    for (int k = 0; k < kEmbedDim; ++k) q(static_cast<Eigen::Index>(i), k) = static_cast<float>(v[k]);
    truths.push_back({static_cast<int>(g() % 10), static_cast<int>(g() % 10)});
  }
  const auto rnd = evaluate_embeddings(q, truths, rmap);
  const double p = 0.05, sigma = std::sqrt(p * (1 - p) / n), z = (rnd.top5 - p) / sigma;
  const bool ok = grid.rows == 64 && grid.cols == 64 && rep.n_queries == 4096 && rep.top1 == 1.0 && rep.top5 == 1.0 &&
                  std::abs(z) <= 5.0;
  return {ok, fmt("oracle %dx%d grid: top1=%.4f top5=%.4f over %zu queries; random M=100: top5=%.4f (z=%.2f) over %zu",
                  grid.rows, grid.cols, rep.top1, rep.top5, rep.n_queries, rnd.top5, z, n)};
}

Outcome a7() {
  const auto dir = oracle::scratch_dir("acceptance_a7");
  std::vector<std::string> problems;

  Checkpoint ck = make_checkpoint(Arch::Desk, 77);
  ck.rgb_stats = {Modality::RGB, {120.5, 98.25, 77.0}, {30.0, 29.5, 31.25}};
  ck.dem_stats = {Modality::DEM, {210.0, 205.5, 212.0}, {8.5, 6.0, 9.0}};
  ck.step = 42;
  save_checkpoint(ck, dir / "c.ckpt");
  const Checkpoint ck2 = load_checkpoint(dir / "c.ckpt");
  if (!(ck2 == ck)) problems.push_back("checkpoint differs after round trip");
  if (serialize_checkpoint(ck2) != serialize_checkpoint(ck)) problems.push_back("checkpoint bytes differ");

  SceneSpec spec;
  spec.size_px = 128;
  const Scene s = generate_scene(spec, "a7");
  const auto grid = make_grid(s.rgb.id, 128, 128, 16, 8);
  auto map = build_feature_map(s.rgb, grid, ck.rgb, ck.fingerprint());
  save_map(map, dir / "m.map");
  const FeatureMap map2 = load_map(dir / "m.map");
  if (!(map2 == map)) problems.push_back("map differs after round trip");

  // Byte layout: magic, u64 LE header length, header, f32 LE payload.
  const auto bytes = serialize_map(map);
  std::uint64_t hlen = 0;
  for (int b = 0; b < 8; ++b)
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[kMapMagic.size() + b])) << (8 * b);
  const std::size_t payload = kMapMagic.size() + 8 + hlen;
  if (bytes.size() != payload + map.size() * kEmbedDim * 4) problems.push_back("unexpected map file size");
  for (std::size_t i = 0; i < map.size() * kEmbedDim && problems.empty(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[payload + 4 * i + b])) << (8 * b);
    if (bits != std::bit_cast<std::uint32_t>(map.embeddings.data()[i])) problems.push_back("payload is not LE f32");
  }

  double max_diff = 0.0;
  for (std::size_t i = 0; i < grid.size(); i += 7) {
    const auto p = extract_patch(s.dem, grid.anchor(i), 16);
    const auto q = encode_query(p, ck.dem);
    const auto a = score_cells(q, map), b = score_cells(encode_query(p, ck2.dem), map2);
    for (std::size_t j = 0; j < a.size(); ++j) max_diff = std::max(max_diff, std::abs(a[j] - b[j]));
  }
  if (max_diff != 0.0) problems.push_back(fmt("scores moved by %.3g", max_diff));
  std::string detail = "checkpoint and map round trips bit-exact, LE layout verified, score diff 0";
  if (!problems.empty()) detail = problems.front();
  return {problems.empty(), detail};
}

Outcome a8() {
  std::size_t cases = 0, bad = 0;
  for (int h = 1; h <= 64; ++h)
    for (int w = 1; w <= 64; ++w)
      for (int p = 1; p <= std::min(h, w); ++p)
        for (int s = 1; s <= std::max(h, w); ++s) {
          const auto g = make_grid("t", h, w, p, s);
          ++cases;
          if (g.rows != (h - p) / s + 1 || g.cols != (w - p) / s + 1 || g.rows != oracle::count_positions(h, p, s) ||
              g.cols != oracle::count_positions(w, p, s))
            ++bad;
        }
  RasterTile t = make_tile("dfc", Modality::RGB, 3, 601, 596, 1.0);
  const auto paper = generate_grid(t, 32.0, 2.0);
  const auto last = paper.anchor(paper.size() - 1);
  const bool ok = bad == 0 && paper.rows == 285 && paper.cols == 283 && last.row_px + 32 <= 601 &&
                  last.row_px + 32 + 2 > 601 && last.col_px + 32 <= 596 && last.col_px + 32 + 2 > 596;
  return {ok, fmt("%zu (H, W, P, S) cases, %zu mismatches; 601x596 P=32 S=2 -> %dx%d", cases, bad, paper.rows,
                  paper.cols)};
}

Outcome a9() {
  std::vector<std::string> problems;
  std::size_t runs = 0;
  auto check_log = [&](const TrainLog& log, const char* what) {
    ++runs;
    for (const auto& e : log) {
      if (!(e.loss >= 0.0)) problems.push_back(fmt("%s: negative loss at step %llu", what, (unsigned long long)e.step));
      if (e.top1 && !(*e.top1 <= *e.top5)) problems.push_back(fmt("%s: top1 > top5", what));
    }
  };

  SceneSpec spec;
  spec.seed = 9;
  spec.size_px = 256;
  const Dataset data = scene_dataset(spec, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.steps = 60;
  cfg.patch_m = 8.0;
  cfg.eval_every = 20;
  cfg.eval_max_queries = 100;
  try {
    const auto r = train(data, cfg);
    check_log(r.log, "small run");
    std::vector<EvalReport> reps;
    const auto score = evaluate_checkpoint(r.best_checkpoint, data, data.splits.test, cfg, &reps);
    if (!(score.top1 <= score.top5)) problems.push_back("test top1 > top5");

    // Ranking must not change when query embeddings are scaled by positive factors.
    const auto p = prepare_tiles(data, cfg, std::make_pair(r.best_checkpoint.rgb_stats, r.best_checkpoint.dem_stats));
    const auto idx = p.indices_in(data.splits.test).at(0);
    const auto map = build_feature_map(p.tiles[idx].rgb, p.rgb_grids[idx], r.best_checkpoint.rgb, "a9");
    for (std::size_t i = 0; i < p.dem_grids[idx].size(); i += 13) {
      const auto q = encode_query(extract_patch(p.tiles[idx].dem, p.dem_grids[idx].anchor(i), p.dem_grids[idx].patch_px),
                                  r.best_checkpoint.dem);
      const auto base = localize_embedding(q, map, 10);
      for (float f : {1e-4f, 0.5f, 3.0f, 1e4f}) {
        std::vector<float> scaled = q;
        for (auto& v : scaled) v *= f;
        const auto rr = localize_embedding(scaled, map, 10);
        for (int k = 0; k < 10; ++k)
          if (!(rr.ranking[k].cell == base.ranking[k].cell)) {
            problems.push_back(fmt("ranking changed under scale %g", f));
            k = 10;
          }
      }
    }
  } catch (const LeakageError& e) {
    problems.push_back(std::string("leakage assertion fired: ") + e.what());
  }
  if (g_a3.ran) {
    check_log(g_a3.result.log, "A3 run");
    if (!(g_a3.val.top1 <= g_a3.val.top5)) problems.push_back("A3 top1 > top5");
  }
  return {problems.empty(),
          problems.empty() ? fmt("%zu training runs checked: loss >= 0, top1 <= top5, scale-invariant ranking, no leakage",
                                 runs)
                           : problems.front()};
}

/// Mean Top-1 over seeds for each value of one swept parameter.
struct TrendCheck {
  double mean_small = 0, std_small = 0, mean_large = 0, std_large = 0, pooled = 0;
  std::size_t failed = 0;
  bool holds() const { return failed == 0 && mean_large >= mean_small - pooled; }
};

TrendCheck trend(const AblationTable& t) {
  TrendCheck c;
  c.mean_small = t.summary.at(0).top1_mean;
  c.std_small = t.summary.at(0).top1_std;
  c.mean_large = t.summary.at(1).top1_mean;
  c.std_large = t.summary.at(1).top1_std;
  c.pooled = std::sqrt((c.std_small * c.std_small + c.std_large * c.std_large) / 2.0);
  c.failed = t.summary[0].failed + t.summary[1].failed;
  return c;
}

Outcome a10() {
  const auto t0 = Clock::now();
  SceneSpec spec;
  spec.seed = 10;
  spec.size_px = 512;
  const Dataset data = scene_dataset(spec, 2);
  TrainConfig base;
  base.steps = 1000;
  base.stride_m = 2.0;  // 4 px
  base.eval_every = 250;
  base.eval_max_queries = 400;
  const std::vector<std::uint64_t> seeds = {1, 2, 3};

  TrainConfig bcfg = base;
  bcfg.patch_m = 8.0;  // 16 px
  SweepSpec batch;
  batch.batch_size = {8, 64};
  batch.seeds = seeds;
  const auto bt = trend(run_ablation(data, bcfg, batch));

  TrainConfig pcfg = base;
  pcfg.batch_size = 32;
  SweepSpec patch;
  patch.patch_m = {8.0, 32.0};  // 16 px vs 64 px
  patch.seeds = seeds;
  const auto pt = trend(run_ablation(data, pcfg, patch));

  return {bt.holds() && pt.holds(),
          fmt("batch 8 vs 64: %.4f+-%.4f vs %.4f+-%.4f; patch 16 vs 64 px: %.4f+-%.4f vs %.4f+-%.4f "
              "(mean Top-1 over 3 seeds, %zu failed cells), %.0f s",
              bt.mean_small, bt.std_small, bt.mean_large, bt.std_large, pt.mean_small, pt.std_small, pt.mean_large,
              pt.std_large, bt.failed + pt.failed, seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s %s\n", name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
