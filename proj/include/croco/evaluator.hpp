#pragma once

// Top-1 / Top-5 retrieval scoring over a set of DEM queries with known
// locations, and the per-cell correct/wrong error map.

#include <cmath>
#include <filesystem>

#include "croco/localizer.hpp"

namespace croco {

struct Query {
  Patch patch;
  GridCoord truth;
};

struct QueryOutcome {
  GridCoord truth;
  std::size_t rank = 0;  // 1-based rank of the true cell
};

enum class CellState : std::uint8_t { Unqueried = 0, Correct = 1, Wrong = 2 };

struct EvalReport {
  std::size_t n_queries = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  int rows = 0;
  int cols = 0;
  std::vector<QueryOutcome> outcomes;
  std::vector<CellState> error_map;   // rows x cols, Top-1 correctness
  std::vector<std::uint8_t> top5_hit; // rows x cols, 1 when the true cell was within Top-5
  std::vector<std::string> warnings;

  std::size_t top1_count() const { return static_cast<std::size_t>(std::llround(top1 * n_queries)); }
  std::size_t top5_count() const { return static_cast<std::size_t>(std::llround(top5 * n_queries)); }
};

/// 1 + number of cells that rank ahead of `truth` under ranks_before.
inline std::size_t rank_of(const std::vector<double>& scores, std::size_t truth) {
  std::size_t ahead = 0;
  const double s = scores[truth];
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && j < truth)) ++ahead;
  return ahead + 1;
}

/// Scores precomputed query embeddings (one row per query) against a map.
inline EvalReport evaluate_embeddings(const Mat<float>& queries, std::span<const GridCoord> truths,
                                      const FeatureMap& map, unsigned threads = 1) {
  if (static_cast<std::size_t>(queries.rows()) != truths.size()) throw Error("evaluate: query/truth count mismatch");
  const PatchGrid grid = map.grid();
  for (const auto& t : truths)
    if (!grid.contains(t))
      throw Error("evaluate: query location (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                  ") lies outside the map grid");
  EvalReport rep;
  rep.n_queries = truths.size();
  rep.rows = map.rows;
  rep.cols = map.cols;
  rep.outcomes.resize(truths.size());
  const Mat<double> cells = map.embeddings.cast<double>();
  for_each_chunk(truths.size(), kEncodeChunk, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto row = queries.row(static_cast<Eigen::Index>(i));
      const std::vector<float> q(row.data(), row.data() + row.size());
      const auto scores = score_cells(q, cells);
      rep.outcomes[i] = {truths[i], rank_of(scores, grid.index(truths[i]))};
    }
  });

  rep.error_map.assign(map.size(), CellState::Unqueried);
  rep.top5_hit.assign(map.size(), 0);
  std::size_t hit1 = 0, hit5 = 0;
  for (const auto& o : rep.outcomes) {
    const std::size_t idx = grid.index(o.truth);
    hit1 += o.rank == 1;
    hit5 += o.rank <= 5;
    // A cell queried twice keeps its worst outcome.
    const CellState s = o.rank == 1 ? CellState::Correct : CellState::Wrong;
    if (rep.error_map[idx] != CellState::Wrong) rep.error_map[idx] = s;
    if (o.rank <= 5) rep.top5_hit[idx] = 1;
  }
  if (rep.n_queries > 0) {
    rep.top1 = static_cast<double>(hit1) / rep.n_queries;
    rep.top5 = static_cast<double>(hit5) / rep.n_queries;
  }
  return rep;
}

template <PatchEncoder E>
EvalReport evaluate(std::span<const Query> queries, const E& dem_encoder, const FeatureMap& map,
                    std::string_view encoder_fingerprint = {}, unsigned threads = 1) {
  if (dem_encoder.modality() != Modality::DEM) throw Error("evaluate: queries are encoded with the DEM branch");
  Mat<float> z(static_cast<Eigen::Index>(queries.size()), kEmbedDim);
  std::vector<GridCoord> truths;
  truths.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.patch.size != map.patch_px) throw Error("evaluate: query patch size does not match the map");
    truths.push_back(q.truth);
  }
  for_each_chunk(queries.size(), kEncodeChunk, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<Patch> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(queries[i].patch);
    z.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) = dem_encoder.encode(batch);
  });
  EvalReport rep = evaluate_embeddings(z, truths, map, threads);
  if (auto w = fingerprint_warning(map, encoder_fingerprint)) rep.warnings.push_back(*w);
  return rep;
}

/// Queries at the map's anchors on the co-registered DEM tile: every anchor,
/// or a seeded subset of `max_queries` in row-major order.
inline std::vector<Query> queries_from_tile(const RasterTile& dem, const PatchGrid& grid, std::size_t max_queries = 0,
                                            std::uint64_t seed = 0) {
  if (dem.height_px != grid.tile_height_px || dem.width_px != grid.tile_width_px)
    throw Error("queries: DEM tile does not match the map grid");
  std::vector<std::size_t> cells;
  if (max_queries == 0 || max_queries >= grid.size()) {
    cells.resize(grid.size());
    std::iota(cells.begin(), cells.end(), 0);
  } else {
    Rng rng(seed);
    cells = sample_without_replacement(grid.size(), max_queries, rng);
    std::sort(cells.begin(), cells.end());
  }
  std::vector<Query> out;
  out.reserve(cells.size());
  for (std::size_t i : cells) out.push_back({extract_patch(dem, grid.anchor(i), grid.patch_px), grid.coord(i)});
  return out;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json outcomes = nlohmann::json::array();
  for (const auto& o : r.outcomes) outcomes.push_back({{"row", o.truth.row}, {"col", o.truth.col}, {"rank", o.rank}});
  return {{"n_queries", r.n_queries}, {"top1", r.top1}, {"top5", r.top5},   {"rows", r.rows},
          {"cols", r.cols},           {"outcomes", outcomes}, {"warnings", r.warnings}};
}

/// One-line "key=value" summary.
inline std::string summary_line(const EvalReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "top1=%.2f top5=%.2f n=%zu", r.top1, r.top5, r.n_queries);
  return buf;
}

/// Green = Top-1 correct, red = wrong (blue channel 255 when the true cell
/// was still within Top-5), gray = not queried. One pixel per grid cell.
inline Image8 error_map_image(const EvalReport& r) {
  if (r.rows < 1 || r.cols < 1) throw Error("error map: empty grid");
  Image8 img{r.cols, r.rows, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(r.rows) * r.cols * 3, 128)};
  for (int row = 0; row < r.rows; ++row)
    for (int col = 0; col < r.cols; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * r.cols + col;
      switch (r.error_map[i]) {
        case CellState::Unqueried: break;
        case CellState::Correct:
          img.at(row, col, 0) = 0, img.at(row, col, 1) = 200, img.at(row, col, 2) = 0;
          break;
        case CellState::Wrong:
          img.at(row, col, 0) = 220, img.at(row, col, 1) = 0, img.at(row, col, 2) = r.top5_hit[i] ? 255 : 0;
          break;
      }
    }
  return img;
}

/// Writes the PNG at `path` and a per-query CSV next to it.
inline void render_error_map(const EvalReport& r, const std::filesystem::path& path) {
  write_png(error_map_image(r), path);
  auto csv = path;
  csv.replace_extension(".csv");
  std::ofstream out(csv);
  if (!out) throw Error("cannot write '" + csv.string() + "'");
  out << "row,col,rank,top1,top5\n";
  for (const auto& o : r.outcomes)
    out << o.truth.row << ',' << o.truth.col << ',' << o.rank << ',' << (o.rank == 1) << ',' << (o.rank <= 5) << '\n';
}

}  // namespace croco
