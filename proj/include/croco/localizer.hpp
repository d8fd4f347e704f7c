#pragma once

// The localization step: a DEM descriptor is scored against every cell of a
// feature map by cosine similarity and the best cells are returned.

#include <algorithm>
#include <numeric>
#include <optional>

#include "croco/image.hpp"
#include "croco/mapstore.hpp"

namespace croco {

struct RankedCell {
  GridCoord cell;
  double score = 0.0;
};

struct RetrievalResult {
  std::optional<GridCoord> query;  // ground truth, when known
  std::vector<RankedCell> ranking;
  int k = 0;
  std::vector<std::string> warnings;
};

/// Cosine similarity of `query` against every unit row of `cells`.
inline std::vector<double> score_cells(std::span<const float> query, const Mat<double>& cells) {
  if (query.size() != static_cast<std::size_t>(kEmbedDim)) throw Error("query embedding has the wrong dimension");
  Vec<double> q(kEmbedDim);
  for (int i = 0; i < kEmbedDim; ++i) q(i) = query[i];
  if (!q.allFinite()) throw Error("query embedding is not finite");
  const double big = q.cwiseAbs().maxCoeff();
  if (!(big > 0.0)) throw Error("query embedding is zero");
  q /= big;
  q /= q.norm();
  const Vec<double> s = cells * q;
  std::vector<double> out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out[i] = std::clamp(s(i), -1.0, 1.0);
  return out;
}

inline std::vector<double> score_cells(std::span<const float> query, const FeatureMap& map) {
  return score_cells(query, Mat<double>(map.embeddings.cast<double>()));
}

/// Higher score first; equal scores resolve to the lower row-major index.
inline bool ranks_before(const std::vector<double>& scores, std::size_t a, std::size_t b) {
  return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
}

inline std::vector<RankedCell> top_k(const std::vector<double>& scores, const FeatureMap& map, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size())
    throw Error("k must lie in [1, " + std::to_string(scores.size()) + "]");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); });
  std::vector<RankedCell> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i)
    out.push_back({{static_cast<int>(idx[i] / map.cols), static_cast<int>(idx[i] % map.cols)}, scores[idx[i]]});
  return out;
}

inline RetrievalResult localize_embedding(std::span<const float> query, const FeatureMap& map, int k) {
  RetrievalResult r;
  r.k = k;
  r.ranking = top_k(score_cells(query, map), map, k);
  return r;
}

template <PatchEncoder E>
std::vector<float> encode_query(const Patch& patch, const E& dem_encoder) {
  if (dem_encoder.modality() != Modality::DEM) throw Error("queries are encoded with the DEM branch");
  const Mat<float> z = dem_encoder.encode(std::span<const Patch>(&patch, 1));
  return {z.data(), z.data() + z.size()};
}

/// Top-k cells for one DEM patch. A fingerprint differing from the map's is
/// reported in `warnings`, not treated as an error.
template <PatchEncoder E>
RetrievalResult localize(const Patch& dem_patch, const E& dem_encoder, const FeatureMap& map, int k,
                         std::string_view encoder_fingerprint = {}) {
  if (k < 1 || static_cast<std::size_t>(k) > map.size())
    throw Error("k must lie in [1, " + std::to_string(map.size()) + "]");
  if (dem_patch.size != map.patch_px) throw Error("query patch size does not match the feature map");
  RetrievalResult r = localize_embedding(encode_query(dem_patch, dem_encoder), map, k);
  if (auto w = fingerprint_warning(map, encoder_fingerprint)) r.warnings.push_back(*w);
  return r;
}

template <PatchEncoder E>
RealGrid similarity_grid(const Patch& dem_patch, const E& dem_encoder, const FeatureMap& map) {
  if (dem_patch.size != map.patch_px) throw Error("query patch size does not match the feature map");
  return {map.rows, map.cols, score_cells(encode_query(dem_patch, dem_encoder), map)};
}

/// Affine rescale [min, max] -> [0, 255]; constant grids render as 128.
inline Image8 heatmap_image(const RealGrid& grid) {
  if (grid.rows < 1 || grid.cols < 1) throw Error("heatmap: empty grid");
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  Image8 img{grid.cols, grid.rows, 1, std::vector<std::uint8_t>(grid.values.size(), 128)};
  if (*hi > *lo) {
    const double scale = 255.0 / (*hi - *lo);
    for (std::size_t i = 0; i < grid.values.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround((grid.values[i] - *lo) * scale));
  }
  return img;
}

/// Writes `path` (PNG) and the raw scores to `path` with a .csv extension.
inline void render_heatmap(const RealGrid& grid, const std::filesystem::path& path) {
  write_png(heatmap_image(grid), path);
  auto csv = path;
  csv.replace_extension(".csv");
  write_grid_csv(grid, csv);
}

}  // namespace croco
