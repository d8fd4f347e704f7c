#pragma once

// Sliding-window patch lattices, patch extraction, positive-pair batch
// sampling and tile-level train/val/test splits.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <unordered_map>
#include <utility>

#include "croco/raster.hpp"

namespace croco {

/// A square C x P x P patch, channel-major.
template <class T>
struct BasicPatch {
  int channels = 3;
  int size = 0;
  std::vector<T> data;

  std::size_t numel() const { return static_cast<std::size_t>(channels) * size * size; }

  template <class U>
  BasicPatch<U> cast() const {
    BasicPatch<U> out{channels, size, {}};
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const BasicPatch&) const = default;
};

using Patch = BasicPatch<float>;

struct Anchor {
  int row_px = 0;
  int col_px = 0;

  bool operator==(const Anchor&) const = default;
};

struct GridCoord {
  int row = 0;
  int col = 0;

  bool operator==(const GridCoord&) const = default;
};

/// Row-major lattice of full (never clipped) patch anchors over one tile.
struct PatchGrid {
  std::string tile_id;
  int tile_height_px = 0;
  int tile_width_px = 0;
  int patch_px = 0;
  int stride_px = 0;
  int rows = 0;
  int cols = 0;
  double gsd_m = 1.0;
  GeoOrigin origin;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  double patch_m() const { return patch_px * gsd_m; }
  double stride_m() const { return stride_px * gsd_m; }

  std::size_t index(GridCoord g) const { return static_cast<std::size_t>(g.row) * cols + g.col; }
  GridCoord coord(std::size_t i) const {
    return {static_cast<int>(i / cols), static_cast<int>(i % cols)};
  }
  Anchor anchor(GridCoord g) const { return {g.row * stride_px, g.col * stride_px}; }
  Anchor anchor(std::size_t i) const { return anchor(coord(i)); }
  bool contains(GridCoord g) const { return g.row >= 0 && g.col >= 0 && g.row < rows && g.col < cols; }

  /// Upper-left corner of the anchored patch in map coordinates.
  GeoOrigin anchor_position(GridCoord g) const {
    const Anchor a = anchor(g);
    return {origin.easting_m + a.col_px * gsd_m, origin.northing_m - a.row_px * gsd_m};
  }

  std::vector<Anchor> anchors() const {
    std::vector<Anchor> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(anchor(i));
    return out;
  }

  bool same_lattice(const PatchGrid& o) const {
    return tile_height_px == o.tile_height_px && tile_width_px == o.tile_width_px && patch_px == o.patch_px &&
           stride_px == o.stride_px && rows == o.rows && cols == o.cols;
  }
};

/// Number of anchors along one axis: floor((extent - patch) / stride) + 1.
constexpr int anchors_along(int extent_px, int patch_px, int stride_px) {
  return (extent_px - patch_px) / stride_px + 1;
}

inline PatchGrid make_grid(std::string tile_id, int height_px, int width_px, int patch_px, int stride_px,
                           double gsd_m = 1.0, GeoOrigin origin = {}) {
  if (patch_px < 1 || stride_px < 1) throw Error("grid: patch and stride must be at least one pixel");
  if (patch_px > std::min(height_px, width_px))
    throw Error("grid: patch of " + std::to_string(patch_px) + " px exceeds tile '" + tile_id + "' (" +
                std::to_string(height_px) + "x" + std::to_string(width_px) + ")");
  PatchGrid g;
  g.tile_id = std::move(tile_id);
  g.tile_height_px = height_px;
  g.tile_width_px = width_px;
  g.patch_px = patch_px;
  g.stride_px = stride_px;
  g.rows = anchors_along(height_px, patch_px, stride_px);
  g.cols = anchors_along(width_px, patch_px, stride_px);
  g.gsd_m = gsd_m;
  g.origin = origin;
  return g;
}

/// Converts a ground distance to whole pixels, rejecting fractional results.
inline int meters_to_pixels(double meters, double gsd_m, const char* what) {
  if (!(meters > 0.0)) throw Error(std::string(what) + " must be positive");
  const double px = meters / gsd_m;
  const double rounded = std::round(px);
  if (rounded < 1.0 || std::abs(px - rounded) > 1e-9 * std::max(1.0, px))
    throw Error(std::string(what) + " of " + std::to_string(meters) + " m is not a whole number of " +
                std::to_string(gsd_m) + " m pixels");
  return static_cast<int>(rounded);
}

inline PatchGrid generate_grid(const RasterTile& tile, double patch_m, double stride_m) {
  tile.validate();
  const int patch_px = meters_to_pixels(patch_m, tile.gsd_m, "patch size");
  const int stride_px = meters_to_pixels(stride_m, tile.gsd_m, "stride");
  return make_grid(tile.id, tile.height_px, tile.width_px, patch_px, stride_px, tile.gsd_m, tile.origin);
}

template <class T = float>
BasicPatch<T> extract_patch(const RasterTile& tile, Anchor anchor, int patch_px) {
  if (patch_px < 1 || anchor.row_px < 0 || anchor.col_px < 0 || anchor.row_px + patch_px > tile.height_px ||
      anchor.col_px + patch_px > tile.width_px)
    throw Error("extract_patch: anchor (" + std::to_string(anchor.row_px) + ", " + std::to_string(anchor.col_px) +
                ") out of bounds for tile '" + tile.id + "'");
  BasicPatch<T> p{tile.channels, patch_px, {}};
  p.data.resize(p.numel());
  auto* dst = p.data.data();
  for (int c = 0; c < tile.channels; ++c)
    for (int r = 0; r < patch_px; ++r) {
      const double* src = &tile.data[c * tile.plane_size() + static_cast<std::size_t>(anchor.row_px + r) * tile.width_px +
                                     anchor.col_px];
      for (int k = 0; k < patch_px; ++k) *dst++ = static_cast<T>(src[k]);
    }
  return p;
}

// ---------------------------------------------------------------------------
// Positive-pair batches

/// One co-registered RGB/DEM tile pair with its two (identical) lattices.
struct PairSource {
  const RasterTile* rgb = nullptr;
  const RasterTile* dem = nullptr;
  const PatchGrid* rgb_grid = nullptr;
  const PatchGrid* dem_grid = nullptr;

  void validate() const {
    if (!rgb || !dem || !rgb_grid || !dem_grid) throw Error("pair source is incomplete");
    if (!rgb_grid->same_lattice(*dem_grid)) throw Error("pair source: RGB and DEM grids differ");
    if (!same_geometry(*rgb, *dem)) throw Error("pair source: tiles '" + rgb->id + "' and '" + dem->id +
                                                "' are not co-registered");
    if (rgb_grid->tile_id != rgb->id || dem_grid->tile_id != dem->id)
      throw Error("pair source: grid does not belong to its tile");
  }
};

struct PatchLocation {
  std::string tile_id;
  GridCoord cell;
  Anchor anchor;

  bool operator==(const PatchLocation&) const = default;
};

struct PairBatch {
  std::vector<Patch> rgb_patches;
  std::vector<Patch> dem_patches;
  std::vector<PatchLocation> rgb_locations;
  std::vector<PatchLocation> dem_locations;

  std::size_t size() const { return rgb_patches.size(); }
};

/// Draws `n` distinct indices from [0, population) uniformly, in draw order.
/// Sparse partial Fisher-Yates: O(n) time and memory.
inline std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t n, Rng& rng) {
  if (n > population) throw Error("cannot draw " + std::to_string(n) + " distinct items from " +
                                  std::to_string(population));
  std::unordered_map<std::size_t, std::size_t> swapped;
  auto value_at = [&](std::size_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(population - i);
    const std::size_t vi = value_at(i);
    const std::size_t vj = value_at(j);
    out.push_back(vj);
    swapped[j] = vi;
  }
  return out;
}

/// Samples `n` co-located pairs uniformly without replacement from the pooled
/// anchors of all sources.
inline PairBatch sample_pair_batch(std::span<const PairSource> sources, std::size_t n, std::uint64_t seed) {
  if (sources.empty()) throw Error("sample_pair_batch: no sources");
  std::vector<std::size_t> offsets{0};
  for (const auto& s : sources) {
    s.validate();
    offsets.push_back(offsets.back() + s.rgb_grid->size());
  }
  const std::size_t population = offsets.back();
  if (n > population) throw Error("sample_pair_batch: batch of " + std::to_string(n) + " exceeds " +
                                  std::to_string(population) + " anchors");

  Rng rng(seed);
  const auto picks = sample_without_replacement(population, n, rng);
  PairBatch batch;
  batch.rgb_patches.reserve(n);
  batch.dem_patches.reserve(n);
  for (std::size_t flat : picks) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    const auto& src = sources[static_cast<std::size_t>(it - offsets.begin())];
    const GridCoord cell = src.rgb_grid->coord(flat - *it);
    const Anchor a = src.rgb_grid->anchor(cell);
    batch.rgb_patches.push_back(extract_patch(*src.rgb, a, src.rgb_grid->patch_px));
    batch.dem_patches.push_back(extract_patch(*src.dem, a, src.dem_grid->patch_px));
    batch.rgb_locations.push_back({src.rgb->id, cell, a});
    batch.dem_locations.push_back({src.dem->id, cell, src.dem_grid->anchor(cell)});
  }
  return batch;
}

inline PairBatch sample_pair_batch(const RasterTile& rgb, const PatchGrid& rgb_grid, const RasterTile& dem,
                                   const PatchGrid& dem_grid, std::size_t n, std::uint64_t seed) {
  const PairSource src{&rgb, &dem, &rgb_grid, &dem_grid};
  return sample_pair_batch(std::span<const PairSource>(&src, 1), n, seed);
}

/// A co-registered RGB/DEM tile pair. Splits are assigned per pair `id`.
struct TilePair {
  std::string id;
  RasterTile rgb;
  RasterTile dem;
};

// ---------------------------------------------------------------------------
// Splits

enum class Split { Train, Val, Test };

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

struct SplitAssignment {
  std::set<std::string> train;
  std::set<std::string> val;
  std::set<std::string> test;
  std::vector<std::string> warnings;

  bool is_train(const std::string& id) const { return train.count(id) > 0; }
};

using SplitSpec = std::vector<std::pair<std::string, std::string>>;

inline SplitAssignment assign_splits(std::span<const std::string> tile_ids, const SplitSpec& spec) {
  std::set<std::string> declared(tile_ids.begin(), tile_ids.end());
  if (declared.size() != tile_ids.size()) throw Error("assign_splits: duplicate tile id in tile list");
  SplitAssignment out;
  std::set<std::string> seen;
  for (const auto& [id, split] : spec) {
    if (!seen.insert(id).second) throw Error("assign_splits: tile '" + id + "' assigned more than once");
    if (!declared.count(id)) throw Error("assign_splits: tile '" + id + "' is not in the tile set");
    switch (split_from_string(split)) {
      case Split::Train: out.train.insert(id); break;
      case Split::Val: out.val.insert(id); break;
      case Split::Test: out.test.insert(id); break;
    }
  }
  for (const auto& id : declared)
    if (!seen.count(id)) throw Error("assign_splits: tile '" + id + "' has no split");
  if (out.test.empty()) out.warnings.push_back("test split is empty");
  if (out.val.empty()) out.warnings.push_back("validation split is empty");
  return out;
}

/// Reads a JSON object mapping tile id to "train" / "val" / "test". Repeated
/// keys are kept so assign_splits can reject them.
inline SplitSpec load_split_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split spec '" + path.string() + "'");
  SplitSpec spec;
  std::vector<std::string> keys;
  try {
    auto j = nlohmann::json::parse(in, [&](int depth, nlohmann::json::parse_event_t ev, nlohmann::json& parsed) {
      if (depth == 1 && ev == nlohmann::json::parse_event_t::key) keys.push_back(parsed.get<std::string>());
      if (depth == 1 && ev == nlohmann::json::parse_event_t::value && !keys.empty()) {
        if (!parsed.is_string()) throw Error("split spec: value for '" + keys.back() + "' must be a string");
        spec.emplace_back(keys.back(), parsed.get<std::string>());
      }
      return true;
    });
    if (!j.is_object()) throw Error("split spec must be a JSON object");
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad split spec '" + path.string() + "': " + e.what());
  }
  return spec;
}

inline void write_split_spec(const SplitSpec& spec, const std::filesystem::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, split] : spec) j[id] = split;
  std::ofstream out(path);
  if (!out) throw Error("cannot write split spec '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

/// Throws LeakageError if a training tile would be used for evaluation or an
/// evaluation tile for training.
inline void check_no_leakage(const SplitAssignment& splits, std::span<const std::string> training_tiles,
                             std::span<const std::string> evaluation_tiles) {
  for (const auto& id : training_tiles)
    if (!splits.is_train(id)) throw LeakageError("split leakage: tile '" + id + "' used for training but is not in train");
  for (const auto& id : evaluation_tiles)
    if (splits.is_train(id)) throw LeakageError("split leakage: training tile '" + id + "' used for evaluation");
}

}  // namespace croco
