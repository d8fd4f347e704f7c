#pragma once

// Synthetic co-registered RGB/DEM scenes with known ground truth, and oracle
// encoders that bypass learning.
//
// A scene shares one latent heightfield between both modalities:
//   terrain    seeded multi-octave value noise, optionally with a flattened
//              homogeneous strip (a "road")
//   structures raised rectangular prisms
// DEM channels: terrain + structures (surface model), terrain only
// (void-filled bare earth), flat-roofed hybrid. RGB: slope shading of the
// surface model, a chroma tint that follows terrain elevation (roofs get
// their own tint), and uniform texture noise, quantized to 8-bit values.

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "croco/encoder.hpp"
#include "croco/raster.hpp"
#include "croco/sampling.hpp"

namespace croco {

struct SceneSpec {
  std::uint64_t seed = 0;
  int size_px = 512;
  double gsd_m = 0.5;
  int n_structures = 40;
  double terrain_smoothness = 48.0;  // wavelength of the coarsest noise octave, pixels
  double texture_noise = 0.05;       // half-width of the uniform per-pixel noise, [0, 1)
  double terrain_relief_m = 12.0;    // amplitude of the terrain noise
  bool flat_strip = true;
  GeoOrigin origin{500000.0, 3300000.0};

  void validate() const {
    if (size_px < 2 * kSupportedPatchSizes.back())
      throw Error("scene size must be at least " + std::to_string(2 * kSupportedPatchSizes.back()) + " px");
    if (!(gsd_m > 0.0)) throw Error("scene gsd must be positive");
    if (n_structures < 0) throw Error("structure count must be non-negative");
    if (!(terrain_smoothness > 0.0)) throw Error("terrain smoothness must be positive");
    if (!(texture_noise >= 0.0 && texture_noise < 1.0)) throw Error("texture noise must lie in [0, 1)");
    if (!(terrain_relief_m >= 0.0)) throw Error("terrain relief must be non-negative");
  }
};

struct Scene {
  RasterTile rgb;
  RasterTile dem;
  std::vector<std::uint8_t> structure_mask;  // row-major, 1 on footprints
  std::vector<std::uint8_t> flat_mask;       // row-major, 1 inside the flat strip
};

namespace detail {

/// Deterministic lattice value in [-1, 1] for integer coordinates.
inline double lattice_value(std::uint64_t seed, int octave, int ix, int iy) {
  std::uint64_t h = Rng::combine(seed, static_cast<std::uint64_t>(octave));
  h = Rng::combine(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)));
  h = Rng::combine(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

inline double value_noise(std::uint64_t seed, int octave, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double tx = smoothstep(x - x0), ty = smoothstep(y - y0);
  const double a = lattice_value(seed, octave, x0, y0), b = lattice_value(seed, octave, x0 + 1, y0);
  const double c = lattice_value(seed, octave, x0, y0 + 1), d = lattice_value(seed, octave, x0 + 1, y0 + 1);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

}  // namespace detail

/// Lambertian slope shading of a heightfield (meters) with a fixed light
/// from the north-west at 45 degrees elevation. Returns values in [0, 1].
inline std::vector<double> hillshade(std::span<const double> height, int rows, int cols, double gsd_m) {
  constexpr double kAzimuth = 315.0 * 3.14159265358979323846 / 180.0;
  constexpr double kAltitude = 45.0 * 3.14159265358979323846 / 180.0;
  // x east, y north, z up.
  const double lx = std::cos(kAltitude) * std::sin(kAzimuth);
  const double ly = std::cos(kAltitude) * std::cos(kAzimuth);
  const double lz = std::sin(kAltitude);
  std::vector<double> out(height.size());
  auto at = [&](int r, int c) {
    r = std::clamp(r, 0, rows - 1);
    c = std::clamp(c, 0, cols - 1);
    return height[static_cast<std::size_t>(r) * cols + c];
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double dzdx = (at(r, c + 1) - at(r, c - 1)) / (2.0 * gsd_m);
      const double dzdy = (at(r - 1, c) - at(r + 1, c)) / (2.0 * gsd_m);  // row index grows southward
      const double nx = -dzdx, ny = -dzdy, nz = 1.0;
      const double shade = (nx * lx + ny * ly + nz * lz) / std::sqrt(nx * nx + ny * ny + nz * nz);
      out[static_cast<std::size_t>(r) * cols + c] = std::max(0.0, shade);
    }
  return out;
}

inline Scene generate_scene(const SceneSpec& spec, const std::string& id = "scene") {
  spec.validate();
  const int n = spec.size_px;
  const std::size_t npx = static_cast<std::size_t>(n) * n;
  Scene scene;
  scene.structure_mask.assign(npx, 0);
  scene.flat_mask.assign(npx, 0);

  // Terrain.
  std::vector<double> terrain(npx, 0.0);
  if (spec.terrain_relief_m > 0.0) {
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double v = 0.0, amp = 1.0, wavelength = spec.terrain_smoothness;
        for (int octave = 0; octave < 3; ++octave) {
          v += amp * detail::value_noise(spec.seed, octave, c / wavelength, r / wavelength);
          amp *= 0.5;
          wavelength *= 0.5;
        }
        terrain[static_cast<std::size_t>(r) * n + c] = spec.terrain_relief_m * v / 1.75;
      }
  }

  Rng rng(Rng::combine(spec.seed, 0x5354u));
  int strip_lo = 0, strip_hi = 0;
  if (spec.flat_strip) {
    const int width = std::max(4, n / 12);
    strip_lo = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - width)));
    strip_hi = strip_lo + width;
    double level = 0.0;
    for (int c = 0; c < n; ++c) level += terrain[static_cast<std::size_t>(strip_lo) * n + c];
    level /= n;
    for (int r = strip_lo; r < strip_hi; ++r)
      for (int c = 0; c < n; ++c) {
        terrain[static_cast<std::size_t>(r) * n + c] = level;
        scene.flat_mask[static_cast<std::size_t>(r) * n + c] = 1;
      }
  }

  // Structures: rectangles with a height and a roof tint; later ones win.
  std::vector<double> struct_height(npx, 0.0);
  std::vector<int> struct_id(npx, -1);
  std::vector<std::array<double, 3>> roof_tint;
  std::vector<double> roof_base;
  for (int s = 0; s < spec.n_structures; ++s) {
    const int min_side = std::max(3, n / 48), max_side = std::max(min_side + 1, n / 10);
    const int h = min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - min_side)));
    const int w = min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - min_side)));
    const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - h)));
    const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - w)));
    const double height = rng.uniform(3.0, 20.0);
    std::array<double, 3> tint{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double mean = (tint[0] + tint[1] + tint[2]) / 3.0;
    for (auto& t : tint) t = 0.35 * (t - mean);
    if (spec.flat_strip && r0 < strip_hi && r0 + h > strip_lo) continue;  // keep the road clear
    double base = std::numeric_limits<double>::infinity();
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) base = std::min(base, terrain[static_cast<std::size_t>(r) * n + c]);
    const int sid = static_cast<int>(roof_tint.size());
    roof_tint.push_back(tint);
    roof_base.push_back(base);
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * n + c;
        struct_height[i] = height;
        struct_id[i] = sid;
        scene.structure_mask[i] = 1;
      }
  }

  scene.dem = make_tile(id + "_dem", Modality::DEM, 3, n, n, spec.gsd_m, spec.origin);
  auto dsm = scene.dem.plane(0), bare = scene.dem.plane(1), hybrid = scene.dem.plane(2);
  for (std::size_t i = 0; i < npx; ++i) {
    dsm[i] = terrain[i] + struct_height[i];
    bare[i] = terrain[i];
    hybrid[i] = struct_id[i] >= 0 ? roof_base[struct_id[i]] + struct_height[i] : terrain[i];
  }

  // RGB.
  const auto shade = hillshade(dsm, n, n, spec.gsd_m);
  const auto [tmin_it, tmax_it] = std::minmax_element(terrain.begin(), terrain.end());
  const double trange = *tmax_it - *tmin_it;
  scene.rgb = make_tile(id + "_rgb", Modality::RGB, 3, n, n, spec.gsd_m, spec.origin);
  Rng noise(Rng::combine(spec.seed, 0x4e4f4953u));
  for (std::size_t i = 0; i < npx; ++i) {
    const double lum = 0.1 + 0.8 * shade[i];
    std::array<double, 3> chroma{0.0, 0.0, 0.0};
    if (struct_id[i] >= 0) {
      chroma = roof_tint[struct_id[i]];
    } else if (!scene.flat_mask[i]) {
      const double t = trange > 0.0 ? (terrain[i] - *tmin_it) / trange - 0.5 : 0.0;
      chroma = {0.3 * t, -0.3 * t, 0.0};
    }
    for (int c = 0; c < 3; ++c) {
      const double jitter = spec.texture_noise > 0.0 ? noise.uniform(-spec.texture_noise, spec.texture_noise) : 0.0;
      const double v = std::clamp(lum * (1.0 + chroma[c]) + jitter, 0.0, 1.0);
      scene.rgb.plane(c)[i] = std::round(255.0 * v);
    }
  }
  return scene;
}

/// Cuts a co-registered scene into a k x k lattice of tile pairs named
/// `<base>_r<i>c<j>`, row-major.
inline std::vector<TilePair> cut_scene(const Scene& scene, int k, const std::string& base = "scene") {
  if (k < 1) throw Error("cut_scene: tile count must be positive");
  const int th = scene.rgb.height_px / k, tw = scene.rgb.width_px / k;
  if (th < 1 || tw < 1) throw Error("cut_scene: too many tiles");
  std::vector<TilePair> out;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const std::string id = base + "_r" + std::to_string(i) + "c" + std::to_string(j);
      out.push_back({id, crop(scene.rgb, i * th, j * tw, th, tw, id + "_rgb"),
                     crop(scene.dem, i * th, j * tw, th, tw, id + "_dem")});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle encoders

/// Deterministic unit-variance Gaussian 128-vector keyed by an integer.
inline std::vector<float> hashed_embedding(std::uint64_t key) {
  Rng rng(key);
  std::vector<float> v(kEmbedDim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

inline std::uint64_t patch_content_hash(const Patch& p) {
  Fnv1a h;
  for (float v : p.data) h.update_f32(v);
  return h.digest();
}

/// Maps a patch to a seeded vector of its anchor. The anchor is recovered by
/// looking up the patch content among the indexed grid cells, so co-located
/// RGB and DEM patches get identical vectors; anything not on the grid gets a
/// vector keyed by its content.
class OracleEncoder {
public:
  OracleEncoder(const RasterTile& tile, const PatchGrid& grid, std::uint64_t seed)
      : modality_(tile.modality), seed_(seed), patch_px_(grid.patch_px) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Patch p = extract_patch(tile, grid.anchor(i), grid.patch_px);
      if (!index_.emplace(patch_content_hash(p), grid.coord(i)).second) ++collisions_;
    }
  }

  /// Cells whose content repeats an earlier cell (e.g. inside the flat
  /// strip). Those resolve to the earliest such cell.
  std::size_t collisions() const { return collisions_; }

  Modality modality() const { return modality_; }

  std::vector<float> embed(const Patch& p) const {
    const std::uint64_t h = patch_content_hash(p);
    const auto it = index_.find(h);
    if (it == index_.end()) return hashed_embedding(Rng::combine(seed_ ^ 0xa5a5a5a5ULL, h));
    const auto key = Rng::combine(Rng::combine(seed_, static_cast<std::uint64_t>(it->second.row)),
                                  static_cast<std::uint64_t>(it->second.col));
    return hashed_embedding(key);
  }

  Mat<float> encode(std::span<const Patch> patches) const {
    Mat<float> out(static_cast<Eigen::Index>(patches.size()), kEmbedDim);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const auto v = embed(patches[i]);
      for (int k = 0; k < kEmbedDim; ++k) out(static_cast<Eigen::Index>(i), k) = v[k];
    }
    return out;
  }

private:
  Modality modality_;
  std::uint64_t seed_;
  int patch_px_;
  std::size_t collisions_ = 0;
  std::unordered_map<std::uint64_t, GridCoord> index_;
};

struct OraclePair {
  OracleEncoder rgb;
  OracleEncoder dem;
};

inline OraclePair oracle_branch_pair(const RasterTile& rgb, const RasterTile& dem, const PatchGrid& grid,
                                     std::uint64_t seed) {
  if (!same_geometry(rgb, dem)) throw Error("oracle: tiles are not co-registered");
  PatchGrid dem_grid = grid;
  dem_grid.tile_id = dem.id;
  return {OracleEncoder(rgb, grid, seed), OracleEncoder(dem, dem_grid, seed)};
}

}  // namespace croco
