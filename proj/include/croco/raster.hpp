#pragma once

// Georeferenced multi-channel rasters: ingest, resampling, DEM stacking and
// channel normalization.
//
// On-disk format: `<id>.raw` holds little-endian float32 samples, channel-major
// then row-major; `<id>.json` is the sidecar describing dimensions and
// georeferencing.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "croco/common.hpp"

namespace croco {

/// Fixed DEM stack order. Recorded in every DEM sidecar.
inline const std::vector<std::string> kDemChannelNames = {"dsm", "dem_void_filled", "dem_hybrid"};
inline const std::vector<std::string> kRgbChannelNames = {"red", "green", "blue"};

struct GeoOrigin {
  double easting_m = 0.0;
  double northing_m = 0.0;

  bool operator==(const GeoOrigin&) const = default;
};

/// A raster tile. `origin` is the upper-left corner; rows run south.
struct RasterTile {
  std::string id;
  int channels = 3;
  int height_px = 0;
  int width_px = 0;
  double gsd_m = 1.0;
  GeoOrigin origin;
  Modality modality = Modality::RGB;
  std::vector<std::string> channel_names;
  bool normalized = false;
  std::vector<double> data;  // channels x height x width

  std::size_t plane_size() const { return static_cast<std::size_t>(height_px) * width_px; }

  double& at(int c, int r, int col) { return data[c * plane_size() + static_cast<std::size_t>(r) * width_px + col]; }
  double at(int c, int r, int col) const {
    return data[c * plane_size() + static_cast<std::size_t>(r) * width_px + col];
  }

  std::span<const double> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<double> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }

  /// Throws when the tile breaks a structural invariant.
  void validate() const {
    if (!(gsd_m > 0.0) || !std::isfinite(gsd_m)) throw Error("tile '" + id + "': gsd_m must be positive");
    if (height_px < 1 || width_px < 1) throw Error("tile '" + id + "': empty raster");
    if (channels < 1) throw Error("tile '" + id + "': no channels");
    if (data.size() != static_cast<std::size_t>(channels) * plane_size())
      throw Error("tile '" + id + "': data size does not match dimensions");
  }
};

inline RasterTile make_tile(std::string id, Modality modality, int channels, int height, int width, double gsd_m,
                            GeoOrigin origin = {}) {
  RasterTile t;
  t.id = std::move(id);
  t.modality = modality;
  t.channels = channels;
  t.height_px = height;
  t.width_px = width;
  t.gsd_m = gsd_m;
  t.origin = origin;
  if (channels == 3) t.channel_names = modality == Modality::RGB ? kRgbChannelNames : kDemChannelNames;
  t.data.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
  t.validate();
  return t;
}

inline bool same_geometry(const RasterTile& a, const RasterTile& b) {
  return a.height_px == b.height_px && a.width_px == b.width_px && a.gsd_m == b.gsd_m && a.origin == b.origin;
}

// ---------------------------------------------------------------------------
// I/O

inline nlohmann::json sidecar_json(const RasterTile& t) {
  return {{"id", t.id},
          {"channels", t.channels},
          {"height_px", t.height_px},
          {"width_px", t.width_px},
          {"gsd_m", t.gsd_m},
          {"origin", {t.origin.easting_m, t.origin.northing_m}},
          {"modality", to_string(t.modality)},
          {"channel_names", t.channel_names},
          {"dtype", "float32"},
          {"normalized", t.normalized}};
}

/// Reads a raw float32 payload and its JSON sidecar.
inline RasterTile ingest_tile(const std::filesystem::path& payload, const std::filesystem::path& sidecar) {
  if (!std::filesystem::exists(payload)) throw Error("missing raster payload '" + payload.string() + "'");
  if (!std::filesystem::exists(sidecar)) throw Error("missing raster sidecar '" + sidecar.string() + "'");

  nlohmann::json meta;
  try {
    std::ifstream in(sidecar);
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad sidecar '" + sidecar.string() + "': " + e.what());
  }

  RasterTile t;
  try {
    t.id = meta.at("id").get<std::string>();
    t.channels = meta.at("channels").get<int>();
    t.height_px = meta.at("height_px").get<int>();
    t.width_px = meta.at("width_px").get<int>();
    t.gsd_m = meta.at("gsd_m").get<double>();
    const auto& o = meta.at("origin");
    t.origin = {o.at(0).get<double>(), o.at(1).get<double>()};
    t.modality = modality_from_string(meta.at("modality").get<std::string>());
    if (meta.contains("channel_names")) t.channel_names = meta["channel_names"].get<std::vector<std::string>>();
    if (meta.contains("normalized")) t.normalized = meta["normalized"].get<bool>();
    if (meta.contains("dtype") && meta["dtype"].get<std::string>() != "float32")
      throw Error("unsupported dtype '" + meta["dtype"].get<std::string>() + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad sidecar '" + sidecar.string() + "': " + e.what());
  }
  if (!(t.gsd_m > 0.0)) throw Error("tile '" + t.id + "': gsd_m must be positive");
  if (t.height_px < 1 || t.width_px < 1 || t.channels < 1) throw Error("tile '" + t.id + "': bad dimensions");

  const auto bytes = read_file_bytes(payload.string());
  const std::size_t expected = static_cast<std::size_t>(t.channels) * t.plane_size();
  if (bytes.size() != expected * 4)
    throw Error("tile '" + t.id + "': payload holds " + std::to_string(bytes.size() / 4.0) + " values, sidecar declares " +
                std::to_string(expected));
  t.data.resize(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    const float v = get_f32(bytes.data() + 4 * i);
    if (!std::isfinite(v)) throw Error("tile '" + t.id + "': non-finite sample at index " + std::to_string(i));
    t.data[i] = v;
  }
  return t;
}

/// Convenience: `<base>.raw` + `<base>.json`.
inline RasterTile ingest_tile(const std::filesystem::path& base) {
  auto raw = base;
  auto json = base;
  if (base.extension() == ".json" || base.extension() == ".raw") {
    raw.replace_extension(".raw");
    json.replace_extension(".json");
  } else {
    raw += ".raw";
    json += ".json";
  }
  return ingest_tile(raw, json);
}

/// Writes `<dir>/<id>.raw` and `<dir>/<id>.json`. Samples are stored as float32.
inline void write_tile(const RasterTile& t, const std::filesystem::path& dir) {
  t.validate();
  std::filesystem::create_directories(dir);
  std::vector<char> bytes;
  bytes.reserve(t.data.size() * 4);
  for (double v : t.data) put_f32(bytes, static_cast<float>(v));
  write_file_bytes((dir / (t.id + ".raw")).string(), bytes);
  std::ofstream js(dir / (t.id + ".json"));
  if (!js) throw Error("cannot write sidecar for '" + t.id + "'");
  js << sidecar_json(t).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Resampling

/// Integer block area-mean downsampling to `target_gsd_m`.
inline RasterTile resample(const RasterTile& tile, double target_gsd_m) {
  tile.validate();
  if (!(target_gsd_m > 0.0)) throw Error("resample: target gsd must be positive");
  const double ratio = target_gsd_m / tile.gsd_m;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
    throw Error("resample: target gsd is not an integer multiple of the source gsd");
  if (rounded < 1.0) throw Error("resample: upsampling is not supported");
  const int f = static_cast<int>(rounded);
  if (f == 1) return tile;

  RasterTile out = tile;
  out.height_px = tile.height_px / f;
  out.width_px = tile.width_px / f;
  out.gsd_m = target_gsd_m;
  if (out.height_px < 1 || out.width_px < 1) throw Error("resample: tile smaller than one output pixel");
  out.data.assign(static_cast<std::size_t>(out.channels) * out.plane_size(), 0.0);
  const double inv = 1.0 / (static_cast<double>(f) * f);
  for (int c = 0; c < tile.channels; ++c)
    for (int r = 0; r < out.height_px; ++r)
      for (int col = 0; col < out.width_px; ++col) {
        double sum = 0.0;
        for (int dr = 0; dr < f; ++dr)
          for (int dc = 0; dc < f; ++dc) sum += tile.at(c, r * f + dr, col * f + dc);
        out.at(c, r, col) = sum * inv;
      }
  return out;
}

/// Concatenates three single-channel elevation products into one DEM tile,
/// in kDemChannelNames order.
inline RasterTile stack_dem(const RasterTile& surface, const RasterTile& void_filled, const RasterTile& hybrid,
                            std::string id = {}) {
  const std::array<const RasterTile*, 3> parts = {&surface, &void_filled, &hybrid};
  for (const auto* p : parts) {
    p->validate();
    if (p->channels != 1) throw Error("stack_dem: input '" + p->id + "' must be single-channel");
  }
  for (const auto* p : parts) {
    if (p->gsd_m != surface.gsd_m) throw Error("stack_dem: GSD mismatch");
    if (p->height_px != surface.height_px || p->width_px != surface.width_px)
      throw Error("stack_dem: dimension mismatch");
    if (!(p->origin == surface.origin)) throw Error("stack_dem: origin mismatch");
  }
  RasterTile out = make_tile(id.empty() ? surface.id : std::move(id), Modality::DEM, 3, surface.height_px,
                             surface.width_px, surface.gsd_m, surface.origin);
  for (int k = 0; k < 3; ++k) std::copy(parts[k]->data.begin(), parts[k]->data.end(), out.plane(k).begin());
  return out;
}

/// Sub-window copy; the origin follows the window's upper-left corner.
inline RasterTile crop(const RasterTile& tile, int row, int col, int height, int width, std::string id) {
  tile.validate();
  if (row < 0 || col < 0 || height < 1 || width < 1 || row + height > tile.height_px || col + width > tile.width_px)
    throw Error("crop: window outside tile '" + tile.id + "'");
  RasterTile out = tile;
  out.id = std::move(id);
  out.height_px = height;
  out.width_px = width;
  out.origin = {tile.origin.easting_m + col * tile.gsd_m, tile.origin.northing_m - row * tile.gsd_m};
  out.data.assign(static_cast<std::size_t>(tile.channels) * height * width, 0.0);
  for (int c = 0; c < tile.channels; ++c)
    for (int r = 0; r < height; ++r)
      for (int k = 0; k < width; ++k) out.at(c, r, k) = tile.at(c, row + r, col + k);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
  Modality modality = Modality::DEM;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  static constexpr double kStdFloor = 1e-6;

  bool operator==(const NormalizationStats&) const = default;
};

inline nlohmann::json to_json(const NormalizationStats& s) {
  return {{"modality", to_string(s.modality)}, {"mean", s.mean}, {"std", s.stddev}};
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  s.modality = modality_from_string(j.at("modality").get<std::string>());
  s.mean = j.at("mean").get<std::array<double, 3>>();
  s.stddev = j.at("std").get<std::array<double, 3>>();
  return s;
}

/// Per-channel population mean/std over every pixel of every tile.
/// Accumulates per tile and then in id order, so the result does not depend on
/// the order tiles are passed in.
inline NormalizationStats fit_normalization(std::span<const RasterTile> tiles) {
  if (tiles.empty()) throw Error("fit_normalization: no tiles");
  const Modality modality = tiles.front().modality;
  for (const auto& t : tiles) {
    t.validate();
    if (t.modality != modality) throw Error("fit_normalization: mixed modalities");
    if (t.channels != 3) throw Error("fit_normalization: tiles must have 3 channels");
  }
  std::vector<const RasterTile*> order;
  for (const auto& t : tiles) order.push_back(&t);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

  NormalizationStats stats;
  stats.modality = modality;
  double count = 0.0;
  for (const auto* t : order) count += static_cast<double>(t->plane_size());
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (const auto* t : order) {
      double s = 0.0;
      for (double v : t->plane(c)) s += v;
      sum += s;
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (const auto* t : order) {
      double s = 0.0;
      for (double v : t->plane(c)) s += (v - mean) * (v - mean);
      sq += s;
    }
    stats.mean[c] = mean;
    stats.stddev[c] = std::max(std::sqrt(sq / count), NormalizationStats::kStdFloor);
  }
  return stats;
}

/// RGB: 8-bit values scaled into [0, 1]. DEM: per-channel z-score.
inline RasterTile normalize(const RasterTile& tile, const NormalizationStats& stats) {
  tile.validate();
  if (tile.modality != stats.modality) throw Error("normalize: modality mismatch for tile '" + tile.id + "'");
  if (tile.normalized) throw Error("normalize: tile '" + tile.id + "' is already normalized");
  if (tile.channels != 3) throw Error("normalize: tile must have 3 channels");
  RasterTile out = tile;
  out.normalized = true;
  for (int c = 0; c < 3; ++c) {
    auto plane = out.plane(c);
    if (tile.modality == Modality::RGB) {
      for (double& v : plane) v /= 255.0;
    } else {
      const double m = stats.mean[c];
      const double s = stats.stddev[c];
      for (double& v : plane) v = (v - m) / s;
    }
  }
  return out;
}

}  // namespace croco
