#pragma once

// The mapping step: every RGB patch of a tile's sliding-window lattice is
// encoded, unit-normalized and stored row-major in a FeatureMap.
//
// File layout (.crocomap): "CROCOMAP1" | u64 header length | JSON header |
// rows*cols*128 float32 little-endian.

#include <atomic>
#include <concepts>
#include <filesystem>
#include <exception>
#include <mutex>
#include <thread>

#include "croco/encoder.hpp"
#include "croco/sampling.hpp"

namespace croco {

/// Anything that turns a batch of patches into one embedding row per patch.
template <class E>
concept PatchEncoder = requires(const E& e, std::span<const Patch> patches) {
  { e.modality() } -> std::convertible_to<Modality>;
  { e.encode(patches) } -> std::convertible_to<Mat<float>>;
};

struct FeatureMap {
  std::string tile_id;
  int tile_height_px = 0;
  int tile_width_px = 0;
  int rows = 0;
  int cols = 0;
  int patch_px = 0;
  int stride_px = 0;
  double gsd_m = 1.0;
  GeoOrigin origin;
  std::string fingerprint;
  Mat<float> embeddings;  // (rows*cols) x 128, unit rows

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }

  PatchGrid grid() const {
    return make_grid(tile_id, tile_height_px, tile_width_px, patch_px, stride_px, gsd_m, origin);
  }

  bool operator==(const FeatureMap& o) const {
    return tile_id == o.tile_id && tile_height_px == o.tile_height_px && tile_width_px == o.tile_width_px &&
           rows == o.rows && cols == o.cols && patch_px == o.patch_px && stride_px == o.stride_px &&
           gsd_m == o.gsd_m && origin == o.origin && fingerprint == o.fingerprint &&
           embeddings.rows() == o.embeddings.rows() && embeddings.cols() == o.embeddings.cols() &&
           std::equal(embeddings.data(), embeddings.data() + embeddings.size(), o.embeddings.data(),
                      [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); });
  }
};

inline constexpr std::size_t kEncodeChunk = 64;

/// Runs fn(chunk_begin, chunk_end) over fixed-size chunks of [0, n). Chunk
/// boundaries do not depend on the thread count, so results are identical for
/// any number of workers.
template <class Fn>
void for_each_chunk(std::size_t n, std::size_t chunk, unsigned threads, Fn&& fn) {
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  if (threads <= 1 || nchunks <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, nchunks); ++t)
    workers.emplace_back([&] {
      for (std::size_t c = next++; c < nchunks; c = next++) {
        try {
          fn(c * chunk, std::min(n, (c + 1) * chunk));
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

template <PatchEncoder E>
FeatureMap build_feature_map(const RasterTile& tile, const PatchGrid& grid, const E& encoder,
                             std::string fingerprint, unsigned threads = 1) {
  if (encoder.modality() != Modality::RGB || tile.modality != Modality::RGB)
    throw Error("build_feature_map: the map is built from RGB patches with the RGB branch");
  if (grid.size() == 0) throw Error("build_feature_map: empty grid");
  if (grid.tile_id != tile.id || grid.tile_height_px != tile.height_px || grid.tile_width_px != tile.width_px)
    throw Error("build_feature_map: grid does not belong to tile '" + tile.id + "'");

  FeatureMap map;
  map.tile_id = tile.id;
  map.tile_height_px = tile.height_px;
  map.tile_width_px = tile.width_px;
  map.rows = grid.rows;
  map.cols = grid.cols;
  map.patch_px = grid.patch_px;
  map.stride_px = grid.stride_px;
  map.gsd_m = tile.gsd_m;
  map.origin = tile.origin;
  map.fingerprint = std::move(fingerprint);
  map.embeddings.resize(static_cast<Eigen::Index>(grid.size()), kEmbedDim);

  for_each_chunk(grid.size(), kEncodeChunk, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<Patch> patches;
    patches.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) patches.push_back(extract_patch(tile, grid.anchor(i), grid.patch_px));
    Mat<float> z = encoder.encode(patches);
    if (z.rows() != static_cast<Eigen::Index>(hi - lo) || z.cols() != kEmbedDim)
      throw Error("build_feature_map: encoder returned the wrong shape");
    normalize_rows(z);
    map.embeddings.middleRows(static_cast<Eigen::Index>(lo), z.rows()) = z;
  });
  return map;
}

inline constexpr std::string_view kMapMagic = "CROCOMAP1";

inline std::vector<char> serialize_map(const FeatureMap& map) {
  if (map.fingerprint.empty()) throw Error("save_map: map has no checkpoint fingerprint");
  const nlohmann::json header = {{"tile_id", map.tile_id},
                                 {"tile_height_px", map.tile_height_px},
                                 {"tile_width_px", map.tile_width_px},
                                 {"rows", map.rows},
                                 {"cols", map.cols},
                                 {"dim", kEmbedDim},
                                 {"patch_px", map.patch_px},
                                 {"stride_px", map.stride_px},
                                 {"gsd_m", map.gsd_m},
                                 {"origin", {map.origin.easting_m, map.origin.northing_m}},
                                 {"fingerprint", map.fingerprint}};
  const std::string text = header.dump();
  std::vector<char> out(kMapMagic.begin(), kMapMagic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + map.embeddings.size() * 4);
  for (Eigen::Index i = 0; i < map.embeddings.size(); ++i) put_f32(out, map.embeddings.data()[i]);
  return out;
}

inline FeatureMap deserialize_map(std::span<const char> bytes) {
  const std::size_t prefix = kMapMagic.size() + 8;
  if (bytes.size() < prefix) throw Error("feature map: truncated file");
  if (std::string_view(bytes.data(), kMapMagic.size()) != kMapMagic)
    throw Error("feature map: bad magic or unsupported version");
  const std::uint64_t header_len = get_u64(bytes.data() + kMapMagic.size());
  if (header_len > bytes.size() - prefix) throw Error("feature map: truncated header");

  FeatureMap map;
  try {
    const auto h = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + prefix + header_len);
    if (h.at("dim").get<int>() != kEmbedDim) throw Error("feature map: unsupported embedding dimension");
    map.tile_id = h.at("tile_id").get<std::string>();
    map.tile_height_px = h.at("tile_height_px").get<int>();
    map.tile_width_px = h.at("tile_width_px").get<int>();
    map.rows = h.at("rows").get<int>();
    map.cols = h.at("cols").get<int>();
    map.patch_px = h.at("patch_px").get<int>();
    map.stride_px = h.at("stride_px").get<int>();
    map.gsd_m = h.at("gsd_m").get<double>();
    map.origin = {h.at("origin").at(0).get<double>(), h.at("origin").at(1).get<double>()};
    if (!h.contains("fingerprint") || h["fingerprint"].get<std::string>().empty())
      throw Error("feature map: fingerprint absent");
    map.fingerprint = h["fingerprint"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("feature map: bad header: ") + e.what());
  }
  if (map.rows < 1 || map.cols < 1) throw Error("feature map: empty grid");
  const std::size_t values = map.size() * kEmbedDim;
  const std::size_t payload = bytes.size() - prefix - header_len;
  if (payload != values * 4)
    throw Error(payload < values * 4 ? "feature map: truncated embedding payload"
                                     : "feature map: trailing bytes after embeddings");
  map.embeddings.resize(static_cast<Eigen::Index>(map.size()), kEmbedDim);
  const char* p = bytes.data() + prefix + header_len;
  for (std::size_t i = 0; i < values; ++i, p += 4) map.embeddings.data()[i] = get_f32(p);
  return map;
}

inline void save_map(const FeatureMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_map(map);
  write_file_bytes(path.string(), bytes);
}

inline FeatureMap load_map(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path.string());
  return deserialize_map(bytes);
}

/// Non-empty when a map was built with different weights than the ones used
/// to query it.
inline std::optional<std::string> fingerprint_warning(const FeatureMap& map, std::string_view query_fingerprint) {
  if (query_fingerprint.empty() || query_fingerprint == map.fingerprint) return std::nullopt;
  return "feature map '" + map.tile_id + "' was built with checkpoint " + map.fingerprint +
         " but is queried with checkpoint " + std::string(query_fingerprint);
}

}  // namespace croco
