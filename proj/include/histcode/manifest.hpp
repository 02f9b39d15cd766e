#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "histcode/hdf5_util.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

inline constexpr std::int64_t kManifestFormatVersion = 1;

/// Spatial index of the tissue tiles of one slide. Coordinates are sorted
/// lexicographically by (y, x) and unique; only coordinates and metadata are
/// persisted, never pixels.
struct TileManifest {
  std::string slide_id;
  std::string patient_id;
  int label = SlideLabel::kUnknown;
  std::int64_t width = 0;
  std::int64_t height = 0;
  int tile_px = 256;
  double tile_um = 128.0;
  double mpp = 0.5;  // microns per pixel
  std::vector<TileCoord> coords;

  void sort_coords() {
    std::sort(coords.begin(), coords.end(),
              [](const TileCoord& a, const TileCoord& b) {
                return a.y != b.y ? a.y < b.y : a.x < b.x;
              });
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  }

  bool operator==(const TileManifest&) const = default;
};

/// Persists a manifest as an HDF5 container: dataset `coords` (N x 2 int32,
/// column order x,y) plus root attributes. Output bytes are a pure function
/// of the manifest content.
inline void write_manifest(const TileManifest& m, const std::string& path,
                           const std::string& config_hash = "") {
  h5::Handle file = h5::create_file(path);
  std::vector<std::int32_t> flat;
  flat.reserve(m.coords.size() * 2);
  for (const TileCoord& c : m.coords) {
    flat.push_back(c.x);
    flat.push_back(c.y);
  }
  h5::write_dataset(file, "coords", flat.data(),
                    {static_cast<hsize_t>(m.coords.size()), 2});
  h5::write_attr(file, "config_hash", config_hash);
  h5::write_attr(file, "format_version", kManifestFormatVersion);
  h5::write_attr(file, "slide_id", m.slide_id);
  h5::write_attr(file, "patient_id", m.patient_id);
  h5::write_attr(file, "label", SlideLabel::name(m.label));
  h5::write_attr(file, "width", m.width);
  h5::write_attr(file, "height", m.height);
  h5::write_attr(file, "tile_px", static_cast<std::int64_t>(m.tile_px));
  h5::write_attr(file, "tile_um", m.tile_um);
  h5::write_attr(file, "mpp", m.mpp);
}

inline TileManifest read_manifest(const std::string& path) {
  h5::Handle file = h5::open_file(path);
  if (!h5::attr_exists(file, "format_version"))
    throw SchemaMismatch("not a tile manifest (no format_version): " + path);
  const auto version = h5::read_attr<std::int64_t>(file, "format_version");
  if (version != kManifestFormatVersion)
    throw SchemaMismatch("unsupported manifest format_version " +
                         std::to_string(version) + " in " + path);
  TileManifest m;
  m.slide_id = h5::read_string_attr(file, "slide_id");
  m.patient_id = h5::read_string_attr(file, "patient_id");
  m.label = SlideLabel::parse(h5::read_string_attr(file, "label"));
  m.width = h5::read_attr<std::int64_t>(file, "width");
  m.height = h5::read_attr<std::int64_t>(file, "height");
  m.tile_px = static_cast<int>(h5::read_attr<std::int64_t>(file, "tile_px"));
  m.tile_um = h5::read_attr<double>(file, "tile_um");
  m.mpp = h5::read_attr<double>(file, "mpp");
  auto dims = h5::dataset_dims(file, "coords");
  if (dims.size() != 2 || dims[1] != 2)
    throw SchemaMismatch("coords dataset must be N x 2");
  std::vector<std::int32_t> flat(dims[0] * 2);
  h5::read_dataset(file, "coords", flat.data());
  m.coords.resize(dims[0]);
  for (hsize_t i = 0; i < dims[0]; ++i)
    m.coords[i] = {flat[2 * i], flat[2 * i + 1]};
  return m;
}

}  // namespace histcode
