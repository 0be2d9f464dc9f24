#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/binary_io.hpp"
#include "sparsebeam/checksum.hpp"
#include "sparsebeam/geometry.hpp"
#include "sparsebeam/volumes.hpp"

namespace sparsebeam {

// Volume files are a JSON sidecar plus a raw little-endian float32 blob named
// after it with the extension ".f32".

namespace detail {

inline std::filesystem::path blob_path_for(const std::filesystem::path& sidecar) {
  auto p = sidecar;
  p.replace_extension(".f32");
  if (p == sidecar) throw IoError("sidecar path must not end in .f32: " + sidecar.string());
  return p;
}

inline nlohmann::json dims_json(const Shape3& s) { return nlohmann::json::array({s.d0, s.d1, s.d2}); }

inline Shape3 dims_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 3) throw IoError("dims must have three entries");
  return {v[0], v[1], v[2]};
}

inline void write_volume_files(const std::filesystem::path& sidecar, nlohmann::json meta, std::span<const float> values) {
  const auto blob = blob_path_for(sidecar);
  meta["dtype"] = "f32le";
  meta["blob"] = blob.filename().string();
  meta["checksum"] = checksum_string<float>(values);
  write_f32le(blob, values);
  write_json_file(sidecar, meta);
}

inline std::vector<float> read_checked_blob(const std::filesystem::path& sidecar, const nlohmann::json& meta,
                                            std::size_t count) {
  if (meta.at("dtype") != "f32le") throw IoError(sidecar.string() + ": unsupported dtype");
  const auto values = read_f32le(sidecar.parent_path() / meta.at("blob").get<std::string>(), count);
  if (checksum_string<float>(values) != meta.at("checksum").get<std::string>()) {
    throw IoError(sidecar.string() + ": checksum mismatch");
  }
  return values;
}

}  // namespace detail

inline void save_volume(const ImageVolume& v, const std::filesystem::path& sidecar) {
  detail::write_volume_files(sidecar,
                             {{"format", "sparsebeam-volume"},
                              {"domain", "image"},
                              {"dims", detail::dims_json(v.dims())},
                              {"order", "z,y,x"},
                              {"spacing", v.voxel_size}},
                             v.data.values());
}

inline void save_projections(const ProjectionSet& p, const std::filesystem::path& sidecar) {
  p.check();
  std::vector<int> mask(p.view_mask.begin(), p.view_mask.end());
  detail::write_volume_files(sidecar,
                             {{"format", "sparsebeam-volume"},
                              {"domain", "projection"},
                              {"dims", detail::dims_json(p.data.shape())},
                              {"order", "view,row,col"},
                              {"geometry", to_json(p.geometry)},
                              {"view_mask", mask}},
                             p.data.values());
}

/// "image" or "projection".
[[nodiscard]] inline std::string volume_domain(const std::filesystem::path& sidecar) {
  const auto j = read_json_file(sidecar);
  if (!j.is_object() || !j.contains("domain") || !j.at("domain").is_string()) {
    throw IoError(sidecar.string() + ": not a volume sidecar");
  }
  return j.at("domain").get<std::string>();
}

[[nodiscard]] inline ImageVolume load_volume(const std::filesystem::path& sidecar) {
  const auto j = read_json_file(sidecar);
  try {
    if (j.at("format") != "sparsebeam-volume" || j.at("domain") != "image") {
      throw IoError(sidecar.string() + ": not an image volume");
    }
    const Shape3 dims = detail::dims_from(j.at("dims"));
    ImageVolume v{Field3<float>(dims, detail::read_checked_blob(sidecar, j, dims.size())), j.at("spacing").get<double>()};
    if (!(v.voxel_size > 0)) throw IoError(sidecar.string() + ": spacing must be positive");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(sidecar.string() + ": " + e.what());
  }
}

[[nodiscard]] inline ProjectionSet load_projections(const std::filesystem::path& sidecar) {
  const auto j = read_json_file(sidecar);
  try {
    if (j.at("format") != "sparsebeam-volume" || j.at("domain") != "projection") {
      throw IoError(sidecar.string() + ": not a projection set");
    }
    ConeBeamGeometry g;
    try {
      g = geometry_from_json(j.at("geometry"));
    } catch (const Error& e) {
      throw IoError(sidecar.string() + ": " + e.what());
    }
    ProjectionSet p(g);
    if (detail::dims_from(j.at("dims")) != g.projection_shape()) throw IoError(sidecar.string() + ": dims do not match geometry");
    p.data = Field3<float>(g.projection_shape(), detail::read_checked_blob(sidecar, j, g.projection_shape().size()));
    const auto mask = j.at("view_mask").get<std::vector<int>>();
    if (mask.size() != g.n_views) throw IoError(sidecar.string() + ": view_mask length does not match n_views");
    for (std::size_t k = 0; k < mask.size(); ++k) p.view_mask[k] = mask[k] != 0;
    p.check();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(sidecar.string() + ": " + e.what());
  }
}

}  // namespace sparsebeam
