#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "sparsebeam/errors.hpp"
#include "sparsebeam/field.hpp"

namespace sparsebeam {

using Vec3 = std::array<double, 3>;

[[nodiscard]] inline double deg2rad(double d) noexcept { return d * std::numbers::pi / 180.0; }

/// Circular-orbit cone-beam geometry rotating about the z axis. The source at
/// view angle b sits at R (cos b, sin b, 0); the flat detector faces it at
/// distance D from the source, with u along (-sin b, cos b, 0) and v along z.
/// Lengths in mm.
struct ConeBeamGeometry {
  double source_to_iso = 300.0;
  double source_to_detector = 600.0;
  std::size_t det_rows = 96;
  std::size_t det_cols = 96;
  double det_pitch = 2.0;
  std::size_t n_views = 60;
  double angular_range_deg = 360.0;
  double start_angle_deg = 0.0;

  void validate() const {
    if (!(source_to_iso > 0.0) || !(source_to_detector > source_to_iso)) {
      throw GeometryError("geometry: require source_to_detector > source_to_iso > 0");
    }
    if (det_rows == 0 || det_cols == 0 || !(det_pitch > 0.0)) throw GeometryError("geometry: empty detector");
    if (n_views == 0) throw GeometryError("geometry: n_views must be >= 1");
    if (!(angular_range_deg > 0.0)) throw GeometryError("geometry: angular_range must be positive");
  }

  [[nodiscard]] double angular_step() const noexcept { return deg2rad(angular_range_deg) / static_cast<double>(n_views); }
  /// View angle in radians.
  [[nodiscard]] double view_angle(std::size_t k) const noexcept {
    return deg2rad(start_angle_deg) + static_cast<double>(k) * angular_step();
  }
  [[nodiscard]] Shape3 projection_shape() const noexcept { return {n_views, det_rows, det_cols}; }

  /// Detector coordinates (mm, on the detector plane) of a cell centre.
  [[nodiscard]] double cell_u(double col) const noexcept {
    return (col - 0.5 * static_cast<double>(det_cols - 1)) * det_pitch;
  }
  [[nodiscard]] double cell_v(double row) const noexcept {
    return (row - 0.5 * static_cast<double>(det_rows - 1)) * det_pitch;
  }

  [[nodiscard]] Vec3 source(std::size_t k) const noexcept {
    const double b = view_angle(k);
    return {source_to_iso * std::cos(b), source_to_iso * std::sin(b), 0.0};
  }
  [[nodiscard]] Vec3 cell_position(std::size_t k, double row, double col) const noexcept {
    const double b = view_angle(k);
    const double c = std::cos(b), s = std::sin(b);
    const double back = source_to_detector - source_to_iso;
    const double u = cell_u(col), v = cell_v(row);
    return {-back * c - u * s, -back * s + u * c, v};
  }

  /// Radius of the cylinder seen by every view (in-plane fan coverage).
  [[nodiscard]] double fov_radius() const noexcept {
    const double half_u = 0.5 * static_cast<double>(det_cols) * det_pitch;
    return source_to_iso * std::sin(std::atan(half_u / source_to_detector));
  }

  friend bool operator==(const ConeBeamGeometry&, const ConeBeamGeometry&) = default;
};

/// A named geometry plus the reconstruction grid it is meant for.
struct ScanPreset {
  std::string name;
  ConeBeamGeometry geometry;
  Shape3 volume_dims;  // (nz, ny, nx)
  double voxel_size = 1.0;
};

/// 64^3 volume at 1 mm, 96x96 detector of 2 mm pitch, 300/600 mm distances, 60 views.
[[nodiscard]] inline ScanPreset desk_preset() {
  return ScanPreset{"desk", ConeBeamGeometry{}, Shape3{64, 64, 64}, 1.0};
}

/// Full-scale clinical layout: 768x1024 detector of 0.388 mm cells, 300 views
/// over 360 degrees, 0.2734 mm voxels. The 650/923 mm source distances are
/// placeholders, not measured values.
[[nodiscard]] inline ScanPreset koning_preset() {
  ConeBeamGeometry g;
  g.source_to_iso = 650.0;
  g.source_to_detector = 923.0;
  g.det_rows = 768;
  g.det_cols = 1024;
  g.det_pitch = 0.388;
  g.n_views = 300;
  return ScanPreset{"koning", g, Shape3{512, 1024, 1024}, 0.2734};
}

[[nodiscard]] inline ScanPreset preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "koning") return koning_preset();
  throw ConfigError("unknown geometry preset '" + name + "' (expected desk|koning)");
}

inline nlohmann::json to_json(const ConeBeamGeometry& g) {
  return {{"source_to_iso", g.source_to_iso},   {"source_to_detector", g.source_to_detector},
          {"det_rows", g.det_rows},             {"det_cols", g.det_cols},
          {"det_pitch", g.det_pitch},           {"n_views", g.n_views},
          {"angular_range", g.angular_range_deg}, {"start_angle", g.start_angle_deg}};
}

inline ConeBeamGeometry geometry_from_json(const nlohmann::json& j, ConeBeamGeometry g = {}) {
  if (!j.is_object()) throw ConfigError("geometry: expected an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "source_to_iso") g.source_to_iso = value.get<double>();
      else if (key == "source_to_detector") g.source_to_detector = value.get<double>();
      else if (key == "det_rows") g.det_rows = value.get<std::size_t>();
      else if (key == "det_cols") g.det_cols = value.get<std::size_t>();
      else if (key == "det_pitch") g.det_pitch = value.get<double>();
      else if (key == "n_views") g.n_views = value.get<std::size_t>();
      else if (key == "angular_range") g.angular_range_deg = value.get<double>();
      else if (key == "start_angle") g.start_angle_deg = value.get<double>();
      else throw ConfigError("geometry: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  g.validate();
  return g;
}

}  // namespace sparsebeam
