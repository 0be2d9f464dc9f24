#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/errors.hpp"
#include "sparsebeam/geometry.hpp"
#include "sparsebeam/volumes.hpp"

namespace sparsebeam {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Rotation Rz(a) Ry(b) Rz(c) for ZYZ Euler angles in degrees.
[[nodiscard]] inline Mat3 euler_zyz(const Vec3& deg) {
  const double a = deg2rad(deg[0]), b = deg2rad(deg[1]), c = deg2rad(deg[2]);
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
               sc = std::sin(c);
  return {{{ca * cb * cc - sa * sc, -ca * cb * sc - sa * cc, ca * sb},
           {sa * cb * cc + ca * sc, -sa * cb * sc + ca * cc, sa * sb},
           {-sb * cc, sb * sc, cb}}};
}

struct Ellipsoid {
  Vec3 center{0, 0, 0};        // mm
  Vec3 semi_axes{1, 1, 1};     // mm, body frame
  Vec3 rotation_deg{0, 0, 0};  // ZYZ Euler angles
  double attenuation = 0.0;    // 1/mm
  bool additive = true;        // add to the running value, or replace it

  /// Body-frame coordinates scaled by the semi-axes (inside iff |q| <= 1).
  [[nodiscard]] Vec3 to_unit(const Vec3& p, const Mat3& r) const noexcept {
    const Vec3 d{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
    Vec3 q{};
    for (int i = 0; i < 3; ++i) q[i] = (r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2]) / semi_axes[i];
    return q;
  }

  /// Half-extent of the axis-aligned bounding box.
  [[nodiscard]] Vec3 half_extent() const {
    const Mat3 r = euler_zyz(rotation_deg);
    Vec3 h{};
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += r[i][j] * r[i][j] * semi_axes[j] * semi_axes[j];
      h[i] = std::sqrt(s);
    }
    return h;
  }

  [[nodiscard]] double volume() const noexcept {
    return 4.0 / 3.0 * std::numbers::pi * semi_axes[0] * semi_axes[1] * semi_axes[2];
  }
};

/// Ordered list of ellipsoids. The value at a point starts at zero and each
/// containing ellipsoid, in order, either adds its attenuation or replaces the
/// running value with it.
class EllipsoidPhantom {
 public:
  EllipsoidPhantom() = default;
  explicit EllipsoidPhantom(std::vector<Ellipsoid> ellipsoids) : ellipsoids_(std::move(ellipsoids)) {
    for (std::size_t i = 0; i < ellipsoids_.size(); ++i) {
      const auto& e = ellipsoids_[i];
      if (!(e.semi_axes[0] > 0) || !(e.semi_axes[1] > 0) || !(e.semi_axes[2] > 0)) {
        throw ConfigError("phantom: ellipsoid " + std::to_string(i) + " has non-positive semi-axes");
      }
    }
    rotations_.reserve(ellipsoids_.size());
    for (const auto& e : ellipsoids_) rotations_.push_back(euler_zyz(e.rotation_deg));
  }

  [[nodiscard]] const std::vector<Ellipsoid>& ellipsoids() const noexcept { return ellipsoids_; }
  [[nodiscard]] const Mat3& rotation(std::size_t i) const noexcept { return rotations_[i]; }
  [[nodiscard]] bool empty() const noexcept { return ellipsoids_.empty(); }
  [[nodiscard]] bool all_additive() const noexcept {
    return std::all_of(ellipsoids_.begin(), ellipsoids_.end(), [](const Ellipsoid& e) { return e.additive; });
  }

  [[nodiscard]] double value_at(const Vec3& p) const noexcept {
    double v = 0.0;
    for (std::size_t i = 0; i < ellipsoids_.size(); ++i) {
      const Vec3 q = ellipsoids_[i].to_unit(p, rotations_[i]);
      if (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] <= 1.0) {
        v = ellipsoids_[i].additive ? v + ellipsoids_[i].attenuation : ellipsoids_[i].attenuation;
      }
    }
    return v;
  }

  /// Throws GeometryError unless every ellipsoid lies inside the cylinder all
  /// views see (radius fov_radius(), axial half-height limited by the cone).
  void check_fits(const ConeBeamGeometry& g) const {
    const double radius = g.fov_radius();
    const double half_v = 0.5 * static_cast<double>(g.det_rows) * g.det_pitch;
    for (std::size_t i = 0; i < ellipsoids_.size(); ++i) {
      const auto& e = ellipsoids_[i];
      const Vec3 h = e.half_extent();
      const double r = std::hypot(std::abs(e.center[0]) + h[0], std::abs(e.center[1]) + h[1]);
      const double z = std::abs(e.center[2]) + h[2];
      // Axial coverage at the cylinder edge nearest the source.
      const double z_limit = half_v * (g.source_to_iso - radius) / g.source_to_detector;
      if (r > radius || z > z_limit) {
        throw GeometryError("phantom: ellipsoid " + std::to_string(i) + " leaves the reconstructible cylinder");
      }
    }
  }

 private:
  std::vector<Ellipsoid> ellipsoids_;
  std::vector<Mat3> rotations_;
};

/// Per-voxel attenuation averaged over a 2x2x2 sub-sample lattice.
[[nodiscard]] inline ImageVolume voxelize(const EllipsoidPhantom& phantom, Shape3 dims, double voxel_size) {
  if (dims.size() == 0 || !(voxel_size > 0)) throw ConfigError("voxelize: dims and voxel size must be positive");
  ImageVolume vol{Field3<float>(dims), voxel_size};
  if (phantom.empty()) return vol;
  const double q = 0.25 * voxel_size;
  for (std::size_t iz = 0; iz < dims.d0; ++iz) {
    const double z = vol.coord(iz, dims.d0);
    for (std::size_t iy = 0; iy < dims.d1; ++iy) {
      const double y = vol.coord(iy, dims.d1);
      for (std::size_t ix = 0; ix < dims.d2; ++ix) {
        const double x = vol.coord(ix, dims.d2);
        double acc = 0.0;
        for (int k = 0; k < 8; ++k) {
          const Vec3 p{x + ((k & 1) ? q : -q), y + ((k & 2) ? q : -q), z + ((k & 4) ? q : -q)};
          acc += phantom.value_at(p);
        }
        vol.data(iz, iy, ix) = static_cast<float>(acc / 8.0);
      }
    }
  }
  return vol;
}

inline nlohmann::json to_json(const EllipsoidPhantom& p) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : p.ellipsoids()) {
    list.push_back({{"center", e.center},
                    {"semi_axes", e.semi_axes},
                    {"rotation_deg", e.rotation_deg},
                    {"attenuation", e.attenuation},
                    {"additive", e.additive}});
  }
  return {{"ellipsoids", list}};
}

/// Accepts {"ellipsoids": [...]} or a bare list. Errors name the offending
/// JSON pointer.
inline EllipsoidPhantom phantom_from_json(const nlohmann::json& j) {
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    for (const auto& [key, _] : j.items()) {
      if (key != "ellipsoids") throw ConfigError("phantom: unknown key '/" + key + "'");
    }
    if (!j.contains("ellipsoids")) throw ConfigError("phantom: missing '/ellipsoids'");
    list = &j.at("ellipsoids");
  }
  if (!list->is_array()) throw ConfigError("phantom: '/ellipsoids' must be a list");
  std::vector<Ellipsoid> out;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const auto& item = (*list)[i];
    const std::string where = "/ellipsoids/" + std::to_string(i);
    if (!item.is_object()) throw ConfigError("phantom: " + where + " must be an object");
    Ellipsoid e;
    auto read_vec = [&](const std::string& key, Vec3& dst) {
      const auto& v = item.at(key);
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
        throw ConfigError("phantom: " + where + "/" + key + " must be a list of 3 numbers");
      }
      for (int k = 0; k < 3; ++k) dst[static_cast<std::size_t>(k)] = v[static_cast<std::size_t>(k)].get<double>();
    };
    for (const auto& [key, value] : item.items()) {
      if (key == "center") read_vec(key, e.center);
      else if (key == "semi_axes") read_vec(key, e.semi_axes);
      else if (key == "rotation_deg") read_vec(key, e.rotation_deg);
      else if (key == "attenuation") {
        if (!value.is_number()) throw ConfigError("phantom: " + where + "/attenuation must be a number");
        e.attenuation = value.get<double>();
      } else if (key == "additive") {
        if (!value.is_boolean()) throw ConfigError("phantom: " + where + "/additive must be a boolean");
        e.additive = value.get<bool>();
      } else {
        throw ConfigError("phantom: unknown key '" + where + "/" + key + "'");
      }
    }
    if (!item.contains("semi_axes")) throw ConfigError("phantom: " + where + " is missing semi_axes");
    if (!item.contains("attenuation")) throw ConfigError("phantom: " + where + " is missing attenuation");
    for (int k = 0; k < 3; ++k) {
      if (!(e.semi_axes[static_cast<std::size_t>(k)] > 0)) {
        throw ConfigError("phantom: " + where + "/semi_axes must be positive");
      }
    }
    out.push_back(e);
  }
  return EllipsoidPhantom(std::move(out));
}

/// Knobs of the random breast-like phantom generator: a water-like body
/// ellipsoid with smaller additive inclusions of higher or lower attenuation.
struct RandomPhantomOptions {
  double body_radius_min = 20.0;
  double body_radius_max = 27.0;
  double body_half_height_min = 20.0;
  double body_half_height_max = 26.0;
  double body_attenuation = 0.02;
  std::size_t inclusions_min = 4;
  std::size_t inclusions_max = 9;
  double inclusion_axis_min = 2.5;
  double inclusion_axis_max = 10.0;
  double inclusion_contrast_min = -0.006;
  double inclusion_contrast_max = 0.012;
};

namespace detail {

// True if a lattice of points on the surface of `inner` lies inside `outer`.
inline bool inside_on_surface(const Ellipsoid& inner, const Ellipsoid& outer) {
  const Mat3 ri = euler_zyz(inner.rotation_deg);
  const Mat3 ro = euler_zyz(outer.rotation_deg);
  for (int a = 0; a <= 12; ++a) {
    const double th = std::numbers::pi * a / 12.0;
    for (int b = 0; b < 24; ++b) {
      const double ph = 2.0 * std::numbers::pi * b / 24.0;
      const Vec3 local{inner.semi_axes[0] * std::sin(th) * std::cos(ph), inner.semi_axes[1] * std::sin(th) * std::sin(ph),
                       inner.semi_axes[2] * std::cos(th)};
      Vec3 p{};
      for (int i = 0; i < 3; ++i) {
        p[i] = inner.center[i] + ri[i][0] * local[0] + ri[i][1] * local[1] + ri[i][2] * local[2];
      }
      const Vec3 q = outer.to_unit(p, ro);
      if (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] > 0.95) return false;
    }
  }
  return true;
}

}  // namespace detail

[[nodiscard]] inline EllipsoidPhantom random_phantom(std::uint64_t seed, const RandomPhantomOptions& o = {}) {
  std::mt19937_64 eng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); };
  std::vector<Ellipsoid> list;
  Ellipsoid body;
  body.semi_axes = {uni(o.body_radius_min, o.body_radius_max), uni(o.body_radius_min, o.body_radius_max),
                    uni(o.body_half_height_min, o.body_half_height_max)};
  body.center = {uni(-2, 2), uni(-2, 2), uni(-1, 1)};
  body.rotation_deg = {uni(0, 180), 0.0, 0.0};
  body.attenuation = o.body_attenuation;
  list.push_back(body);
  const auto count = std::uniform_int_distribution<std::size_t>(o.inclusions_min, o.inclusions_max)(eng);
  const Mat3 body_rot = euler_zyz(body.rotation_deg);
  while (list.size() < count + 1) {
    Ellipsoid inc;
    inc.semi_axes = {uni(o.inclusion_axis_min, o.inclusion_axis_max), uni(o.inclusion_axis_min, o.inclusion_axis_max),
                     uni(o.inclusion_axis_min, o.inclusion_axis_max)};
    inc.rotation_deg = {uni(0, 360), uni(0, 180), uni(0, 360)};
    inc.attenuation = uni(o.inclusion_contrast_min, o.inclusion_contrast_max);
    // Place the inclusion so its bounding sphere stays inside the body.
    const double rmax = std::max({inc.semi_axes[0], inc.semi_axes[1], inc.semi_axes[2]});
    const Vec3 room{body.semi_axes[0] - rmax, body.semi_axes[1] - rmax, body.semi_axes[2] - rmax};
    if (room[0] <= 1 || room[1] <= 1 || room[2] <= 1) continue;
    Vec3 unit{uni(-1, 1), uni(-1, 1), uni(-1, 1)};
    if (unit[0] * unit[0] + unit[1] * unit[1] + unit[2] * unit[2] > 1.0) continue;
    Vec3 local{unit[0] * room[0], unit[1] * room[1], unit[2] * room[2]};
    for (int i = 0; i < 3; ++i) {
      inc.center[i] = body.center[i] + body_rot[i][0] * local[0] + body_rot[i][1] * local[1] + body_rot[i][2] * local[2];
    }
    if (!detail::inside_on_surface(inc, body)) continue;
    list.push_back(inc);
  }
  return EllipsoidPhantom(std::move(list));
}

}  // namespace sparsebeam
