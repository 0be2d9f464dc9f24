#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sparsebeam/geometry.hpp"
#include "sparsebeam/phantom.hpp"
#include "sparsebeam/volumes.hpp"
#include "sparsebeam/worker_pool.hpp"

namespace sparsebeam {

namespace detail {

inline double trilinear(const ImageVolume& vol, double x, double y, double z) noexcept {
  const Shape3 d = vol.dims();
  const double fx = x / vol.voxel_size + 0.5 * static_cast<double>(d.d2 - 1);
  const double fy = y / vol.voxel_size + 0.5 * static_cast<double>(d.d1 - 1);
  const double fz = z / vol.voxel_size + 0.5 * static_cast<double>(d.d0 - 1);
  const double flx = std::floor(fx), fly = std::floor(fy), flz = std::floor(fz);
  const long ix = static_cast<long>(flx), iy = static_cast<long>(fly), iz = static_cast<long>(flz);
  const double wx = fx - flx, wy = fy - fly, wz = fz - flz;
  auto at = [&](long k, long j, long i) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(d.d2) || j >= static_cast<long>(d.d1) ||
        k >= static_cast<long>(d.d0)) {
      return 0.0;
    }
    return vol.data(static_cast<std::size_t>(k), static_cast<std::size_t>(j), static_cast<std::size_t>(i));
  };
  const double c00 = at(iz, iy, ix) * (1 - wx) + at(iz, iy, ix + 1) * wx;
  const double c01 = at(iz, iy + 1, ix) * (1 - wx) + at(iz, iy + 1, ix + 1) * wx;
  const double c10 = at(iz + 1, iy, ix) * (1 - wx) + at(iz + 1, iy, ix + 1) * wx;
  const double c11 = at(iz + 1, iy + 1, ix) * (1 - wx) + at(iz + 1, iy + 1, ix + 1) * wx;
  return (c00 * (1 - wy) + c01 * wy) * (1 - wz) + (c10 * (1 - wy) + c11 * wy) * wz;
}

// Parametric [t0, t1] of the segment origin + t*dir inside an axis-aligned box.
inline bool clip_to_box(const Vec3& origin, const Vec3& dir, const Vec3& half, double& t0, double& t1) noexcept {
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (std::abs(origin[a]) > half[a]) return false;
      continue;
    }
    double lo = (-half[a] - origin[a]) / dir[a];
    double hi = (half[a] - origin[a]) / dir[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t1 > t0;
}

}  // namespace detail

/// Throws GeometryError if any corner of the volume projects off the detector
/// in some view.
inline void check_volume_in_fov(const Shape3& dims, double voxel_size, const ConeBeamGeometry& g) {
  g.validate();
  const double hx = 0.5 * static_cast<double>(dims.d2) * voxel_size;
  const double hy = 0.5 * static_cast<double>(dims.d1) * voxel_size;
  const double hz = 0.5 * static_cast<double>(dims.d0) * voxel_size;
  const double half_u = 0.5 * static_cast<double>(g.det_cols) * g.det_pitch;
  const double half_v = 0.5 * static_cast<double>(g.det_rows) * g.det_pitch;
  for (std::size_t k = 0; k < g.n_views; ++k) {
    const double b = g.view_angle(k);
    const double c = std::cos(b), s = std::sin(b);
    for (int corner = 0; corner < 8; ++corner) {
      const double x = (corner & 1) ? hx : -hx, y = (corner & 2) ? hy : -hy, z = (corner & 4) ? hz : -hz;
      const double depth = g.source_to_iso - (x * c + y * s);
      if (depth <= 0) throw GeometryError("volume reaches the source");
      const double mag = g.source_to_detector / depth;
      const double u = (-x * s + y * c) * mag, v = z * mag;
      if (std::abs(u) > half_u || std::abs(v) > half_v) {
        throw GeometryError("volume " + dims.str() + " at " + std::to_string(voxel_size) +
                            " mm exceeds the detector field of view");
      }
    }
  }
}

/// Ray-driven forward projection: midpoint samples at spacing <= voxel/2,
/// trilinear interpolation, zero outside the grid.
[[nodiscard]] inline ProjectionSet project(const ImageVolume& volume, const ConeBeamGeometry& g,
                                           std::size_t workers = 1) {
  check_volume_in_fov(volume.dims(), volume.voxel_size, g);
  ProjectionSet out(g);
  const Shape3 d = volume.dims();
  // The interpolant is non-zero up to half a voxel beyond the outer centres.
  const Vec3 half{0.5 * static_cast<double>(d.d2 + 1) * volume.voxel_size,
                  0.5 * static_cast<double>(d.d1 + 1) * volume.voxel_size,
                  0.5 * static_cast<double>(d.d0 + 1) * volume.voxel_size};
  const double max_step = 0.5 * volume.voxel_size;
  parallel_for(g.n_views, workers, [&](std::size_t k) {
    const Vec3 src = g.source(k);
    for (std::size_t r = 0; r < g.det_rows; ++r) {
      for (std::size_t c = 0; c < g.det_cols; ++c) {
        const Vec3 cell = g.cell_position(k, static_cast<double>(r), static_cast<double>(c));
        Vec3 dir{cell[0] - src[0], cell[1] - src[1], cell[2] - src[2]};
        const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (double& v : dir) v /= len;
        double t0 = 0.0, t1 = len;
        if (!detail::clip_to_box(src, dir, half, t0, t1)) continue;
        const auto n = static_cast<std::size_t>(std::ceil((t1 - t0) / max_step));
        const double h = (t1 - t0) / static_cast<double>(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double t = t0 + (static_cast<double>(i) + 0.5) * h;
          acc += detail::trilinear(volume, src[0] + t * dir[0], src[1] + t * dir[1], src[2] + t * dir[2]);
        }
        out.data(k, r, c) = static_cast<float>(acc * h);
      }
    }
  });
  return out;
}

/// Exact line integrals through an ellipsoid phantom from quadratic chord
/// roots. Replacing (non-additive) ellipsoids are handled by integrating the
/// piecewise-constant profile between sorted chord endpoints.
template <typename Real = float>
[[nodiscard]] BasicProjectionSet<Real> project_analytic(const EllipsoidPhantom& phantom, const ConeBeamGeometry& g,
                                                        std::size_t workers = 1) {
  g.validate();
  BasicProjectionSet<Real> out(g);
  if (phantom.empty()) return out;
  const auto& list = phantom.ellipsoids();
  const bool additive = phantom.all_additive();
  parallel_for(g.n_views, workers, [&](std::size_t k) {
    const Vec3 src = g.source(k);
    std::vector<std::pair<double, double>> chords(list.size());
    std::vector<double> cuts;
    for (std::size_t r = 0; r < g.det_rows; ++r) {
      for (std::size_t c = 0; c < g.det_cols; ++c) {
        const Vec3 cell = g.cell_position(k, static_cast<double>(r), static_cast<double>(c));
        Vec3 dir{cell[0] - src[0], cell[1] - src[1], cell[2] - src[2]};
        const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (double& v : dir) v /= len;
        double acc = 0.0;
        cuts.clear();
        for (std::size_t e = 0; e < list.size(); ++e) {
          const Mat3& rot = phantom.rotation(e);
          const Vec3 a = list[e].to_unit(src, rot);
          Vec3 b{};
          for (int i = 0; i < 3; ++i) {
            b[i] = (rot[0][i] * dir[0] + rot[1][i] * dir[1] + rot[2][i] * dir[2]) / list[e].semi_axes[i];
          }
          const double qa = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
          const double qb = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
          const double qc = a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - 1.0;
          const double disc = qb * qb - qa * qc;
          if (disc <= 0.0) {
            chords[e] = {0.0, 0.0};
            continue;
          }
          const double root = std::sqrt(disc);
          chords[e] = {(-qb - root) / qa, (-qb + root) / qa};
          if (additive) {
            acc += list[e].attenuation * (2.0 * root / qa);
          } else {
            cuts.push_back(chords[e].first);
            cuts.push_back(chords[e].second);
          }
        }
        if (!additive && !cuts.empty()) {
          std::sort(cuts.begin(), cuts.end());
          for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double lo = cuts[i], hi = cuts[i + 1];
            if (hi <= lo) continue;
            const double mid = 0.5 * (lo + hi);
            double v = 0.0;
            for (std::size_t e = 0; e < list.size(); ++e) {
              if (mid > chords[e].first && mid < chords[e].second) {
                v = list[e].additive ? v + list[e].attenuation : list[e].attenuation;
              }
            }
            acc += v * (hi - lo);
          }
        }
        out.data(k, r, c) = static_cast<Real>(acc);
      }
    }
  });
  return out;
}

/// Keeps views whose index is a multiple of keep_every; the rest are zeroed
/// and flagged absent. Dimensions are unchanged.
template <typename Real>
[[nodiscard]] BasicProjectionSet<Real> downsample_views(const BasicProjectionSet<Real>& full, std::size_t keep_every) {
  full.check();
  if (keep_every == 0 || full.geometry.n_views % keep_every != 0) {
    throw ConfigError("keep_every=" + std::to_string(keep_every) + " does not divide " +
                      std::to_string(full.geometry.n_views) + " views");
  }
  BasicProjectionSet<Real> out = full;
  const std::size_t per_view = full.geometry.det_rows * full.geometry.det_cols;
  for (std::size_t k = 0; k < full.geometry.n_views; ++k) {
    const bool keep = (k % keep_every == 0) && full.view_mask[k];
    out.view_mask[k] = keep;
    if (!keep) std::fill_n(out.data.values().begin() + static_cast<std::ptrdiff_t>(k * per_view), per_view, Real(0));
  }
  return out;
}

/// How absent views are represented when they condition the inpainting model.
enum class ViewFill { zero, linear };

[[nodiscard]] inline ViewFill view_fill_from_string(const std::string& s) {
  if (s == "zero") return ViewFill::zero;
  if (s == "linear") return ViewFill::linear;
  throw ConfigError("unknown view fill '" + s + "' (expected zero|linear)");
}

[[nodiscard]] inline const char* to_string(ViewFill f) noexcept { return f == ViewFill::zero ? "zero" : "linear"; }

/// Absent views interpolated linearly in view index between the nearest
/// present neighbours, wrapping around a full 360 degree orbit and held
/// constant past the ends of a shorter arc. The mask is left unchanged.
template <typename Real>
[[nodiscard]] BasicProjectionSet<Real> fill_views(const BasicProjectionSet<Real>& sparse, ViewFill fill) {
  sparse.check();
  BasicProjectionSet<Real> out = sparse;
  const std::size_t n = sparse.geometry.n_views, per_view = sparse.geometry.det_rows * sparse.geometry.det_cols;
  std::vector<std::size_t> present;
  for (std::size_t k = 0; k < n; ++k)
    if (sparse.view_mask[k]) present.push_back(k);
  if (present.empty()) throw ReconstructionError("fill_views: no present views");
  const bool wrap = std::abs(sparse.geometry.angular_range_deg - 360.0) < 1e-9;
  const Real* src = sparse.data.values().data();
  Real* dst_all = out.data.values().data();
  const auto N = static_cast<std::ptrdiff_t>(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (sparse.view_mask[k]) continue;
    Real* dst = dst_all + k * per_view;
    if (fill == ViewFill::zero) {
      std::fill_n(dst, per_view, Real(0));
      continue;
    }
    const auto next = std::upper_bound(present.begin(), present.end(), k);
    std::ptrdiff_t lo = 0, hi = 0;  // neighbour indices, possibly outside [0, n)
    if (next == present.end()) {
      lo = static_cast<std::ptrdiff_t>(present.back());
      hi = wrap ? static_cast<std::ptrdiff_t>(present.front()) + N : lo;
    } else if (next == present.begin()) {
      hi = static_cast<std::ptrdiff_t>(present.front());
      lo = wrap ? static_cast<std::ptrdiff_t>(present.back()) - N : hi;
    } else {
      lo = static_cast<std::ptrdiff_t>(*(next - 1));
      hi = static_cast<std::ptrdiff_t>(*next);
    }
    const Real* a = src + static_cast<std::size_t>((lo + N) % N) * per_view;
    const Real* b = src + static_cast<std::size_t>(hi % N) * per_view;
    const double w = hi == lo ? 0.0 : static_cast<double>(static_cast<std::ptrdiff_t>(k) - lo) / static_cast<double>(hi - lo);
    for (std::size_t i = 0; i < per_view; ++i) {
      dst[i] = static_cast<Real>((1.0 - w) * static_cast<double>(a[i]) + w * static_cast<double>(b[i]));
    }
  }
  return out;
}

}  // namespace sparsebeam
