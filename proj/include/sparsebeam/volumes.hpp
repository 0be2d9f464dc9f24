#pragma once

#include <cstddef>
#include <vector>

#include "sparsebeam/field.hpp"
#include "sparsebeam/geometry.hpp"

namespace sparsebeam {

/// Attenuation field (1/mm) on an isotropic grid centred at the isocentre.
/// Storage order is (z, y, x) with x fastest.
template <typename Real = float>
struct BasicImageVolume {
  Field3<Real> data;
  double voxel_size = 1.0;

  [[nodiscard]] const Shape3& dims() const noexcept { return data.shape(); }
  /// Physical coordinate of voxel index i along an axis of n voxels.
  [[nodiscard]] double coord(std::size_t i, std::size_t n) const noexcept {
    return (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * voxel_size;
  }
};
using ImageVolume = BasicImageVolume<float>;

/// Line integrals indexed (view, row, col) with a per-view presence mask.
/// Absent views hold zeros.
template <typename Real = float>
struct BasicProjectionSet {
  ConeBeamGeometry geometry;
  Field3<Real> data;
  std::vector<bool> view_mask;

  BasicProjectionSet() = default;
  explicit BasicProjectionSet(const ConeBeamGeometry& g)
      : geometry(g), data(g.projection_shape()), view_mask(g.n_views, true) {}

  [[nodiscard]] std::size_t present_views() const noexcept {
    std::size_t n = 0;
    for (bool b : view_mask) n += b ? 1 : 0;
    return n;
  }
  [[nodiscard]] bool all_present() const noexcept { return present_views() == view_mask.size(); }

  void check() const {
    if (data.shape() != geometry.projection_shape()) {
      throw ShapeError("projection data " + data.shape().str() + " does not match geometry " +
                       geometry.projection_shape().str());
    }
    if (view_mask.size() != geometry.n_views) throw ShapeError("view mask length does not match n_views");
  }
};
using ProjectionSet = BasicProjectionSet<float>;

}  // namespace sparsebeam
