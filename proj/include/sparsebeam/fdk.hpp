#pragma once

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "sparsebeam/volumes.hpp"
#include "sparsebeam/worker_pool.hpp"

namespace sparsebeam {

enum class FilterWindow { ram_lak, hann };

[[nodiscard]] inline FilterWindow window_from_string(const std::string& s) {
  if (s == "ramlak" || s == "ram-lak") return FilterWindow::ram_lak;
  if (s == "hann") return FilterWindow::hann;
  throw ConfigError("unknown filter '" + s + "' (expected ramlak|hann)");
}

namespace detail {

// FFTW's planner is not re-entrant; plan execution on fresh arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwPlans {
  int n = 0;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  explicit FftwPlans(int length) : n(length) {
    real = fftw_alloc_real(static_cast<std::size_t>(n));
    spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    forward = fftw_plan_dft_r2c_1d(n, real, spec, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(n, spec, real, FFTW_ESTIMATE);
  }
  FftwPlans(const FftwPlans&) = delete;
  FftwPlans& operator=(const FftwPlans&) = delete;
  ~FftwPlans() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
    fftw_free(real);
    fftw_free(spec);
  }
};

}  // namespace detail

/// Row ramp filter built from the band-limited discrete kernel
///   h(0) = 1/(4 tau^2), h(odd n) = -1/(n pi tau)^2, h(even n) = 0,
/// transformed to a real, even frequency response on a zero-padded length
/// (power of two >= 2 * row length). The DC bin is exactly zero.
class RampFilter {
 public:
  RampFilter(std::size_t row_length, double spacing, FilterWindow window = FilterWindow::ram_lak)
      : window_(window), spacing_(spacing) {
    if (row_length == 0 || !(spacing > 0)) throw ConfigError("ramp filter: empty row or non-positive spacing");
    length_ = 1;
    while (length_ < 2 * row_length) length_ *= 2;
    detail::FftwPlans plans(static_cast<int>(length_));
    const double tau2 = spacing * spacing;
    for (std::size_t i = 0; i < length_; ++i) {
      const long n = i < length_ / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(length_);
      double h = 0.0;
      if (n == 0) h = 1.0 / (4.0 * tau2);
      else if (n % 2 != 0) h = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(n * n) * tau2);
      plans.real[i] = h * spacing;
    }
    fftw_execute(plans.forward);
    response_.resize(length_ / 2 + 1);
    for (std::size_t f = 0; f < response_.size(); ++f) {
      double r = plans.spec[f][0];
      if (window == FilterWindow::hann) {
        r *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(length_)));
      }
      response_[f] = r;
    }
    response_[0] = 0.0;
  }

  [[nodiscard]] std::size_t length() const noexcept { return length_; }
  [[nodiscard]] FilterWindow window() const noexcept { return window_; }
  [[nodiscard]] double spacing() const noexcept { return spacing_; }
  /// Non-negative frequencies 0..length/2 (the response is real and even).
  [[nodiscard]] const std::vector<double>& response() const noexcept { return response_; }

  /// Filters one row with zero padding to length().
  void filter_row(std::span<const double> row, std::span<double> out, detail::FftwPlans& plans) const {
    std::fill(plans.real, plans.real + length_, 0.0);
    std::copy(row.begin(), row.end(), plans.real);
    apply(plans);
    std::copy_n(plans.real, out.size(), out.begin());
  }

  /// Circular filtering of a full-length periodic row (no padding).
  [[nodiscard]] std::vector<double> filter_circular(std::span<const double> row) const {
    if (row.size() != length_) throw ShapeError("filter_circular expects a row of the padded length");
    detail::FftwPlans plans(static_cast<int>(length_));
    std::copy(row.begin(), row.end(), plans.real);
    apply(plans);
    return std::vector<double>(plans.real, plans.real + length_);
  }

 private:
  void apply(detail::FftwPlans& plans) const {
    fftw_execute_dft_r2c(plans.forward, plans.real, plans.spec);
    const double norm = 1.0 / static_cast<double>(length_);
    for (std::size_t f = 0; f < response_.size(); ++f) {
      plans.spec[f][0] *= response_[f] * norm;
      plans.spec[f][1] *= response_[f] * norm;
    }
    fftw_execute_dft_c2r(plans.inverse, plans.spec, plans.real);
  }

  std::size_t length_ = 0;
  FilterWindow window_;
  double spacing_;
  std::vector<double> response_;
};

/// Which views feed the reconstruction: all of them (every view must be
/// present) or only those flagged present, with the angular weight scaled to
/// the number used.
enum class ViewSelection { all, present };

/// Feldkamp-Davis-Kress reconstruction for a full circular orbit:
/// cosine pre-weighting, row-wise ramp filtering, and voxel-driven
/// backprojection with inverse-square distance weighting. Output in 1/mm.
[[nodiscard]] inline ImageVolume fdk_reconstruct(const ProjectionSet& projections, Shape3 out_dims, double voxel_size,
                                                 FilterWindow window = FilterWindow::ram_lak,
                                                 ViewSelection views = ViewSelection::all, std::size_t workers = 1) {
  projections.check();
  const ConeBeamGeometry& g = projections.geometry;
  g.validate();
  if (out_dims.size() == 0 || !(voxel_size > 0)) throw ConfigError("fdk: empty output grid");
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < g.n_views; ++k) {
    if (projections.view_mask[k]) used.push_back(k);
    else if (views == ViewSelection::all) {
      throw ReconstructionError("fdk: view " + std::to_string(k) + " is absent; reconstruct present views only");
    }
  }
  if (used.empty()) throw ReconstructionError("fdk: no views to reconstruct from");

  const std::size_t rows = g.det_rows, cols = g.det_cols;
  const double R = g.source_to_iso, D = g.source_to_detector;
  const double iso_pitch = g.det_pitch * R / D;
  const RampFilter filter(cols, iso_pitch, window);

  // Cosine weighting and filtering, view by view.
  std::vector<double> filtered(used.size() * rows * cols);
  parallel_for(used.size(), workers, [&](std::size_t i) {
    detail::FftwPlans plans(static_cast<int>(filter.length()));
    std::vector<double> row(cols);
    const std::size_t k = used[i];
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = g.cell_v(static_cast<double>(r));
      for (std::size_t c = 0; c < cols; ++c) {
        const double u = g.cell_u(static_cast<double>(c));
        row[c] = static_cast<double>(projections.data(k, r, c)) * D / std::sqrt(D * D + u * u + v * v);
      }
      filter.filter_row(row, std::span<double>(filtered).subspan((i * rows + r) * cols, cols), plans);
    }
  });

  const double dbeta = deg2rad(g.angular_range_deg) / static_cast<double>(used.size());
  ImageVolume out{Field3<float>(out_dims), voxel_size};
  std::vector<double> cos_b(used.size()), sin_b(used.size());
  for (std::size_t i = 0; i < used.size(); ++i) {
    cos_b[i] = std::cos(g.view_angle(used[i]));
    sin_b[i] = std::sin(g.view_angle(used[i]));
  }
  const double col_mid = 0.5 * static_cast<double>(cols - 1), row_mid = 0.5 * static_cast<double>(rows - 1);

  parallel_for(out_dims.d0, workers, [&](std::size_t iz) {
    const double z = out.coord(iz, out_dims.d0);
    std::vector<double> slice(out_dims.d1 * out_dims.d2, 0.0);
    for (std::size_t i = 0; i < used.size(); ++i) {
      const double* q = filtered.data() + i * rows * cols;
      for (std::size_t iy = 0; iy < out_dims.d1; ++iy) {
        const double y = out.coord(iy, out_dims.d1);
        for (std::size_t ix = 0; ix < out_dims.d2; ++ix) {
          const double x = out.coord(ix, out_dims.d2);
          const double depth = R - (x * cos_b[i] + y * sin_b[i]);
          const double lateral = -x * sin_b[i] + y * cos_b[i];
          const double mag = R / depth;
          const double fc = lateral * mag / iso_pitch + col_mid;
          const double fr = z * mag / iso_pitch + row_mid;
          const double c0 = std::floor(fc), r0 = std::floor(fr);
          const long ci = static_cast<long>(c0), ri = static_cast<long>(r0);
          const double wc = fc - c0, wr = fr - r0;
          auto at = [&](long r, long c) -> double {
            if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) return 0.0;
            return q[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
          };
          const double val = (at(ri, ci) * (1 - wc) + at(ri, ci + 1) * wc) * (1 - wr) +
                             (at(ri + 1, ci) * (1 - wc) + at(ri + 1, ci + 1) * wc) * wr;
          slice[iy * out_dims.d2 + ix] += mag * mag * val;
        }
      }
    }
    for (std::size_t j = 0; j < slice.size(); ++j) {
      out.data.storage()[iz * slice.size() + j] = static_cast<float>(0.5 * dbeta * slice[j]);
    }
  });
  return out;
}

/// Hounsfield units: 1000 (mu - mu_water) / mu_water.
[[nodiscard]] inline ImageVolume hu_convert(const ImageVolume& volume, double mu_water) {
  if (!(mu_water > 0)) throw ConfigError("hu_convert: mu_water must be positive");
  ImageVolume out = volume;
  for (float& v : out.data.values()) v = static_cast<float>(1000.0 * (static_cast<double>(v) - mu_water) / mu_water);
  return out;
}

}  // namespace sparsebeam
