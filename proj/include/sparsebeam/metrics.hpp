#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/field.hpp"

namespace sparsebeam {

template <typename Real>
[[nodiscard]] double rmse(const Field3<Real>& recon, const Field3<Real>& truth) {
  require_same_shape(recon, truth, "rmse");
  if (truth.size() == 0) throw ShapeError("rmse: empty field");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - static_cast<double>(truth[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

/// max - min of the reference field.
template <typename Real>
[[nodiscard]] double dynamic_range(const Field3<Real>& truth) {
  const auto [lo, hi] = std::minmax_element(truth.values().begin(), truth.values().end());
  return static_cast<double>(*hi) - static_cast<double>(*lo);
}

/// 20 log10(L / rmse) with L the reference's dynamic range; +inf for identical fields.
template <typename Real>
[[nodiscard]] double psnr(const Field3<Real>& recon, const Field3<Real>& truth) {
  const double e = rmse(recon, truth);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  const double range = dynamic_range(truth);
  if (!(range > 0.0)) throw ShapeError("psnr: reference has no dynamic range");
  return 20.0 * std::log10(range / e);
}

namespace detail {

// Summed-volume table with a zero border: S(z+1, y+1, x+1) = sum over [0..z]x[0..y]x[0..x].
class SummedVolume {
 public:
  SummedVolume(Shape3 s, const std::vector<double>& v) : d1_(s.d1 + 1), d2_(s.d2 + 1), t_((s.d0 + 1) * d1_ * d2_, 0.0) {
    for (std::size_t z = 0; z < s.d0; ++z)
      for (std::size_t y = 0; y < s.d1; ++y)
        for (std::size_t x = 0; x < s.d2; ++x) {
          at(z + 1, y + 1, x + 1) = v[(z * s.d1 + y) * s.d2 + x] + at(z, y + 1, x + 1) + at(z + 1, y, x + 1) +
                                    at(z + 1, y + 1, x) - at(z, y, x + 1) - at(z, y + 1, x) - at(z + 1, y, x) +
                                    at(z, y, x);
        }
  }
  // Sum over the box [z, z+n) x [y, y+n) x [x, x+n).
  [[nodiscard]] double box(std::size_t z, std::size_t y, std::size_t x, std::size_t n) const {
    const std::size_t Z = z + n, Y = y + n, X = x + n;
    return at(Z, Y, X) - at(z, Y, X) - at(Z, y, X) - at(Z, Y, x) + at(z, y, X) + at(z, Y, x) + at(Z, y, x) -
           at(z, y, x);
  }

 private:
  double& at(std::size_t z, std::size_t y, std::size_t x) { return t_[(z * d1_ + y) * d2_ + x]; }
  [[nodiscard]] double at(std::size_t z, std::size_t y, std::size_t x) const { return t_[(z * d1_ + y) * d2_ + x]; }
  std::size_t d1_, d2_;
  std::vector<double> t_;
};

}  // namespace detail

/// Mean 3D structural similarity over all fully contained cubic windows of
/// side `window`, constants (0.01 L)^2 and (0.03 L)^2 with L the reference's
/// dynamic range.
template <typename Real>
[[nodiscard]] double ssim(const Field3<Real>& recon, const Field3<Real>& truth, std::size_t window = 7) {
  require_same_shape(recon, truth, "ssim");
  const Shape3 s = truth.shape();
  if (s.d0 < window || s.d1 < window || s.d2 < window) throw ShapeError("ssim: field smaller than the window");
  if (recon == truth) return 1.0;
  const double L = dynamic_range(truth);
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const std::size_t n = truth.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = recon[i];
    b[i] = truth[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const detail::SummedVolume sa(s, a), sb(s, b), saa(s, aa), sbb(s, bb), sab(s, ab);
  const double count = static_cast<double>(window * window * window);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t z = 0; z + window <= s.d0; ++z)
    for (std::size_t y = 0; y + window <= s.d1; ++y)
      for (std::size_t x = 0; x + window <= s.d2; ++x) {
        const double ma = sa.box(z, y, x, window) / count;
        const double mb = sb.box(z, y, x, window) / count;
        const double va = std::max(0.0, saa.box(z, y, x, window) / count - ma * ma);
        const double vb = std::max(0.0, sbb.box(z, y, x, window) / count - mb * mb);
        const double cov = sab.box(z, y, x, window) / count - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
  return total / static_cast<double>(windows);
}

struct Metrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

template <typename Real>
[[nodiscard]] Metrics evaluate_metrics(const Field3<Real>& recon, const Field3<Real>& truth) {
  return Metrics{psnr(recon, truth), ssim(recon, truth), rmse(recon, truth)};
}

/// PSNR of identical fields is written as the string "inf".
inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  if (std::isinf(m.psnr)) {
    j["psnr_db"] = "inf";
  } else {
    j["psnr_db"] = m.psnr;
  }
  j["ssim"] = m.ssim;
  j["rmse"] = m.rmse;
  return j;
}

}  // namespace sparsebeam
