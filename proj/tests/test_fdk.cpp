#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <catch_amalgamated.hpp>

#include "sparsebeam/fdk.hpp"
#include "sparsebeam/projector.hpp"

using namespace sparsebeam;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kMu = 0.02;
constexpr double kRadius = 20.0;

EllipsoidPhantom centered_sphere() {
  return EllipsoidPhantom({Ellipsoid{{0, 0, 0}, {kRadius, kRadius, kRadius}, {0, 0, 0}, kMu, true}});
}

ImageVolume reconstruct_desk(const ProjectionSet& p, ViewSelection views = ViewSelection::all) {
  const auto preset = desk_preset();
  return fdk_reconstruct(p, preset.volume_dims, preset.voxel_size, FilterWindow::ram_lak, views);
}

double radius_of(const ImageVolume& v, std::size_t z, std::size_t y, std::size_t x) {
  const Shape3 d = v.dims();
  const double px = v.coord(x, d.d2), py = v.coord(y, d.d1), pz = v.coord(z, d.d0);
  return std::sqrt(px * px + py * py + pz * pz);
}

double rmse(const ImageVolume& a, const ImageVolume& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.data.size()));
}

double max_abs(const Field3<float>& f) {
  double m = 0.0;
  for (float v : f.values()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

}  // namespace

TEST_CASE("ramp filter response", "[fdk][filter]") {
  const RampFilter f(96, 1.0);
  REQUIRE(f.length() == 256);
  const auto& h = f.response();
  REQUIRE(h.size() == 129);
  CHECK(h[0] == 0.0);
  // Close to |nu| (cycles per mm) away from DC.
  for (std::size_t k = 8; k <= 64; ++k) {
    const double nu = static_cast<double>(k) / (256.0 * 1.0);
    CHECK(std::abs(h[k] - nu) / nu < 0.02);
  }
  const RampFilter hann(96, 1.0, FilterWindow::hann);
  CHECK(hann.response()[0] == 0.0);
  CHECK(std::abs(hann.response()[128]) < 1e-12);
  CHECK(hann.response()[64] < h[64]);
  CHECK_THROWS_AS(window_from_string("shepp"), ConfigError);
  CHECK(window_from_string("ram-lak") == FilterWindow::ram_lak);
}

TEST_CASE("ramp filter removes a constant row", "[fdk][filter]") {
  const RampFilter f(96, 1.0);
  const std::vector<double> row(f.length(), 3.25);
  const auto out = f.filter_circular(row);
  for (double v : out) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("fdk of zero projections is zero", "[fdk]") {
  const ProjectionSet p(desk_preset().geometry);
  const auto v = reconstruct_desk(p);
  CHECK(v.dims() == Shape3{64, 64, 64});
  CHECK(max_abs(v.data) == 0.0);
}

TEST_CASE("fdk recovers a uniform sphere at 60 views", "[fdk][sphere]") {
  const auto g = desk_preset().geometry;
  const auto v = reconstruct_desk(project_analytic(centered_sphere(), g));
  double centre = 0.0, ring = 0.0;
  std::size_t nc = 0, nr = 0;
  for (std::size_t z = 0; z < 64; ++z)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double r = radius_of(v, z, y, x);
        if (r <= kRadius / 3.0) {
          centre += v.data(z, y, x);
          ++nc;
        } else if (r >= kRadius + 4.0 && r <= kRadius + 10.0) {
          ring += v.data(z, y, x);
          ++nr;
        }
      }
  centre /= static_cast<double>(nc);
  ring /= static_cast<double>(nr);
  INFO("central mean " << centre << ", background mean " << ring);
  CHECK(std::abs(centre - kMu) < 0.1 * kMu);
  CHECK(std::abs(ring) < 0.05 * kMu);
}

TEST_CASE("fewer views give a larger error", "[fdk][sphere]") {
  const auto preset = desk_preset();
  const auto truth = voxelize(centered_sphere(), preset.volume_dims, preset.voxel_size);
  const auto full = project_analytic(centered_sphere(), preset.geometry);
  auto g20 = preset.geometry;
  g20.n_views = 20;
  auto g120 = preset.geometry;
  g120.n_views = 120;
  const double e60 = rmse(reconstruct_desk(full), truth);
  const double e20 = rmse(reconstruct_desk(project_analytic(centered_sphere(), g20)), truth);
  const double e120 = rmse(reconstruct_desk(project_analytic(centered_sphere(), g120)), truth);
  INFO("rmse 20 views " << e20 << ", 60 views " << e60 << ", 120 views " << e120);
  CHECK(e20 > e60);
  CHECK(e120 <= e60);
}

TEST_CASE("fdk is linear in the projections", "[fdk]") {
  auto g = desk_preset().geometry;
  g.n_views = 30;
  const auto p1 = project_analytic(centered_sphere(), g);
  const auto p2 = project_analytic(EllipsoidPhantom({Ellipsoid{{8, -6, 3}, {9, 6, 5}, {20, 30, 40}, 0.01, true}}), g);
  const double a = 2.0, b = -0.5;
  ProjectionSet mix(g);
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = static_cast<float>(a * p1.data[i] + b * p2.data[i]);
  const auto r1 = reconstruct_desk(p1), r2 = reconstruct_desk(p2), rm = reconstruct_desk(mix);
  const double scale = max_abs(rm.data);
  double worst = 0.0;
  for (std::size_t i = 0; i < rm.data.size(); ++i) {
    worst = std::max(worst, std::abs(rm.data[i] - (a * r1.data[i] + b * r2.data[i])));
  }
  CHECK(worst <= 1e-5 * scale);
}

TEST_CASE("rotating the phantom by one view increment shifts the views", "[fdk][rotation]") {
  const auto g = desk_preset().geometry;
  const double step = 360.0 / static_cast<double>(g.n_views);
  Ellipsoid e{{7, -5, 2}, {12, 8, 6}, {25, 35, 10}, kMu, true};
  const auto p = project_analytic<double>(EllipsoidPhantom({e}), g);
  const double c = std::cos(deg2rad(step)), s = std::sin(deg2rad(step));
  e.center = {c * e.center[0] - s * e.center[1], s * e.center[0] + c * e.center[1], e.center[2]};
  e.rotation_deg[0] += step;
  const auto q = project_analytic<double>(EllipsoidPhantom({e}), g);
  double worst = 0.0, peak = 0.0;
  for (std::size_t k = 0; k < g.n_views; ++k)
    for (std::size_t r = 0; r < g.det_rows; ++r)
      for (std::size_t col = 0; col < g.det_cols; ++col) {
        worst = std::max(worst, std::abs(q.data((k + 1) % g.n_views, r, col) - p.data(k, r, col)));
        peak = std::max(peak, p.data(k, r, col));
      }
  CHECK(worst <= 1e-10 * peak);
}

TEST_CASE("fdk of a four-fold symmetric phantom keeps the symmetry", "[fdk][rotation]") {
  // Four spheres related by quarter turns; 60 views map onto themselves under
  // a quarter turn, as does the voxel grid.
  std::vector<Ellipsoid> list;
  list.push_back(Ellipsoid{{0, 0, 0}, {24, 24, 18}, {0, 0, 0}, kMu, true});
  for (int q = 0; q < 4; ++q) {
    const double a = q * std::numbers::pi / 2.0;
    list.push_back(Ellipsoid{{12 * std::cos(a) + 3 * -std::sin(a), 12 * std::sin(a) + 3 * std::cos(a), 4},
                             {4, 4, 4}, {0, 0, 0}, 0.01, true});
  }
  const auto v = reconstruct_desk(project_analytic(EllipsoidPhantom(list), desk_preset().geometry));
  const double scale = max_abs(v.data);
  double worst = 0.0;
  // A quarter turn (x, y) -> (-y, x) maps index (iy, ix) to (ix, 63 - iy).
  for (std::size_t z = 0; z < 64; ++z)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        worst = std::max(worst, static_cast<double>(std::abs(v.data(z, x, 63 - y) - v.data(z, y, x))));
      }
  CHECK(worst <= 1e-4 * scale);
}

TEST_CASE("sparse fdk over present views equals fdk of the sparse geometry", "[fdk][sparse]") {
  const auto g = desk_preset().geometry;
  const auto full = project_analytic(centered_sphere(), g);
  const auto sparse = downsample_views(full, 3);
  CHECK_THROWS_AS(reconstruct_desk(sparse), ReconstructionError);
  const auto a = reconstruct_desk(sparse, ViewSelection::present);
  auto g20 = g;
  g20.n_views = 20;
  const auto b = reconstruct_desk(project_analytic(centered_sphere(), g20));
  const double scale = max_abs(b.data);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  CHECK(worst <= 1e-5 * scale);

  ProjectionSet none = full;
  std::fill(none.view_mask.begin(), none.view_mask.end(), false);
  std::fill(none.data.values().begin(), none.data.values().end(), 0.0f);
  CHECK_THROWS_AS(reconstruct_desk(none, ViewSelection::present), ReconstructionError);
}

TEST_CASE("fdk does not depend on the worker count", "[fdk]") {
  auto g = desk_preset().geometry;
  g.n_views = 20;
  const auto p = project_analytic(centered_sphere(), g);
  const auto serial = fdk_reconstruct(p, Shape3{32, 32, 32}, 2.0, FilterWindow::hann, ViewSelection::all, 1);
  const auto par = fdk_reconstruct(p, Shape3{32, 32, 32}, 2.0, FilterWindow::hann, ViewSelection::all, 4);
  CHECK(par.data == serial.data);
}

TEST_CASE("hounsfield conversion", "[fdk][hu]") {
  const double water = 0.02;
  ImageVolume v{Field3<float>(Shape3{1, 1, 3}), 1.0};
  v.data[0] = static_cast<float>(water);
  v.data[1] = 0.0f;
  v.data[2] = static_cast<float>(1.55 * water);
  const auto hu = hu_convert(v, water);
  CHECK_THAT(hu.data[0], WithinAbs(0.0, 1e-3));
  CHECK(hu.data[1] == -1000.0f);
  CHECK_THAT(hu.data[2], WithinAbs(550.0, 1e-3));
  CHECK_THROWS_AS(hu_convert(v, 0.0), ConfigError);
}
