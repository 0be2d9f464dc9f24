#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "sparsebeam/errors.hpp"
#include "sparsebeam/volumes.hpp"

namespace sparsebeam {

enum class Plane { axial, sagittal, coronal };

[[nodiscard]] inline Plane plane_from_string(const std::string& s) {
  if (s == "axial") return Plane::axial;
  if (s == "sagittal") return Plane::sagittal;
  if (s == "coronal") return Plane::coronal;
  throw ConfigError("unknown plane '" + s + "' (expected axial|sagittal|coronal)");
}

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  [[nodiscard]] std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// Display window [lo, hi] to 0..255; values at or below lo map to 0, at or
/// above hi to 255, rounded to nearest in between.
[[nodiscard]] inline std::uint8_t window_to_gray(double value, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("display window needs hi > lo");
  const double f = std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * f));
}

/// Plane layouts, all from (z, y, x) storage:
///   axial:    slice along z, rows y, cols x
///   coronal:  slice along y, rows z, cols x
///   sagittal: slice along x, rows z, cols y
[[nodiscard]] inline std::size_t plane_depth(const Shape3& d, Plane p) {
  return p == Plane::axial ? d.d0 : (p == Plane::coronal ? d.d1 : d.d2);
}

[[nodiscard]] inline GrayImage render_slice(const ImageVolume& hu, Plane plane, std::size_t slice, double lo, double hi) {
  const Shape3& d = hu.dims();
  if (slice >= plane_depth(d, plane)) {
    throw ConfigError("slice " + std::to_string(slice) + " out of range for a depth of " +
                      std::to_string(plane_depth(d, plane)));
  }
  GrayImage img;
  switch (plane) {
    case Plane::axial:
      img.height = d.d1;
      img.width = d.d2;
      break;
    case Plane::coronal:
      img.height = d.d0;
      img.width = d.d2;
      break;
    case Plane::sagittal:
      img.height = d.d0;
      img.width = d.d1;
      break;
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      float v = 0.0f;
      switch (plane) {
        case Plane::axial:
          v = hu.data(slice, r, c);
          break;
        case Plane::coronal:
          v = hu.data(r, slice, c);
          break;
        case Plane::sagittal:
          v = hu.data(r, c, slice);
          break;
      }
      img.pixels[r * img.width + c] = window_to_gray(v, lo, hi);
    }
  return img;
}

/// Axial, coronal and sagittal central slices side by side, separated by a
/// 2-pixel black gutter.
[[nodiscard]] inline GrayImage render_montage(const ImageVolume& hu, double lo, double hi) {
  const Shape3& d = hu.dims();
  const GrayImage parts[3] = {render_slice(hu, Plane::axial, d.d0 / 2, lo, hi),
                              render_slice(hu, Plane::coronal, d.d1 / 2, lo, hi),
                              render_slice(hu, Plane::sagittal, d.d2 / 2, lo, hi)};
  constexpr std::size_t gutter = 2;
  GrayImage out;
  for (const auto& p : parts) {
    out.width += p.width;
    out.height = std::max(out.height, p.height);
  }
  out.width += 2 * gutter;
  out.pixels.assign(out.width * out.height, 0);
  std::size_t x0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.height; ++r)
      std::copy_n(p.pixels.begin() + static_cast<std::ptrdiff_t>(r * p.width), p.width,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(r * out.width + x0));
    x0 += p.width + gutter;
  }
  return out;
}

namespace detail {

struct PngFile {
  std::FILE* f = nullptr;
  explicit PngFile(const std::filesystem::path& p, const char* mode) : f(std::fopen(p.c_str(), mode)) {}
  ~PngFile() {
    if (f) std::fclose(f);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const GrayImage& img) {
  if (img.width == 0 || img.height == 0) throw IoError("refusing to write an empty image");
  detail::PngFile file(path, "wb");
  if (!file.f) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < img.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * img.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit grayscale PNG.
[[nodiscard]] inline GrayImage read_png(const std::filesystem::path& path) {
  detail::PngFile file(path, "rb");
  if (!file.f) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": not an 8-bit grayscale PNG");
  }
  GrayImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(img.width * img.height);
  for (std::size_t r = 0; r < img.height; ++r) png_read_row(png, img.pixels.data() + r * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace sparsebeam
