#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparsebeam/errors.hpp"

namespace sparsebeam {

/// Extent of a 3D field, slowest-varying axis first.
struct Shape3 {
  std::size_t d0 = 0;
  std::size_t d1 = 0;
  std::size_t d2 = 0;

  [[nodiscard]] constexpr std::size_t size() const noexcept { return d0 * d1 * d2; }
  [[nodiscard]] constexpr std::size_t operator[](std::size_t axis) const noexcept {
    return axis == 0 ? d0 : (axis == 1 ? d1 : d2);
  }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;

  [[nodiscard]] std::string str() const {
    return std::to_string(d0) + "x" + std::to_string(d1) + "x" + std::to_string(d2);
  }
};

/// Dense 3D scalar field stored in row-major (d2 fastest) order.
template <typename Real>
class Field3 {
 public:
  using value_type = Real;

  Field3() = default;
  explicit Field3(Shape3 shape, Real fill = Real(0)) : shape_(shape), data_(shape.size(), fill) {}
  Field3(Shape3 shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("field data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] std::size_t offset(std::size_t i0, std::size_t i1, std::size_t i2) const noexcept {
    return (i0 * shape_.d1 + i1) * shape_.d2 + i2;
  }
  Real& operator()(std::size_t i0, std::size_t i1, std::size_t i2) noexcept { return data_[offset(i0, i1, i2)]; }
  const Real& operator()(std::size_t i0, std::size_t i1, std::size_t i2) const noexcept {
    return data_[offset(i0, i1, i2)];
  }
  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::span<Real> values() noexcept { return data_; }
  [[nodiscard]] std::span<const Real> values() const noexcept { return data_; }
  [[nodiscard]] std::vector<Real>& storage() noexcept { return data_; }
  [[nodiscard]] const std::vector<Real>& storage() const noexcept { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  [[nodiscard]] Field3<Other> cast() const {
    Field3<Other> out(shape_);
    std::transform(data_.begin(), data_.end(), out.values().begin(), [](Real v) { return static_cast<Other>(v); });
    return out;
  }

  friend bool operator==(const Field3&, const Field3&) = default;

 private:
  Shape3 shape_{};
  std::vector<Real> data_;
};

template <typename A, typename B>
void require_same_shape(const Field3<A>& a, const Field3<B>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace sparsebeam
