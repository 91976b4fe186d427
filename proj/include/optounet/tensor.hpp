#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <string>
#include <type_traits>

#include "optounet/error.hpp"

namespace optounet {

/// Extents of a 4-D tensor in (batch, channel, height, width) order.
struct Dims {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t image() const { return c * h * w; }

  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "Tensor4 supports float and double only");
  return std::is_same_v<Scalar, float> ? DType::F32 : DType::F64;
}

inline void check_dims(const Dims& d) {
  if (d.n == 0 || d.c == 0 || d.h == 0 || d.w == 0) {
    throw InvalidDimsError("tensor extents must all be >= 1, got " + d.str());
  }
}

/// Dense 4-D array, row-major with n outermost and w innermost.
template <typename Scalar>
class Tensor4 {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using scalar_type = Scalar;

  Tensor4(const Dims& dims, Array data) : dims_(dims), data_(std::move(data)) {
    check_dims(dims_);
    if (static_cast<std::size_t>(data_.size()) != dims_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_.str());
    }
  }

  static Tensor4 zeros(const Dims& dims) { return constant(dims, Scalar(0)); }

  static Tensor4 constant(const Dims& dims, Scalar value) {
    check_dims(dims);
    return Tensor4(dims, Array::Constant(static_cast<Eigen::Index>(dims.size()), value));
  }

  static Tensor4 from_values(const Dims& dims, std::initializer_list<Scalar> values) {
    check_dims(dims);
    Array data(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor4(dims, std::move(data));
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return dims_.size(); }
  static constexpr DType dtype() { return dtype_of<Scalar>(); }

  const Array& array() const { return data_; }
  Array& array() { return data_; }
  const Scalar* data() const { return data_.data(); }
  Scalar* data() { return data_.data(); }

  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }
  Scalar operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[static_cast<Eigen::Index>(offset(n, c, y, x))];
  }
  Scalar& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[static_cast<Eigen::Index>(offset(n, c, y, x))];
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor4<Other> cast() const {
    return Tensor4<Other>(dims_, data_.template cast<Other>());
  }

 private:
  Dims dims_;
  Array data_;
};

template <typename Scalar>
Tensor4<Scalar> zeros(const Dims& dims) {
  return Tensor4<Scalar>::zeros(dims);
}

/// Bitwise equality of dims and payload.
template <typename Scalar>
bool bitwise_equal(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  if (a.dims() != b.dims()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(), b.data() + b.size(),
                    [](Scalar x, Scalar y) { return std::memcmp(&x, &y, sizeof(Scalar)) == 0; });
}

}  // namespace optounet
