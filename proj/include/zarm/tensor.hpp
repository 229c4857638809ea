#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "zarm/errors.hpp"

namespace zarm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major real array. Rank 1 (vectors) and rank 2 (matrices) cover
// everything the model needs.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), v(numel(shape), S(0)) {}
  Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), v(std::move(values)) {
    if (numel(shape) != v.size())
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(v.size()) + " values");
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  std::size_t size() const { return v.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return v.size() == 1; }

  S& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  const S& at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }
  S& operator[](std::size_t i) { return v[i]; }
  const S& operator[](std::size_t i) const { return v[i]; }

  void fill(S value) { std::fill(v.begin(), v.end(), value); }

  void check_finite(const std::string& name) const {
    for (S x : v)
      if (!std::isfinite(x)) throw NumericError("non-finite value in " + name);
  }
};

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const std::string& op) {
  if (a.shape != b.shape)
    throw DimensionError(op + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace zarm
