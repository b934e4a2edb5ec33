#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohft {

// Build-wide floating type. Everything, including training, runs at 64-bit.
using Real = double;

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array. A default-constructed tensor is "undefined" (no
// storage); a rank-0 tensor is a scalar holding one value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, Real v) { return Tensor(std::move(shape), v); }

  bool defined() const { return !data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* raw() { return data_.data(); }
  const Real* raw() const { return data_.data(); }
  const std::vector<Real>& vec() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::initializer_list<std::size_t> idx);
  Real at(std::initializer_list<std::size_t> idx) const;

  // Scalar value of a one-element tensor.
  Real item() const;

  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<Real> data_;
};

Real max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace cohft
