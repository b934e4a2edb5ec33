#include "cohft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cohft {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(cohft::numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != cohft::numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " != tensor rank " + std::to_string(rank()));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for shape " + to_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

Real& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
Real Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

Real Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (cohft::numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Real m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

}  // namespace cohft
