#include "cohft/params.hpp"

#include <cmath>
#include <numbers>

#include "cohft/ops.hpp"

namespace cohft {

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("Rng::integer: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next() % span);
}

Real Rng::normal() {
  // Box-Muller; u1 in (0, 1].
  const Real u1 = 1.0 - uniform();
  const Real u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor uniform_tensor(Rng& rng, Shape shape, Real lo, Real hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void ModelState::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ModelState::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].second;
}

Tensor& ModelState::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

ModelState ModelState::from_entries(io::NamedTensors entries) {
  ModelState s;
  for (auto& [name, t] : entries) s.add(std::move(name), std::move(t));
  return s;
}

namespace {

std::size_t fan_in(const Shape& shape) {
  // [k,k,cin,cout] convs and [din,dout] linears; fan-in excludes the output axis.
  if (shape.size() <= 1) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) n *= shape[i];
  return n;
}

}  // namespace

Var StateInitializer::get(const std::string& name, const Shape& shape, Init init) {
  if (init == Init::ZeroAtStart) init = mode_ == InitMode::SafeStart ? Init::Zero : Init::Uniform;
  Tensor t(shape);
  switch (init) {
    case Init::Uniform: {
      const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in(shape)));
      for (auto& v : t.data()) v = rng_.uniform(-bound, bound);
      break;
    }
    case Init::One:
      for (auto& v : t.data()) v = 1.0;
      break;
    default:
      break;
  }
  state_.add(name, std::move(t));
  return {};
}

Var ShapeCounter::get(const std::string& name, const Shape& shape, Init) {
  count_ += numel(shape);
  shapes_.emplace_back(name, shape);
  return {};
}

Var TapeBinder::get(const std::string& name, const Shape& shape, Init) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const Tensor& t = state_.at(name);
  if (t.shape() != shape) {
    throw ShapeError("parameter " + name + " has shape " + to_string(t.shape()) + ", model expects " + to_string(shape));
  }
  Var v = tape_.leaf(t, requires_grad_);
  cache_.emplace(name, v);
  bound_.emplace_back(name, v);
  return v;
}

ConvParams conv_params(ParamSource& src, const std::string& name, std::size_t kernel, std::size_t cin,
                       std::size_t cout, Init weight_init) {
  ConvParams p;
  p.weights = src.get(name + ".w", {kernel, kernel, cin, cout}, weight_init);
  p.bias = src.get(name + ".b", {cout}, Init::Zero);
  p.kernel = kernel;
  return p;
}

NormParams norm_params(ParamSource& src, const std::string& name, std::size_t width) {
  return {src.get(name + ".gain", {width}, Init::One), src.get(name + ".shift", {width}, Init::Zero)};
}

LinearParams linear_params(ParamSource& src, const std::string& name, std::size_t din, std::size_t dout) {
  return {src.get(name + ".w", {din, dout}, Init::Uniform), src.get(name + ".b", {dout}, Init::Zero)};
}

Var conv_same(const ConvParams& p, Var x) { return ops::conv2d(x, p.weights, p.bias, 1, p.kernel / 2); }
Var norm(const NormParams& p, Var x) { return ops::layer_norm(x, p.gain, p.shift); }
Var affine(const LinearParams& p, Var x) { return ops::linear(x, p.weights, p.bias); }

}  // namespace cohft
