#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cohft/io.hpp"
#include "cohft/tape.hpp"

namespace cohft {

// Platform-independent random stream: raw 64-bit engine output mapped to
// doubles by hand, so a seed produces the same values everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  Real uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  Real normal();

 private:
  std::mt19937_64 engine_;
};

Tensor uniform_tensor(Rng& rng, Shape shape, Real lo, Real hi);

enum class Init {
  Uniform,      // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  Zero,
  One,
  ZeroAtStart,  // zero under safe-start initialization, Uniform otherwise
};

enum class InitMode {
  SafeStart,  // every residual branch starts as the identity
  Dense,      // every weight random; used to exercise all paths
};

// Named learnable tensors in definition order.
class ModelState {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const io::NamedTensors& entries() const { return entries_; }
  io::NamedTensors& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  static ModelState from_entries(io::NamedTensors entries);

  bool operator==(const ModelState& other) const { return entries_ == other.entries_; }

 private:
  io::NamedTensors entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Supplies parameters to the module builders. The same builder code runs
// against an initializer (creating the state), a shape counter, or a tape
// binder (producing differentiable leaves for a forward pass).
class ParamSource {
 public:
  virtual ~ParamSource() = default;
  virtual Var get(const std::string& name, const Shape& shape, Init init) = 0;
};

class StateInitializer final : public ParamSource {
 public:
  StateInitializer(ModelState& state, std::uint64_t seed, InitMode mode) : state_(state), rng_(seed), mode_(mode) {}
  Var get(const std::string& name, const Shape& shape, Init init) override;

 private:
  ModelState& state_;
  Rng rng_;
  InitMode mode_;
};

class ShapeCounter final : public ParamSource {
 public:
  Var get(const std::string& name, const Shape& shape, Init init) override;
  std::size_t count() const { return count_; }
  const std::vector<std::pair<std::string, Shape>>& shapes() const { return shapes_; }

 private:
  std::size_t count_ = 0;
  std::vector<std::pair<std::string, Shape>> shapes_;
};

class TapeBinder final : public ParamSource {
 public:
  TapeBinder(Tape& tape, const ModelState& state, bool requires_grad = true)
      : tape_(tape), state_(state), requires_grad_(requires_grad) {}
  Var get(const std::string& name, const Shape& shape, Init init) override;

  // Parameters bound so far, in binding order.
  const std::vector<std::pair<std::string, Var>>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ModelState& state_;
  bool requires_grad_;
  std::vector<std::pair<std::string, Var>> bound_;
  std::unordered_map<std::string, Var> cache_;
};

// Building-block parameter groups.

struct ConvParams {
  Var weights, bias;
  std::size_t kernel = 1;
};

struct NormParams {
  Var gain, shift;
};

struct LinearParams {
  Var weights, bias;
};

ConvParams conv_params(ParamSource& src, const std::string& name, std::size_t kernel, std::size_t cin,
                       std::size_t cout, Init weight_init = Init::Uniform);
NormParams norm_params(ParamSource& src, const std::string& name, std::size_t width);
LinearParams linear_params(ParamSource& src, const std::string& name, std::size_t din, std::size_t dout);

// Same-size convolution (odd kernel, pad k/2).
Var conv_same(const ConvParams& p, Var x);
Var norm(const NormParams& p, Var x);
Var affine(const LinearParams& p, Var x);

}  // namespace cohft
