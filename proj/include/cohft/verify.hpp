#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cohft/params.hpp"

namespace cohft {

// Builds a differentiable function of the given leaves on `tape`.
using TapeFunction = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;
using TapeFactory = std::function<std::unique_ptr<Tape>()>;

struct GradcheckReport {
  Real max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose step straddles a kink
};

// Central differences of sum(W * f(inputs)) for a fixed random W, at up to
// `samples` coordinates per input. The analytic side runs on a tape from `factory`.
// Relative error is |a - n| / max(|a|, |n|, 1e-6 * max(1, sum|W * y|)), so a
// structurally zero gradient is judged against the probe's rounding scale.
// Coordinates whose one-sided differences disagree by over 1% are redrawn.
GradcheckReport gradcheck(const TapeFunction& f, const std::vector<Tensor>& inputs, Rng& rng, std::size_t samples = 24,
                          Real step = 1e-5, const TapeFactory& factory = {});

struct CheckResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckOptions {
  std::uint64_t seed = 0;
  // Perturbs the adjoint of every tape node with this op name by fault_scale.
  std::string fault_op;
  Real fault_scale = 1.5;
};

// The invariant and gradient-check suite, grouped by module.
std::vector<CheckResult> run_checks(const CheckOptions& opts = {});
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace cohft
