#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cohft/attention.hpp"

namespace cohft {

enum class WindowMode { Short, Long };

const char* to_string(WindowMode mode);

// Bijection between (window, slot) and grid pixels. Short windows are
// contiguous g x g blocks; long windows are dilated, with neighbouring members
// h/g apart vertically and w/g apart horizontally.
struct WindowPlan {
  std::size_t h = 0, w = 0, g = 0;
  WindowMode mode = WindowMode::Short;
  // pixel[window * g*g + slot_y * g + slot_x] = y * w + x
  std::vector<std::uint32_t> pixel;

  std::size_t windows() const { return (h / g) * (w / g); }
};

WindowPlan make_window_plan(std::size_t h, std::size_t w, std::size_t g, WindowMode mode);

Tensor partition(const Tensor& x, const WindowPlan& plan);
Tensor merge(const Tensor& windows, const WindowPlan& plan);
// [h,w,d] -> [windows, g, g, d]
Var partition(Var x, const WindowPlan& plan);
// [windows, g, g, d] -> [h,w,d]
Var merge(Var windows, const WindowPlan& plan);

// LN -> Conv1x1 (d -> 2d) -> LN -> GELU -> Conv1x1 (2d -> d), added to the input.
struct MlpWeights {
  NormParams input_norm;
  ConvParams expand;
  NormParams hidden_norm;
  ConvParams project;  // zero at safe start
};

MlpWeights mlp_weights(ParamSource& src, const std::string& prefix, std::size_t d);
Var residual_mlp(Var x, const MlpWeights& w);

// Self attention inside every window (shared weights, rho = 1), merge, then the residual MLP.
Var window_attention(Var x, std::size_t g, WindowMode mode, const AttentionWeights& attn, const MlpWeights& mlp,
                     const AttentionConfig& cfg);

}  // namespace cohft
