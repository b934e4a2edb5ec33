#include "cohft/window.hpp"

#include <memory>

#include "cohft/ops.hpp"

namespace cohft {

const char* to_string(WindowMode mode) { return mode == WindowMode::Short ? "short" : "long"; }

WindowPlan make_window_plan(std::size_t h, std::size_t w, std::size_t g, WindowMode mode) {
  if (g == 0 || h % g != 0 || w % g != 0) {
    throw ShapeError(std::string("window partition (") + to_string(mode) + "): h=" + std::to_string(h) +
                     ", w=" + std::to_string(w) + " not divisible by g=" + std::to_string(g));
  }
  WindowPlan plan{h, w, g, mode, {}};
  plan.pixel.reserve(h * w);
  const std::size_t rows = h / g, cols = w / g;  // window grid, and the long-mode stride
  for (std::size_t wy = 0; wy < rows; ++wy)
    for (std::size_t wx = 0; wx < cols; ++wx)
      for (std::size_t sy = 0; sy < g; ++sy)
        for (std::size_t sx = 0; sx < g; ++sx) {
          std::size_t y, x;
          if (mode == WindowMode::Short) {
            y = wy * g + sy;
            x = wx * g + sx;
          } else {
            y = wy + sy * rows;
            x = wx + sx * cols;
          }
          plan.pixel.push_back(static_cast<std::uint32_t>(y * w + x));
        }
  return plan;
}

namespace {

void check_map(const Shape& s, const WindowPlan& plan) {
  if (s.size() != 3 || s[0] != plan.h || s[1] != plan.w) {
    throw ShapeError("window partition: map " + to_string(s) + " does not match plan " + std::to_string(plan.h) +
                     "x" + std::to_string(plan.w));
  }
}

void check_windows(const Shape& s, const WindowPlan& plan) {
  if (s.size() != 4 || s[0] != plan.windows() || s[1] != plan.g || s[2] != plan.g) {
    throw ShapeError("window merge: windows " + to_string(s) + " do not match plan (" + std::to_string(plan.windows()) +
                     " windows of " + std::to_string(plan.g) + "x" + std::to_string(plan.g) + ")");
  }
}

std::shared_ptr<std::vector<std::uint32_t>> element_index(const WindowPlan& plan, std::size_t d, bool inverse) {
  auto index = std::make_shared<std::vector<std::uint32_t>>(plan.pixel.size() * d);
  for (std::size_t slot = 0; slot < plan.pixel.size(); ++slot) {
    const std::size_t px = plan.pixel[slot];
    for (std::size_t c = 0; c < d; ++c) {
      if (inverse) {
        (*index)[px * d + c] = static_cast<std::uint32_t>(slot * d + c);
      } else {
        (*index)[slot * d + c] = static_cast<std::uint32_t>(px * d + c);
      }
    }
  }
  return index;
}

Tensor apply_index(const Tensor& x, const std::vector<std::uint32_t>& index, Shape out) {
  Tensor y(std::move(out));
  for (std::size_t i = 0; i < index.size(); ++i) y[i] = x[index[i]];
  return y;
}

}  // namespace

Tensor partition(const Tensor& x, const WindowPlan& plan) {
  check_map(x.shape(), plan);
  const std::size_t d = x.dim(2);
  return apply_index(x, *element_index(plan, d, false), {plan.windows(), plan.g, plan.g, d});
}

Tensor merge(const Tensor& windows, const WindowPlan& plan) {
  check_windows(windows.shape(), plan);
  const std::size_t d = windows.dim(3);
  return apply_index(windows, *element_index(plan, d, true), {plan.h, plan.w, d});
}

Var partition(Var x, const WindowPlan& plan) {
  check_map(x.shape(), plan);
  const std::size_t d = x.dim(2);
  return ops::gather("partition", x, element_index(plan, d, false), {plan.windows(), plan.g, plan.g, d});
}

Var merge(Var windows, const WindowPlan& plan) {
  check_windows(windows.shape(), plan);
  const std::size_t d = windows.dim(3);
  return ops::gather("merge", windows, element_index(plan, d, true), {plan.h, plan.w, d});
}

MlpWeights mlp_weights(ParamSource& src, const std::string& prefix, std::size_t d) {
  MlpWeights w;
  w.input_norm = norm_params(src, prefix + ".ln_in", d);
  w.expand = conv_params(src, prefix + ".fc1", 1, d, 2 * d);
  w.hidden_norm = norm_params(src, prefix + ".ln_hidden", 2 * d);
  w.project = conv_params(src, prefix + ".fc2", 1, 2 * d, d, Init::ZeroAtStart);
  return w;
}

Var residual_mlp(Var x, const MlpWeights& w) {
  Var h = conv_same(w.expand, norm(w.input_norm, x));
  h = ops::gelu(norm(w.hidden_norm, h));
  return ops::add(x, conv_same(w.project, h));
}

Var window_attention(Var x, std::size_t g, WindowMode mode, const AttentionWeights& attn, const MlpWeights& mlp,
                     const AttentionConfig& cfg) {
  if (x.rank() != 3) throw ShapeError("window_attention: expected [h,w,d], got " + to_string(x.shape()));
  if (cfg.ratio != 1) throw ConfigError("window_attention: windows attend to themselves, rho must be 1");
  const WindowPlan plan = make_window_plan(x.dim(0), x.dim(1), g, mode);
  Var windows = partition(x, plan);
  Var attended = basic_attention(windows, windows, attn, cfg);
  return residual_mlp(merge(attended, plan), mlp);
}

}  // namespace cohft
