#include "cohft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cohft::ops {

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw std::invalid_argument("unbound Var passed to a primitive");
  return *v.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <class F, class D>
Var unary(const char* op, Var x, F f, D df) {
  return tape_of(x).apply(
      op, {x},
      [f](TensorRefs in) {
        Tensor y = *in[0];
        for (auto& v : y.data()) v = f(v);
        return y;
      },
      [df](TensorRefs in, const Tensor& out, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        Tensor& gx = *grads[0];
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * df(x[i], out[i]);
      });
}

Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

Real gelu_scalar(Real x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Real gelu_grad_scalar(Real x) {
  const Real cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const Real pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Real sigmoid_scalar(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  return tape_of(a).apply(
      "add", {a, b},
      [](TensorRefs in) {
        Tensor y = *in[0];
        const Tensor& b = *in[1];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
        return y;
      },
      [](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        for (auto* gr : grads) {
          if (!gr) continue;
          for (std::size_t i = 0; i < g.numel(); ++i) (*gr)[i] += g[i];
        }
      });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  return tape_of(a).apply(
      "sub", {a, b},
      [](TensorRefs in) {
        Tensor y = *in[0];
        const Tensor& b = *in[1];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b[i];
        return y;
      },
      [](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (grads[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i];
        if (grads[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[1])[i] -= g[i];
      });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  return tape_of(a).apply(
      "mul", {a, b},
      [](TensorRefs in) {
        Tensor y = *in[0];
        const Tensor& b = *in[1];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b[i];
        return y;
      },
      [](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (grads[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i] * b[i];
        if (grads[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[1])[i] += g[i] * a[i];
      });
}

Var div(Var a, Var b) {
  require_same_shape("div", a.value(), b.value());
  return tape_of(a).apply(
      "div", {a, b},
      [](TensorRefs in) {
        Tensor y = *in[0];
        const Tensor& b = *in[1];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= b[i];
        return y;
      },
      [](TensorRefs in, const Tensor& out, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& b = *in[1];
        if (grads[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i] / b[i];
        if (grads[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*grads[1])[i] -= g[i] * out[i] / b[i];
      });
}

Var add_scalar(Var a, Real c) {
  return unary(
      "add_scalar", a, [c](Real v) { return v + c; }, [](Real, Real) { return 1.0; });
}

Var scale(Var a, Real c) {
  return unary(
      "scale", a, [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}

Var square(Var a) {
  return unary(
      "square", a, [](Real v) { return v * v; }, [](Real v, Real) { return 2.0 * v; });
}

Var sum(Var a) {
  return tape_of(a).apply(
      "sum", {a},
      [](TensorRefs in) {
        Real s = 0;
        for (auto v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        const Real gv = g[0];
        for (auto& v : grads[0]->data()) v += gv;
      });
}

Var mean(Var a) {
  return tape_of(a).apply(
      "mean", {a},
      [](TensorRefs in) {
        Real s = 0;
        for (auto v : in[0]->data()) s += v;
        return Tensor::scalar(s / static_cast<Real>(in[0]->numel()));
      },
      [](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        const Real gv = g[0] / static_cast<Real>(in[0]->numel());
        for (auto& v : grads[0]->data()) v += gv;
      });
}

// ---------------------------------------------------------------------------
// Activations

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = sigmoid_scalar(v);
  return y;
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, sigmoid_scalar, [](Real, Real y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = gelu_scalar(v);
  return y;
}

Var gelu(Var x) {
  return unary("gelu", x, gelu_scalar, [](Real v, Real) { return gelu_grad_scalar(v); });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
  Tensor y = x;
  for (auto& v : y.data()) v = v >= 0 ? v : slope * v;
  return y;
}

Var leaky_relu(Var x, Real slope) {
  return unary(
      "leaky_relu", x, [slope](Real v) { return v >= 0 ? v : slope * v; },
      [slope](Real v, Real) { return v >= 0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.value().numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return tape_of(x).apply(
      "reshape", {x}, [shape](TensorRefs in) { return in[0]->reshaped(shape); },
      [](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i];
      });
}

Var gather(const char* op, Var x, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape) {
  if (index->size() != numel(out_shape)) {
    throw ShapeError(std::string(op) + ": index length does not match output shape " + to_string(out_shape));
  }
  const std::size_t n_in = x.value().numel();
  for (auto i : *index) {
    if (i >= n_in) throw ShapeError(std::string(op) + ": gather index out of range");
  }
  return tape_of(x).apply(
      op, {x},
      [index, out_shape](TensorRefs in) {
        Tensor y(out_shape);
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < index->size(); ++i) y[i] = x[(*index)[i]];
        return y;
      },
      [index](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        Tensor& gx = *grads[0];
        for (std::size_t i = 0; i < index->size(); ++i) gx[(*index)[i]] += g[i];
      });
}

namespace {

using Index = std::vector<std::uint32_t>;

Tensor apply_index(const Tensor& x, const Index& index, Shape out_shape) {
  Tensor y(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) y[i] = x[index[i]];
  return y;
}

std::shared_ptr<Index> permute_index(const Shape& shape, const std::vector<std::size_t>& axes, Shape& out_shape) {
  const std::size_t rank = shape.size();
  if (axes.size() != rank) throw ShapeError("permute: axes rank does not match tensor rank " + to_string(shape));
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * shape[i];
  out_shape.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = shape[axes[i]];
  auto index = std::make_shared<Index>(numel(shape));
  std::vector<std::size_t> pos(rank, 0);
  for (std::size_t o = 0; o < index->size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += pos[i] * in_stride[axes[i]];
    (*index)[o] = static_cast<std::uint32_t>(src);
    for (std::size_t i = rank; i-- > 0;) {
      if (++pos[i] < out_shape[i]) break;
      pos[i] = 0;
    }
  }
  return index;
}

// Splits [.., h, w, c] into (batch, h, w, c); rank 3 maps to batch 1.
struct MapDims {
  std::size_t b, h, w, c;
  bool batched;
};

MapDims map_dims(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected a [h,w,c] or [b,h,w,c] map, got " + to_string(s));
}

Shape map_shape(const MapDims& d, std::size_t h, std::size_t w, std::size_t c) {
  if (d.batched) return {d.b, h, w, c};
  return {h, w, c};
}

std::shared_ptr<Index> unfold_index(const char* op, const Shape& s, std::size_t p, Shape& out_shape) {
  const MapDims d = map_dims(op, s);
  if (p == 0 || d.h % p != 0 || d.w % p != 0) {
    throw ShapeError(std::string(op) + ": extents h=" + std::to_string(d.h) + ", w=" + std::to_string(d.w) +
                     " are not divisible by p=" + std::to_string(p));
  }
  const std::size_t ph = d.h / p, pw = d.w / p, n = ph * pw, width = d.c * p * p;
  out_shape = d.batched ? Shape{d.b, n, width} : Shape{n, width};
  auto index = std::make_shared<Index>(d.b * n * width);
  std::size_t o = 0;
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t ty = 0; ty < ph; ++ty)
      for (std::size_t tx = 0; tx < pw; ++tx)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t c = 0; c < d.c; ++c) {
              const std::size_t y = ty * p + dy, x = tx * p + dx;
              (*index)[o++] = static_cast<std::uint32_t>(((b * d.h + y) * d.w + x) * d.c + c);
            }
  return index;
}

std::shared_ptr<Index> invert(const Index& index) {
  auto inv = std::make_shared<Index>(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) (*inv)[index[i]] = static_cast<std::uint32_t>(i);
  return inv;
}

struct FoldPlan {
  std::shared_ptr<Index> index;
  Shape out_shape;
};

FoldPlan fold_plan(const Shape& s, std::size_t p, std::size_t h, std::size_t w) {
  const bool batched = s.size() == 3;
  if (s.size() != 2 && s.size() != 3) throw ShapeError("fold: expected tokens [N, d*p^2], got " + to_string(s));
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("fold: h=" + std::to_string(h) + ", w=" + std::to_string(w) + " not divisible by p=" +
                     std::to_string(p));
  }
  const std::size_t b = batched ? s[0] : 1;
  const std::size_t n = s[s.size() - 2], width = s.back();
  if (n != (h / p) * (w / p) || width % (p * p) != 0) {
    throw ShapeError("fold: token block " + to_string(s) + " inconsistent with h=" + std::to_string(h) +
                     ", w=" + std::to_string(w) + ", p=" + std::to_string(p));
  }
  const std::size_t c = width / (p * p);
  Shape map = batched ? Shape{b, h, w, c} : Shape{h, w, c};
  Shape tokens_shape;
  auto forward = unfold_index("fold", map, p, tokens_shape);
  return {invert(*forward), map};
}

std::shared_ptr<Index> shuffle_index(const Shape& s, std::size_t r, Shape& out_shape) {
  const MapDims d = map_dims("pixel_shuffle", s);
  if (r == 0 || d.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(d.c) + " not divisible by r^2=" +
                     std::to_string(r * r));
  }
  const std::size_t c_out = d.c / (r * r), oh = d.h * r, ow = d.w * r;
  out_shape = map_shape(d, oh, ow, c_out);
  auto index = std::make_shared<Index>(d.b * oh * ow * c_out);
  std::size_t o = 0;
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t c = 0; c < c_out; ++c) {
          const std::size_t sy = y / r, dy = y % r, sx = x / r, dx = x % r;
          const std::size_t sc = c * r * r + dy * r + dx;
          (*index)[o++] = static_cast<std::uint32_t>(((b * d.h + sy) * d.w + sx) * d.c + sc);
        }
  return index;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  Shape out;
  auto index = permute_index(x.shape(), axes, out);
  return apply_index(x, *index, out);
}

Var permute(Var x, const std::vector<std::size_t>& axes) {
  Shape out;
  auto index = permute_index(x.shape(), axes, out);
  return gather("permute", x, index, out);
}

Tensor unfold(const Tensor& x, std::size_t p) {
  Shape out;
  auto index = unfold_index("unfold", x.shape(), p, out);
  return apply_index(x, *index, out);
}

Var unfold(Var x, std::size_t p) {
  Shape out;
  auto index = unfold_index("unfold", x.shape(), p, out);
  return gather("unfold", x, index, out);
}

Tensor fold(const Tensor& tokens, std::size_t p, std::size_t h, std::size_t w) {
  auto plan = fold_plan(tokens.shape(), p, h, w);
  return apply_index(tokens, *plan.index, plan.out_shape);
}

Var fold(Var tokens, std::size_t p, std::size_t h, std::size_t w) {
  auto plan = fold_plan(tokens.shape(), p, h, w);
  return gather("fold", tokens, plan.index, plan.out_shape);
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  Shape out;
  auto index = shuffle_index(x.shape(), r, out);
  return apply_index(x, *index, out);
}

Var pixel_shuffle(Var x, std::size_t r) {
  Shape out;
  auto index = shuffle_index(x.shape(), r, out);
  return gather("pixel_shuffle", x, index, out);
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  const MapDims d = map_dims("pixel_unshuffle", x.shape());
  if (r == 0 || d.h % r != 0 || d.w % r != 0) {
    throw ShapeError("pixel_unshuffle: extents " + to_string(x.shape()) + " not divisible by r=" + std::to_string(r));
  }
  const Shape in_shape = map_shape(d, d.h / r, d.w / r, d.c * r * r);
  Shape out;
  auto index = shuffle_index(in_shape, r, out);
  return apply_index(x, *invert(*index), in_shape);
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape lead = xs[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& v : xs) {
    Shape s = v.shape();
    const std::size_t last = s.back();
    s.pop_back();
    if (s != lead) throw ShapeError("concat: leading shapes differ, " + to_string(xs[0].shape()) + " vs " + to_string(v.shape()));
    widths.push_back(last);
    total += last;
  }
  Shape out_shape = with_last(xs[0].shape(), total);
  const std::size_t rows = numel(lead);
  return tape_of(xs[0]).apply(
      "concat", xs,
      [widths, total, rows, out_shape](TensorRefs in) {
        Tensor y(out_shape);
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t wk = widths[k];
          for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(in[k]->raw() + r * wk, wk, y.raw() + r * total + off);
          off += wk;
        }
        return y;
      },
      [widths, total, rows](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < grads.size(); ++k) {
          const std::size_t wk = widths[k];
          if (grads[k]) {
            Real* dst = grads[k]->raw();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < wk; ++j) dst[r * wk + j] += g[r * total + off + j];
          }
          off += wk;
        }
      });
}

Var slice_last(Var x, std::size_t begin, std::size_t end) {
  const std::size_t width = x.shape().back();
  if (begin >= end || end > width) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for width " + std::to_string(width));
  }
  const std::size_t rows = x.value().numel() / width, n = end - begin;
  Shape out_shape = with_last(x.shape(), n);
  return tape_of(x).apply(
      "slice_last", {x},
      [=](TensorRefs in) {
        Tensor y(out_shape);
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(in[0]->raw() + r * width + begin, n, y.raw() + r * n);
        return y;
      },
      [=](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        Real* dst = grads[0]->raw();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) dst[r * width + begin + j] += g[r * n + j];
      });
}

Var mul_channel_map(Var x, Var map) {
  Shape lead = x.shape();
  const std::size_t d = lead.back();
  lead.pop_back();
  Shape mlead = map.shape();
  if (mlead.back() != 1) throw ShapeError("mul_channel_map: map must have one channel, got " + to_string(map.shape()));
  mlead.pop_back();
  if (lead != mlead) {
    throw ShapeError("mul_channel_map: spatial mismatch " + to_string(x.shape()) + " vs " + to_string(map.shape()));
  }
  const std::size_t rows = numel(lead);
  return tape_of(x).apply(
      "mul_channel_map", {x, map},
      [rows, d](TensorRefs in) {
        Tensor y = *in[0];
        const Tensor& m = *in[1];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) y[r * d + c] *= m[r];
        return y;
      },
      [rows, d](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& x = *in[0];
        const Tensor& m = *in[1];
        for (std::size_t r = 0; r < rows; ++r) {
          Real acc = 0;
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            if (grads[0]) (*grads[0])[i] += g[i] * m[r];
            acc += g[i] * x[i];
          }
          if (grads[1]) (*grads[1])[r] += acc;
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution and linear maps

namespace {

struct ConvGeom {
  MapDims in;
  std::size_t k, cout, stride, pad, oh, ow;
  Shape out_shape;
};

ConvGeom conv_geom(const Shape& xs, const Shape& ws, const Shape& bs, std::size_t stride, std::size_t pad) {
  ConvGeom g{map_dims("conv2d", xs), 0, 0, stride, pad, 0, 0, {}};
  if (ws.size() != 4 || ws[0] != ws[1]) {
    throw ShapeError("conv2d: weights must be [k,k,cin,cout], got " + to_string(ws));
  }
  g.k = ws[0];
  g.cout = ws[3];
  if (ws[2] != g.in.c) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in.c) + " channels but weights " + to_string(ws) +
                     " expect " + std::to_string(ws[2]));
  }
  if (bs != Shape{g.cout}) throw ShapeError("conv2d: bias " + to_string(bs) + " does not match cout=" + std::to_string(g.cout));
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (g.k % 2 == 0 && stride != g.k) {
    throw ShapeError("conv2d: even kernel " + std::to_string(g.k) + " requires stride == kernel");
  }
  const std::size_t ph = g.in.h + 2 * pad, pw = g.in.w + 2 * pad;
  if (ph < g.k || pw < g.k || (ph - g.k) % stride != 0 || (pw - g.k) % stride != 0) {
    throw ShapeError("conv2d: input " + to_string(xs) + " with pad " + std::to_string(pad) + " incompatible with kernel " +
                     std::to_string(g.k) + " and stride " + std::to_string(stride));
  }
  g.oh = (ph - g.k) / stride + 1;
  g.ow = (pw - g.k) / stride + 1;
  g.out_shape = map_shape(g.in, g.oh, g.ow, g.cout);
  return g;
}

Tensor conv_forward(const ConvGeom& g, const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y(g.out_shape);
  const auto& d = g.in;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        Real* o = y.raw() + ((b * g.oh + oy) * g.ow + ox) * g.cout;
        std::copy_n(bias.raw(), g.cout, o);
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            const Real* xi = x.raw() + ((b * d.h + iy) * d.w + ix) * d.c;
            const Real* wk = w.raw() + (ky * g.k + kx) * d.c * g.cout;
            for (std::size_t ci = 0; ci < d.c; ++ci) {
              const Real v = xi[ci];
              const Real* wr = wk + ci * g.cout;
              for (std::size_t co = 0; co < g.cout; ++co) o[co] += v * wr[co];
            }
          }
        }
      }
  return y;
}

void conv_backward(const ConvGeom& g, const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx, Tensor* gw,
                   Tensor* gb) {
  const auto& d = g.in;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const Real* go = gy.raw() + ((b * g.oh + oy) * g.ow + ox) * g.cout;
        if (gb)
          for (std::size_t co = 0; co < g.cout; ++co) (*gb)[co] += go[co];
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            const std::size_t xoff = ((b * d.h + iy) * d.w + ix) * d.c;
            const std::size_t woff = (ky * g.k + kx) * d.c * g.cout;
            const Real* xi = x.raw() + xoff;
            const Real* wk = w.raw() + woff;
            for (std::size_t ci = 0; ci < d.c; ++ci) {
              const Real* wr = wk + ci * g.cout;
              if (gx) {
                Real acc = 0;
                for (std::size_t co = 0; co < g.cout; ++co) acc += go[co] * wr[co];
                (*gx)[xoff + ci] += acc;
              }
              if (gw) {
                Real* gwr = gw->raw() + woff + ci * g.cout;
                const Real v = xi[ci];
                for (std::size_t co = 0; co < g.cout; ++co) gwr[co] += v * go[co];
              }
            }
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t stride, std::size_t pad) {
  return conv_forward(conv_geom(x.shape(), weights.shape(), bias.shape(), stride, pad), x, weights, bias);
}

Var conv2d(Var x, Var weights, Var bias, std::size_t stride, std::size_t pad) {
  const ConvGeom geom = conv_geom(x.shape(), weights.shape(), bias.shape(), stride, pad);
  return tape_of(x).apply(
      "conv2d", {x, weights, bias},
      [geom](TensorRefs in) { return conv_forward(geom, *in[0], *in[1], *in[2]); },
      [geom](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        conv_backward(geom, *in[0], *in[1], g, grads[0], grads[1], grads[2]);
      });
}

Var linear(Var x, Var weights, Var bias) {
  const Shape& ws = weights.shape();
  const std::size_t din = x.shape().back();
  if (ws.size() != 2 || ws[0] != din || bias.shape() != Shape{ws[1]}) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weights " + to_string(ws) +
                     " and bias " + to_string(bias.shape()));
  }
  const std::size_t dout = ws[1], rows = x.value().numel() / din;
  Shape out_shape = with_last(x.shape(), dout);
  return tape_of(x).apply(
      "linear", {x, weights, bias},
      [=](TensorRefs in) {
        Tensor y(out_shape);
        const Real* w = in[1]->raw();
        for (std::size_t r = 0; r < rows; ++r) {
          Real* o = y.raw() + r * dout;
          std::copy_n(in[2]->raw(), dout, o);
          const Real* xr = in[0]->raw() + r * din;
          for (std::size_t i = 0; i < din; ++i) {
            const Real v = xr[i];
            const Real* wr = w + i * dout;
            for (std::size_t j = 0; j < dout; ++j) o[j] += v * wr[j];
          }
        }
        return y;
      },
      [=](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Real* w = in[1]->raw();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* go = g.raw() + r * dout;
          const Real* xr = in[0]->raw() + r * din;
          if (grads[2])
            for (std::size_t j = 0; j < dout; ++j) (*grads[2])[j] += go[j];
          for (std::size_t i = 0; i < din; ++i) {
            const Real* wr = w + i * dout;
            if (grads[0]) {
              Real acc = 0;
              for (std::size_t j = 0; j < dout; ++j) acc += go[j] * wr[j];
              (*grads[0])[r * din + i] += acc;
            }
            if (grads[1]) {
              Real* gwr = grads[1]->raw() + i * dout;
              for (std::size_t j = 0; j < dout; ++j) gwr[j] += xr[i] * go[j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, Real eps) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/shift must be [" + std::to_string(d) + "], got " + to_string(gain.shape()) +
                     " and " + to_string(shift.shape()));
  }
  Tensor y = x;
  const std::size_t rows = x.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    Real* v = y.raw() + r * d;
    Real mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += v[i];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (v[i] - mu) * (v[i] - mu);
    var /= static_cast<Real>(d);
    const Real inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) v[i] = (v[i] - mu) * inv * gain[i] + shift[i];
  }
  return y;
}

Var layer_norm(Var x, Var gain, Var shift, Real eps) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/shift must be [" + std::to_string(d) + "], got " + to_string(gain.shape()) +
                     " and " + to_string(shift.shape()));
  }
  const std::size_t rows = x.value().numel() / d;
  return tape_of(x).apply(
      "layer_norm", {x, gain, shift}, [eps](TensorRefs in) { return layer_norm(*in[0], *in[1], *in[2], eps); },
      [d, rows, eps](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& x = *in[0];
        const Tensor& gain = *in[1];
        std::vector<Real> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* v = x.raw() + r * d;
          const Real* go = g.raw() + r * d;
          Real mu = 0;
          for (std::size_t i = 0; i < d; ++i) mu += v[i];
          mu /= static_cast<Real>(d);
          Real var = 0;
          for (std::size_t i = 0; i < d; ++i) var += (v[i] - mu) * (v[i] - mu);
          var /= static_cast<Real>(d);
          const Real inv = 1.0 / std::sqrt(var + eps);
          Real mean_dx = 0, mean_dxx = 0;
          for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (v[i] - mu) * inv;
            dxhat[i] = go[i] * gain[i];
            mean_dx += dxhat[i];
            mean_dxx += dxhat[i] * xhat[i];
          }
          mean_dx /= static_cast<Real>(d);
          mean_dxx /= static_cast<Real>(d);
          for (std::size_t i = 0; i < d; ++i) {
            if (grads[0]) (*grads[0])[r * d + i] += inv * (dxhat[i] - mean_dx - xhat[i] * mean_dxx);
            if (grads[1]) (*grads[1])[i] += go[i] * xhat[i];
            if (grads[2]) (*grads[2])[i] += go[i];
          }
        }
      });
}

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  const int rank = static_cast<int>(s.size());
  const int a = axis < 0 ? rank + axis : axis;
  if (a < 0 || a >= rank) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit sp{1, s[a], 1};
  for (int i = 0; i < a; ++i) sp.outer *= s[i];
  for (int i = a + 1; i < rank; ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor y = x;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      Real* base = y.raw() + o * sp.len * sp.inner + in;
      Real m = base[0];
      for (std::size_t k = 1; k < sp.len; ++k) m = std::max(m, base[k * sp.inner]);
      Real s = 0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        base[k * sp.inner] = std::exp(base[k * sp.inner] - m);
        s += base[k * sp.inner];
      }
      for (std::size_t k = 0; k < sp.len; ++k) base[k * sp.inner] /= s;
    }
  return y;
}

Var softmax(Var x, int axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  return tape_of(x).apply(
      "softmax", {x}, [axis](TensorRefs in) { return softmax(*in[0], axis); },
      [sp](TensorRefs, const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            Real dot = 0;
            for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
            for (std::size_t k = 0; k < sp.len; ++k) {
              const std::size_t i = base + k * sp.inner;
              (*grads[0])[i] += y[i] * (g[i] - dot);
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Batched matmul

namespace {

struct MatGeom {
  std::size_t batch, n, k, m;
  Shape out_shape;
};

MatGeom mat_geom(const Shape& a, const Shape& b, bool transpose_b) {
  if (a.size() < 2 || a.size() != b.size()) {
    throw ShapeError("matmul: incompatible ranks " + to_string(a) + " vs " + to_string(b));
  }
  const std::size_t r = a.size();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a[i] != b[i]) throw ShapeError("matmul: batch extents differ " + to_string(a) + " vs " + to_string(b));
  }
  MatGeom g{numel(Shape(a.begin(), a.end() - 2)), a[r - 2], a[r - 1], transpose_b ? b[r - 2] : b[r - 1], a};
  const std::size_t bk = transpose_b ? b[r - 1] : b[r - 2];
  if (bk != g.k) throw ShapeError("matmul: inner extents differ " + to_string(a) + " vs " + to_string(b));
  g.out_shape.back() = g.m;
  return g;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const MatGeom g = mat_geom(a.shape(), b.shape(), transpose_b);
  Tensor y(g.out_shape);
  for (std::size_t bt = 0; bt < g.batch; ++bt) {
    const Real* A = a.raw() + bt * g.n * g.k;
    const Real* B = b.raw() + bt * g.k * g.m;
    Real* Y = y.raw() + bt * g.n * g.m;
    for (std::size_t i = 0; i < g.n; ++i) {
      Real* yr = Y + i * g.m;
      if (transpose_b) {
        for (std::size_t j = 0; j < g.m; ++j) {
          Real acc = 0;
          for (std::size_t p = 0; p < g.k; ++p) acc += A[i * g.k + p] * B[j * g.k + p];
          yr[j] = acc;
        }
      } else {
        for (std::size_t p = 0; p < g.k; ++p) {
          const Real av = A[i * g.k + p];
          const Real* br = B + p * g.m;
          for (std::size_t j = 0; j < g.m; ++j) yr[j] += av * br[j];
        }
      }
    }
  }
  return y;
}

Var matmul(Var a, Var b, bool transpose_b) {
  const MatGeom g = mat_geom(a.shape(), b.shape(), transpose_b);
  return tape_of(a).apply(
      "matmul", {a, b}, [transpose_b](TensorRefs in) { return matmul(*in[0], *in[1], transpose_b); },
      [g, transpose_b](TensorRefs in, const Tensor&, const Tensor& gy, std::span<Tensor* const> grads) {
        for (std::size_t bt = 0; bt < g.batch; ++bt) {
          const Real* A = in[0]->raw() + bt * g.n * g.k;
          const Real* B = in[1]->raw() + bt * g.k * g.m;
          const Real* G = gy.raw() + bt * g.n * g.m;
          Real* GA = grads[0] ? grads[0]->raw() + bt * g.n * g.k : nullptr;
          Real* GB = grads[1] ? grads[1]->raw() + bt * g.k * g.m : nullptr;
          for (std::size_t i = 0; i < g.n; ++i) {
            const Real* gr = G + i * g.m;
            for (std::size_t j = 0; j < g.m; ++j) {
              const Real gv = gr[j];
              if (transpose_b) {
                // y[i,j] = sum_p A[i,p] B[j,p]
                for (std::size_t p = 0; p < g.k; ++p) {
                  if (GA) GA[i * g.k + p] += gv * B[j * g.k + p];
                  if (GB) GB[j * g.k + p] += gv * A[i * g.k + p];
                }
              } else {
                // y[i,j] = sum_p A[i,p] B[p,j]
                for (std::size_t p = 0; p < g.k; ++p) {
                  if (GA) GA[i * g.k + p] += gv * B[p * g.m + j];
                  if (GB) GB[p * g.m + j] += gv * A[i * g.k + p];
                }
              }
            }
          }
        }
      });
}

}  // namespace cohft::ops
