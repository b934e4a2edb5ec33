#include "cohft/cross_modality.hpp"

#include <cmath>

#include "cohft/ops.hpp"

namespace cohft {

namespace {

struct Planes {
  std::size_t n, d;  // spatial positions, channels
};

Planes planes_of(const Shape& s, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected [h,w,d], got " + to_string(s));
  const std::size_t n = s[0] * s[1];
  if (n < 2) throw ShapeError(std::string(op) + ": needs at least two spatial positions, got " + to_string(s));
  return {n, s[2]};
}

std::vector<Real> means(const Tensor& x, Planes p) {
  std::vector<Real> mu(p.d, 0.0);
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t c = 0; c < p.d; ++c) mu[c] += x[i * p.d + c];
  for (auto& m : mu) m /= static_cast<Real>(p.n);
  return mu;
}

std::vector<Real> stds(const Tensor& x, Planes p, const std::vector<Real>& mu, Real eps) {
  std::vector<Real> var(p.d, 0.0);
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t c = 0; c < p.d; ++c) {
      const Real dv = x[i * p.d + c] - mu[c];
      var[c] += dv * dv;
    }
  for (auto& v : var) v = std::sqrt(v / static_cast<Real>(p.n) + eps);
  return var;
}

}  // namespace

Tensor channel_mean(const Tensor& x) {
  const Planes p = planes_of(x.shape(), "channel_mean");
  return Tensor({p.d}, means(x, p));
}

Tensor channel_std(const Tensor& x, Real eps) {
  const Planes p = planes_of(x.shape(), "channel_std");
  return Tensor({p.d}, stds(x, p, means(x, p), eps));
}

Var channel_mean(Var x) {
  const Planes p = planes_of(x.shape(), "channel_mean");
  return x.tape()->apply(
      "channel_mean", {x}, [](TensorRefs in) { return channel_mean(*in[0]); },
      [p](TensorRefs, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < p.n; ++i)
          for (std::size_t c = 0; c < p.d; ++c) (*grads[0])[i * p.d + c] += g[c] / static_cast<Real>(p.n);
      });
}

Var channel_std(Var x, Real eps) {
  const Planes p = planes_of(x.shape(), "channel_std");
  return x.tape()->apply(
      "channel_std", {x}, [eps](TensorRefs in) { return channel_std(*in[0], eps); },
      [p](TensorRefs in, const Tensor& sigma, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        const auto mu = means(*in[0], p);
        for (std::size_t i = 0; i < p.n; ++i)
          for (std::size_t c = 0; c < p.d; ++c) {
            const std::size_t k = i * p.d + c;
            (*grads[0])[k] += g[c] * ((*in[0])[k] - mu[c]) / (static_cast<Real>(p.n) * sigma[c]);
          }
      });
}

Tensor instance_standardize(const Tensor& x, Real eps) {
  const Planes p = planes_of(x.shape(), "instance_standardize");
  const auto mu = means(x, p);
  const auto sd = stds(x, p, mu, eps);
  Tensor y = x;
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t c = 0; c < p.d; ++c) y[i * p.d + c] = (x[i * p.d + c] - mu[c]) / sd[c];
  return y;
}

Var instance_standardize(Var x, Real eps) {
  const Planes p = planes_of(x.shape(), "instance_standardize");
  return x.tape()->apply(
      "instance_standardize", {x}, [eps](TensorRefs in) { return instance_standardize(*in[0], eps); },
      [p, eps](TensorRefs in, const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        const auto mu = means(*in[0], p);
        const auto sd = stds(*in[0], p, mu, eps);
        std::vector<Real> mean_g(p.d, 0.0), mean_gy(p.d, 0.0);
        for (std::size_t i = 0; i < p.n; ++i)
          for (std::size_t c = 0; c < p.d; ++c) {
            const std::size_t k = i * p.d + c;
            mean_g[c] += g[k];
            mean_gy[c] += g[k] * y[k];
          }
        for (std::size_t c = 0; c < p.d; ++c) {
          mean_g[c] /= static_cast<Real>(p.n);
          mean_gy[c] /= static_cast<Real>(p.n);
        }
        for (std::size_t i = 0; i < p.n; ++i)
          for (std::size_t c = 0; c < p.d; ++c) {
            const std::size_t k = i * p.d + c;
            (*grads[0])[k] += (g[k] - mean_g[c] - y[k] * mean_gy[c]) / sd[c];
          }
      });
}

Var adain_apply(Var x2_std, Var mu1, Var sigma1, Var beta, Var gamma) {
  const Shape& s = x2_std.shape();
  if (s.size() != 3) throw ShapeError("adain_apply: expected [rh,rw,d], got " + to_string(s));
  const std::size_t n = s[0] * s[1], d = s[2];
  const Shape map{s[0], s[1], 1};
  if (mu1.shape() != Shape{d} || sigma1.shape() != Shape{d} || beta.shape() != map || gamma.shape() != map) {
    throw ShapeError("adain_apply: moments must be [" + std::to_string(d) + "] and affine maps " + to_string(map));
  }
  return x2_std.tape()->apply(
      "adain_apply", {x2_std, mu1, sigma1, beta, gamma},
      [n, d](TensorRefs in) {
        const Tensor &xs = *in[0], &mu = *in[1], &sd = *in[2], &b = *in[3], &gm = *in[4];
        Tensor y = xs;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t k = i * d + c;
            y[k] = xs[k] * (sd[c] + gm[i]) + mu[c] + b[i];
          }
        return y;
      },
      [n, d](TensorRefs in, const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor &xs = *in[0], &sd = *in[2], &gm = *in[4];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t k = i * d + c;
            const Real gk = g[k];
            if (grads[0]) (*grads[0])[k] += gk * (sd[c] + gm[i]);
            if (grads[1]) (*grads[1])[c] += gk;
            if (grads[2]) (*grads[2])[c] += gk * xs[k];
            if (grads[3]) (*grads[3])[i] += gk;
            if (grads[4]) (*grads[4])[i] += gk * xs[k];
          }
      });
}

AdainWeights adain_weights(ParamSource& src, const std::string& prefix, std::size_t d, std::size_t r) {
  AdainWeights w;
  w.expand = conv_params(src, prefix + ".expand", 1, d, d * r * r);
  w.fuse = conv_params(src, prefix + ".fuse", 3, 2 * d, d);
  w.beta = conv_params(src, prefix + ".beta", 3, d, 1, Init::ZeroAtStart);
  w.gamma = conv_params(src, prefix + ".gamma", 3, d, 1, Init::ZeroAtStart);
  return w;
}

PointwiseAffine compute_affine(Var x1, Var x2, const AdainWeights& w, std::size_t r) {
  if (x1.rank() != 3 || x2.rank() != 3 || x2.dim(0) != r * x1.dim(0) || x2.dim(1) != r * x1.dim(1) ||
      x2.dim(2) != x1.dim(2)) {
    throw ShapeError("compute_affine: x2 " + to_string(x2.shape()) + " must be r=" + std::to_string(r) +
                     " times the extents of x1 " + to_string(x1.shape()));
  }
  Var lifted = ops::pixel_shuffle(conv_same(w.expand, x1), r);
  Var fused = conv_same(w.fuse, ops::concat({x2, lifted}));
  return {conv_same(w.beta, fused), conv_same(w.gamma, fused)};
}

Var adaptive_instance_norm(Var x1, Var x2, const AdainWeights& w, std::size_t r) {
  PointwiseAffine affine = compute_affine(x1, x2, w, r);
  return adain_apply(instance_standardize(x2), channel_mean(x1), channel_std(x1), affine.beta, affine.gamma);
}

InterModalityWeights inter_modality_weights(ParamSource& src, const std::string& prefix, const AttentionConfig& cfg) {
  InterModalityWeights w;
  w.adain = adain_weights(src, prefix + ".adain", cfg.d, cfg.ratio);
  w.attention = attention_weights(src, prefix + ".attn", cfg);
  w.mlp = mlp_weights(src, prefix + ".mlp", cfg.d);
  return w;
}

Var inter_modality_attention(Var x1, Var x2, const InterModalityWeights& w, const AttentionConfig& cfg,
                             bool use_adain) {
  Var reference = use_adain ? adaptive_instance_norm(x1, x2, w.adain, cfg.ratio) : x2;
  return residual_mlp(basic_attention(x1, reference, w.attention, cfg), w.mlp);
}

}  // namespace cohft
