#include "cohft/attention.hpp"

#include <cmath>

#include "cohft/ops.hpp"

namespace cohft {

void AttentionConfig::validate() const {
  if (d == 0 || heads == 0 || patch == 0 || ratio == 0) {
    throw ConfigError("attention: d, heads, patch and ratio must all be >= 1");
  }
  if (token_width() % heads != 0) {
    throw ConfigError("attention: d*p^2 = " + std::to_string(token_width()) + " is not divisible by M = " +
                      std::to_string(heads));
  }
}

AttentionWeights attention_weights(ParamSource& src, const std::string& prefix, const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d, width = cfg.token_width();
  AttentionWeights w;
  w.input_norm = norm_params(src, prefix + ".ln_x1", d);
  w.reference_norm = norm_params(src, prefix + ".ln_x2", d);
  w.input_embed = conv_params(src, prefix + ".embed_x1", 1, d, d);
  w.reference_embed = conv_params(src, prefix + ".embed_x2", cfg.ratio, d, d);
  w.input_embed_norm = norm_params(src, prefix + ".ln_embed_x1", d);
  w.reference_embed_norm = norm_params(src, prefix + ".ln_embed_x2", d);
  w.query = linear_params(src, prefix + ".query", width, width);
  w.key = linear_params(src, prefix + ".key", width, width);
  w.value = linear_params(src, prefix + ".value", width, width);
  w.out_conv = conv_params(src, prefix + ".out_conv", 3, d, d, Init::ZeroAtStart);
  return w;
}

namespace {

struct MapGeom {
  std::size_t h, w, d;
  bool batched;
};

MapGeom geom_of(Var x) {
  const Shape& s = x.shape();
  if (s.size() == 3) return {s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[1], s[2], s[3], true};
  throw ShapeError("attention: expected a [h,w,d] or [b,h,w,d] map, got " + to_string(s));
}

void require_divisible(const char* what, std::size_t extent, std::size_t by, const char* by_name) {
  if (extent % by != 0) {
    throw ShapeError(std::string("attention: ") + what + "=" + std::to_string(extent) + " is not divisible by " +
                     by_name + "=" + std::to_string(by));
  }
}

}  // namespace

Var tokenize(Var x, const AttentionWeights& w, const AttentionConfig& cfg, Stream which) {
  const MapGeom g = geom_of(x);
  if (g.d != cfg.d) {
    throw ShapeError("attention: map has " + std::to_string(g.d) + " channels, config expects d=" + std::to_string(cfg.d));
  }
  const bool ref = which == Stream::Reference;
  std::size_t h = g.h, wd = g.w;
  if (ref) {
    require_divisible("h2", h, cfg.ratio, "rho");
    require_divisible("w2", wd, cfg.ratio, "rho");
    h /= cfg.ratio;
    wd /= cfg.ratio;
  }
  require_divisible(ref ? "h2/rho" : "h1", h, cfg.patch, "p");
  require_divisible(ref ? "w2/rho" : "w1", wd, cfg.patch, "p");

  Var t = norm(ref ? w.reference_norm : w.input_norm, x);
  if (ref) {
    t = ops::conv2d(t, w.reference_embed.weights, w.reference_embed.bias, cfg.ratio, 0);
  } else {
    t = ops::conv2d(t, w.input_embed.weights, w.input_embed.bias, 1, 0);
  }
  t = ops::gelu(norm(ref ? w.reference_embed_norm : w.input_embed_norm, t));
  return ops::unfold(t, cfg.patch);
}

Var intra_head_correlation(Var q, Var k) {
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(q.shape().back()));
  return ops::softmax(ops::scale(ops::matmul(q, k, /*transpose_b=*/true), scale), -1);
}

Var renew_values(Var s, Var v) { return ops::matmul(s, v); }

Var inter_head_correlation(Var vhat) { return ops::softmax(ops::matmul(vhat, vhat, /*transpose_b=*/true), -1); }

Var mix_heads(Var vhat, Var A) { return ops::matmul(ops::add_scalar(A, 1.0), vhat); }

Var basic_attention(Var x1, Var x2, const AttentionWeights& w, const AttentionConfig& cfg) {
  cfg.validate();
  const MapGeom g1 = geom_of(x1);
  const MapGeom g2 = geom_of(x2);
  if (g1.batched != g2.batched || (g1.batched && x1.dim(0) != x2.dim(0))) {
    throw ShapeError("attention: x1 " + to_string(x1.shape()) + " and x2 " + to_string(x2.shape()) +
                     " have different batch layouts");
  }
  if (g2.h != g1.h * cfg.ratio || g2.w != g1.w * cfg.ratio) {
    throw ShapeError("attention: x2 extents " + to_string(x2.shape()) + " are not rho=" + std::to_string(cfg.ratio) +
                     " times x1 extents " + to_string(x1.shape()));
  }
  const std::size_t batch = g1.batched ? x1.dim(0) : 1;
  const std::size_t heads = cfg.heads, hw = cfg.head_width();

  Var t1 = tokenize(x1, w, cfg, Stream::Input);
  Var t2 = tokenize(x2, w, cfg, Stream::Reference);
  const std::size_t n = t1.shape()[t1.rank() - 2];

  // [b, N, M*d'] -> [b, M, N, d']
  auto split_heads = [&](Var t) {
    return ops::permute(ops::reshape(t, {batch, n, heads, hw}), {0, 2, 1, 3});
  };
  Var q = split_heads(affine(w.query, t1));
  Var k = split_heads(affine(w.key, t2));
  Var v = split_heads(affine(w.value, t2));

  Var s = intra_head_correlation(q, k);
  Var vhat = renew_values(s, v);

  // [b, M, N, d'] -> [b*N, M, d']
  Var stacked = ops::reshape(ops::permute(vhat, {0, 2, 1, 3}), {batch * n, heads, hw});
  Var u = stacked;
  if (cfg.inter_head) u = mix_heads(stacked, inter_head_correlation(stacked));

  Shape token_shape = g1.batched ? Shape{batch, n, heads * hw} : Shape{n, heads * hw};
  Var folded = ops::fold(ops::reshape(u, token_shape), cfg.patch, g1.h, g1.w);
  return ops::add(x1, conv_same(w.out_conv, folded));
}

}  // namespace cohft
