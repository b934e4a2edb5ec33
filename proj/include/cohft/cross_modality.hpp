#pragma once

#include <string>

#include "cohft/attention.hpp"
#include "cohft/window.hpp"

namespace cohft {

inline constexpr Real kInstanceNormEps = 1e-5;

// Per-channel spatial mean and sqrt(population variance + eps) of [h,w,d].
Tensor channel_mean(const Tensor& x);
Tensor channel_std(const Tensor& x, Real eps = kInstanceNormEps);
Var channel_mean(Var x);
Var channel_std(Var x, Real eps = kInstanceNormEps);

// (x - mu[c]) / sigma[c] per channel.
Tensor instance_standardize(const Tensor& x, Real eps = kInstanceNormEps);
Var instance_standardize(Var x, Real eps = kInstanceNormEps);

// O[y,x,j] = xs[y,x,j] * (sigma1[j] + gamma[y,x]) + mu1[j] + beta[y,x]
Var adain_apply(Var x2_std, Var mu1, Var sigma1, Var beta, Var gamma);

struct AdainWeights {
  ConvParams expand;       // 1x1, d -> d*r^2 ahead of the pixel shuffle
  ConvParams fuse;         // 3x3, concat(x2, x1 upsampled) -> d
  ConvParams beta, gamma;  // 3x3, d -> 1, zero at safe start
};

AdainWeights adain_weights(ParamSource& src, const std::string& prefix, std::size_t d, std::size_t r);

struct PointwiseAffine {
  Var beta, gamma;  // [rh, rw, 1]
};

PointwiseAffine compute_affine(Var x1, Var x2, const AdainWeights& w, std::size_t r);

// Re-dresses the standardized x2 [rh,rw,d] with x1's channel moments plus the point-wise affine maps.
Var adaptive_instance_norm(Var x1, Var x2, const AdainWeights& w, std::size_t r);

struct InterModalityWeights {
  AdainWeights adain;
  AttentionWeights attention;
  MlpWeights mlp;
};

// cfg.ratio is the upsampling ratio r, cfg.patch the inter-modality patch size.
InterModalityWeights inter_modality_weights(ParamSource& src, const std::string& prefix, const AttentionConfig& cfg);

// Queries from x1 [h,w,d]; keys and values from the aligned reference x2 [rh,rw,d].
Var inter_modality_attention(Var x1, Var x2, const InterModalityWeights& w, const AttentionConfig& cfg,
                             bool use_adain = true);

}  // namespace cohft
