#pragma once

#include <string>

#include "cohft/params.hpp"

namespace cohft {

// Geometry of one basic attention instance.
struct AttentionConfig {
  std::size_t d = 32;     // embedding channels
  std::size_t heads = 4;  // M
  std::size_t patch = 1;  // p, tokenization patch side
  std::size_t ratio = 1;  // rho = h2/h1 = w2/w1
  bool inter_head = true; // mix values across heads after intra-head attention

  std::size_t token_width() const { return d * patch * patch; }
  std::size_t head_width() const { return token_width() / heads; }
  // Throws ConfigError unless d*p^2 is divisible by the head count.
  void validate() const;
};

struct AttentionWeights {
  NormParams input_norm, reference_norm;        // LN applied to each raw map
  ConvParams input_embed, reference_embed;      // 1x1 and rho x rho (stride rho)
  NormParams input_embed_norm, reference_embed_norm;
  LinearParams query, key, value;               // M head groups stored side by side
  ConvParams out_conv;                          // 3x3 on the folded map, zero at safe start
};

AttentionWeights attention_weights(ParamSource& src, const std::string& prefix, const AttentionConfig& cfg);

enum class Stream { Input, Reference };

// LN -> conv (1x1 for the input stream, rho x rho / stride rho for the
// reference) -> LN -> GELU -> unfold(p). Works on [h,w,d] or [b,h,w,d].
Var tokenize(Var x, const AttentionWeights& w, const AttentionConfig& cfg, Stream which);

// s = softmax_j(q_i . k_j / sqrt(d')), over [..., N, d'] inputs.
Var intra_head_correlation(Var q, Var k);

// v_hat = s v.
Var renew_values(Var s, Var v);

// Heads stacked per token: v_hat is [T, M, d']. Returns A[T, M, M] with
// A[t,i,:] = softmax_j(v_hat[t,i] . v_hat[t,j]) (unscaled logits).
Var inter_head_correlation(Var vhat);

// u[t,m] = sum_j (1 + A[t,m,j]) v_hat[t,j].
Var mix_heads(Var vhat, Var A);

// x1 + conv3x3(fold(heads)), attending from x1 tokens to x2 tokens. x2 may
// be x1. Inputs are [h,w,d] maps or window batches [b,h,w,d].
Var basic_attention(Var x1, Var x2, const AttentionWeights& w, const AttentionConfig& cfg);

}  // namespace cohft
