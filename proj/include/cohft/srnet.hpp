#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cohft/cross_modality.hpp"
#include "cohft/params.hpp"
#include "cohft/window.hpp"

namespace cohft {

// Module switches; turning one off replaces that stage with the identity.
struct Switches {
  bool use_short_wa = true;
  bool use_long_wa = true;
  bool use_inter_attn = true;
  bool use_inter_head = true;
  bool use_adain = true;
  bool use_prior_fusion = true;  // off: F_i = E_i, the CNN-only main stream

  // Every attention module off; the prior stream reduces to its convolutions.
  static Switches attention_off() { return {false, false, false, false, false, true}; }
};

struct ModelConfig {
  std::string variant = "L";
  std::size_t d = 32;
  std::size_t stages = 4;
  std::size_t rrdbs_per_stage = 5;
  std::size_t rdbs_per_rrdb = 3;
  std::size_t convs_per_rdb = 5;
  std::size_t g = 6;
  std::size_t p_intra = 1;
  std::size_t p_inter = 5;
  std::size_t heads = 4;
  std::size_t r = 2;
  Switches switches;

  std::size_t growth() const { return d / 2 > 0 ? d / 2 : 1; }

  AttentionConfig window_attention() const { return {d, heads, p_intra, 1, switches.use_inter_head}; }
  AttentionConfig inter_attention() const { return {d, heads, p_inter, r, switches.use_inter_head}; }

  // Presets: "tiny", "S", "M", "L".
  static ModelConfig preset(const std::string& name, std::size_t r = 2);

  // Throws ConfigError on inconsistent hyperparameters.
  void validate() const;
  // Throws ConfigError when a low-resolution h x w input violates any divisibility requirement.
  void preflight(std::size_t h, std::size_t w) const;

  // key=value form used for checkpoint config echoes.
  std::map<std::string, std::string> to_map() const;
  // Returns false when `key` is not a model key.
  bool set(const std::string& key, const std::string& value);
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

struct RdbWeights {
  std::vector<ConvParams> convs;
};

struct RrdbWeights {
  std::vector<RdbWeights> rdbs;
};

RrdbWeights rrdb_weights(ParamSource& src, const std::string& prefix, std::size_t d, std::size_t growth,
                         std::size_t rdbs, std::size_t convs);

// Residual-in-residual dense block; dense convs use LeakyReLU(0.2), both residual levels scale by 0.2.
Var rrdb(Var x, const RrdbWeights& w);

struct CohfBlockWeights {
  AttentionWeights short_attn, long_attn;
  MlpWeights short_mlp, long_mlp;
  InterModalityWeights inter;
};

struct StageWeights {
  std::vector<RrdbWeights> rrdbs;
  ConvParams extract;  // E_i -> structural features
  ConvParams combine;  // concat(P_{i-1}, structural) -> F_s^i
  ConvParams select;   // structural -> single-channel selection logits
  CohfBlockWeights block;
};

struct GateBranch {
  ConvParams conv;
  RrdbWeights rrdb;
};

struct OutputGateWeights {
  ConvParams expand;  // concat(F, P) -> d * r^2
  ConvParams intensity_head, gradient_head;  // zero at safe start
};

struct NetworkWeights {
  GateBranch intensity, structure, guide;
  std::vector<StageWeights> stages;
  OutputGateWeights output;
};

NetworkWeights network_weights(ParamSource& src, const ModelConfig& cfg);

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed, InitMode mode = InitMode::SafeStart);
std::size_t parameter_count(const ModelConfig& cfg);

struct GateFeatures {
  Var intensity;  // F^0
  Var structure;  // F_s^0
  Var guide;      // F_c^0, high-resolution extents; unbound when inter-modality attention is off
};

GateFeatures input_gate(Var lr, Var lr_grad, Var guide_grad, const NetworkWeights& w, const ModelConfig& cfg);

// Short window -> long window -> inter-modality attention, each skipped when switched off.
Var cohf_t_block(Var structure, Var guide, const CohfBlockWeights& w, const ModelConfig& cfg);

struct StageOutput {
  Var features;  // F_i
  Var prior;     // P_i
  Var embedded;  // E_i
  Var selection; // T_i
};

StageOutput stage_forward(Var features, Var prior, Var guide, const StageWeights& w, const ModelConfig& cfg);

struct ModelOutputs {
  Var intensity;  // I_out [rh,rw,1]
  Var gradient;   // R_out [rh,rw,1]
};

// `upsampled` is the bicubic upsampling of the low-resolution input, added to the intensity head.
ModelOutputs output_gate(Var features, Var prior, Var upsampled, const OutputGateWeights& w, const ModelConfig& cfg);

// lr: I_in [h,w,1]; lr_grad: R_s [h,w,1]; guide_grad: R_c [rh,rw,1].
ModelOutputs forward(Var lr, Var lr_grad, Var guide_grad, const NetworkWeights& w, const ModelConfig& cfg);

struct Prediction {
  Tensor intensity, gradient;
};

// Inference without gradients; R_s is computed from lr.
Prediction predict(const ModelState& state, const ModelConfig& cfg, const Tensor& lr, const Tensor& guide_grad);

}  // namespace cohft
