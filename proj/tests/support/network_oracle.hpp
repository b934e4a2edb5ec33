#pragma once

// Straight-line forward pass of the full network built only from the test oracles.

#include <cmath>

#include "cohft/resample.hpp"
#include "cohft/srnet.hpp"
#include "support/oracles.hpp"

namespace netoracle {

using cohft::ModelConfig;
using cohft::ModelState;
using cohft::Real;
using cohft::Rng;
using cohft::Switches;
using cohft::Tensor;
using cohft::WindowMode;
using cohft::bicubic_upsample;
using cohft::init_model;
using cohft::InitMode;

inline Tensor conv(const ModelState& s, const std::string& name, const Tensor& x) {
  const Tensor& w = s.at(name + ".w");
  return oracle::conv2d(x, w, s.at(name + ".b"), 1, w.dim(0) / 2);
}

inline Tensor map(Tensor x, Real (*f)(Real)) {
  for (auto& v : x.data()) v = f(v);
  return x;
}

inline Real leaky(Real v) { return v > 0 ? v : 0.2 * v; }
inline Real logistic(Real v) { return 1 / (1 + std::exp(-v)); }

inline Tensor axpy(const Tensor& x, Real a, const Tensor& y) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += a * y[i];
  return out;
}

inline Tensor rrdb_oracle(const ModelState& s, const std::string& prefix, const ModelConfig& cfg, const Tensor& x) {
  Tensor h = x;
  for (std::size_t b = 0; b < cfg.rdbs_per_rrdb; ++b) {
    const std::string rp = prefix + ".rdb" + std::to_string(b);
    Tensor dense = h;
    for (std::size_t j = 0; j + 1 < cfg.convs_per_rdb; ++j)
      dense = oracle::concat(dense, map(conv(s, rp + ".conv" + std::to_string(j), dense), leaky));
    h = axpy(h, 0.2, conv(s, rp + ".conv" + std::to_string(cfg.convs_per_rdb - 1), dense));
  }
  return axpy(x, 0.2, h);
}

inline Tensor gate_oracle(const ModelState& s, const std::string& name, const ModelConfig& cfg, const Tensor& x) {
  return rrdb_oracle(s, name + ".rrdb", cfg, conv(s, name + ".conv", x));
}

inline Tensor block_oracle(const ModelState& s, const std::string& bp, const ModelConfig& cfg, const Tensor& fs, const Tensor& fc) {
  const Switches& sw = cfg.switches;
  Tensor p = fs;
  if (sw.use_short_wa) p = oracle::window_block(s, bp + ".swa", cfg.window_attention(), p, cfg.g, WindowMode::Short);
  if (sw.use_long_wa) p = oracle::window_block(s, bp + ".lwa", cfg.window_attention(), p, cfg.g, WindowMode::Long);
  if (sw.use_inter_attn) {
    const Tensor ref = sw.use_adain ? oracle::adain(s, bp + ".inter.adain", p, fc, cfg.r) : fc;
    p = oracle::mlp(s, bp + ".inter.mlp", oracle::attention(s, bp + ".inter.attn", cfg.inter_attention(), p, ref));
  }
  return p;
}

struct OracleOut {
  Tensor intensity, gradient;
  std::vector<Tensor> features, priors;
};

// Straight-line forward pass built only from the test oracles.
inline OracleOut network_oracle(const ModelState& s, const ModelConfig& cfg, const Tensor& lr, const Tensor& rc) {
  Tensor f = gate_oracle(s, "gate.intensity", cfg, lr);
  Tensor p = gate_oracle(s, "gate.structure", cfg, oracle::gradient_map(lr));
  const Tensor fc = cfg.switches.use_inter_attn ? gate_oracle(s, "gate.guide", cfg, rc) : Tensor();
  OracleOut out;
  for (std::size_t i = 1; i <= cfg.stages; ++i) {
    const std::string sp = "stage" + std::to_string(i);
    Tensor e = f;
    for (std::size_t k = 0; k < cfg.rrdbs_per_stage; ++k) e = rrdb_oracle(s, sp + ".rrdb" + std::to_string(k), cfg, e);
    const Tensor structural = conv(s, sp + ".extract", e);
    const Tensor fs = conv(s, sp + ".combine", oracle::concat(p, structural));
    p = block_oracle(s, sp + ".block", cfg, fs, fc);
    f = e;
    if (cfg.switches.use_prior_fusion) {
      const Tensor t = map(conv(s, sp + ".select", structural), logistic);
      for (std::size_t q = 0; q < t.numel(); ++q)
        for (std::size_t c = 0; c < cfg.d; ++c) f[q * cfg.d + c] += t[q] * p[q * cfg.d + c];
    }
    out.features.push_back(f);
    out.priors.push_back(p);
  }
  const Tensor h = oracle::gelu(oracle::pixel_shuffle(conv(s, "out.expand", oracle::concat(f, p)), cfg.r));
  const Tensor up = bicubic_upsample(lr, cfg.r);
  out.intensity = axpy(up, 1, conv(s, "out.intensity", h));
  out.gradient = conv(s, "out.gradient", h);
  return out;
}

inline ModelState randomized(const ModelConfig& cfg, std::uint64_t seed, Real spread = 0.4) {
  ModelState s = init_model(cfg, seed, InitMode::Dense);
  Rng rng(seed ^ 0xabcdef);
  for (auto& [name, t] : s.entries()) t = oracle::random(rng, t.shape(), -spread, spread);
  return s;
}

struct Sample {
  Tensor lr, rc;
};

inline Sample random_sample(Rng& rng, std::size_t h, std::size_t r) {
  return {oracle::random(rng, {h, h, 1}, 0, 1), oracle::gradient_map(oracle::random(rng, {h * r, h * r, 1}, 0, 1))};
}

}  // namespace netoracle
