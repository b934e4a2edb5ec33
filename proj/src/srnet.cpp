#include "cohft/srnet.hpp"

#include <stdexcept>

#include "cohft/objectives.hpp"
#include "cohft/ops.hpp"
#include "cohft/resample.hpp"

namespace cohft {

namespace {

constexpr Real kResidualScale = 0.2;
constexpr Real kDenseSlope = 0.2;

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value[0] == '-') {
    throw ConfigError("model key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("model key '" + key + "': expected true/false, got '" + value + "'");
}

std::string join(const std::string& a, const std::string& b) { return a + "." + b; }

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name, std::size_t r) {
  ModelConfig c;
  c.variant = name;
  c.r = r;
  if (name == "L") return c;
  if (name == "S") {
    c.d = 16;
    c.stages = 2;
    c.rdbs_per_rrdb = 2;
    c.convs_per_rdb = 3;
    return c;
  }
  if (name == "M") {
    c.d = 16;
    c.stages = 3;
    c.rdbs_per_rrdb = 3;
    c.convs_per_rdb = 3;
    return c;
  }
  if (name == "tiny") {
    c.d = 4;
    c.stages = 1;
    c.rrdbs_per_stage = 1;
    c.rdbs_per_rrdb = 1;
    c.convs_per_rdb = 2;
    c.g = 3;
    c.p_intra = 1;
    c.p_inter = 2;
    c.heads = 2;
    return c;
  }
  throw ConfigError("unknown model preset '" + name + "' (expected tiny, S, M or L)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("model key '") + key + "' must be >= 1");
  };
  positive(d, "d");
  positive(stages, "stages");
  positive(rrdbs_per_stage, "rrdbs_per_stage");
  positive(rdbs_per_rrdb, "rdbs_per_rrdb");
  positive(convs_per_rdb, "convs_per_rdb");
  positive(g, "g");
  positive(p_intra, "p_intra");
  positive(p_inter, "p_inter");
  positive(heads, "heads");
  if (r < 2 || r > 4) throw ConfigError("model key 'r' must be 2, 3 or 4, got " + std::to_string(r));
  if (g % p_intra != 0) {
    throw ConfigError("window side g=" + std::to_string(g) + " is not divisible by p_intra=" + std::to_string(p_intra));
  }
  window_attention().validate();
  inter_attention().validate();
}

void ModelConfig::preflight(std::size_t h, std::size_t w) const {
  validate();
  const std::string dims = std::to_string(h) + "x" + std::to_string(w);
  if (h % g != 0 || w % g != 0) {
    throw ConfigError("input " + dims + " is not divisible by the window side g=" + std::to_string(g));
  }
  if (h % p_inter != 0 || w % p_inter != 0) {
    throw ConfigError("input " + dims + " is not divisible by p_inter=" + std::to_string(p_inter));
  }
  if (h * w < 2) throw ConfigError("input " + dims + " is too small for instance statistics");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"variant", variant},
      {"d", std::to_string(d)},
      {"stages", std::to_string(stages)},
      {"rrdbs_per_stage", std::to_string(rrdbs_per_stage)},
      {"rdbs_per_rrdb", std::to_string(rdbs_per_rrdb)},
      {"convs_per_rdb", std::to_string(convs_per_rdb)},
      {"g", std::to_string(g)},
      {"p_intra", std::to_string(p_intra)},
      {"p_inter", std::to_string(p_inter)},
      {"heads", std::to_string(heads)},
      {"r", std::to_string(r)},
      {"use_short_wa", b(switches.use_short_wa)},
      {"use_long_wa", b(switches.use_long_wa)},
      {"use_inter_attn", b(switches.use_inter_attn)},
      {"use_inter_head", b(switches.use_inter_head)},
      {"use_adain", b(switches.use_adain)},
      {"use_prior_fusion", b(switches.use_prior_fusion)},
  };
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") {
    variant = value;
    return true;
  }
  std::size_t* sizes[] = {&d, &stages, &rrdbs_per_stage, &rdbs_per_rrdb, &convs_per_rdb, &g, &p_intra, &p_inter, &heads, &r};
  const char* size_keys[] = {"d",  "stages",  "rrdbs_per_stage", "rdbs_per_rrdb", "convs_per_rdb",
                             "g",  "p_intra", "p_inter",         "heads",         "r"};
  for (std::size_t i = 0; i < std::size(size_keys); ++i) {
    if (key == size_keys[i]) {
      *sizes[i] = parse_size(key, value);
      return true;
    }
  }
  bool* flags[] = {&switches.use_short_wa,   &switches.use_long_wa, &switches.use_inter_attn,
                   &switches.use_inter_head, &switches.use_adain,   &switches.use_prior_fusion};
  const char* flag_keys[] = {"use_short_wa",   "use_long_wa", "use_inter_attn",
                             "use_inter_head", "use_adain",   "use_prior_fusion"};
  for (std::size_t i = 0; i < std::size(flag_keys); ++i) {
    if (key == flag_keys[i]) {
      *flags[i] = parse_bool(key, value);
      return true;
    }
  }
  return false;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto it = kv.find("variant");
  if (it != kv.end() && it->second != "custom") {
    const auto r_it = kv.find("r");
    c = preset(it->second, r_it != kv.end() ? parse_size("r", r_it->second) : 2);
  }
  for (const auto& [k, v] : kv) {
    if (!c.set(k, v)) throw ConfigError("unknown model key '" + k + "'");
  }
  return c;
}

RrdbWeights rrdb_weights(ParamSource& src, const std::string& prefix, std::size_t d, std::size_t growth,
                         std::size_t rdbs, std::size_t convs) {
  RrdbWeights w;
  for (std::size_t b = 0; b < rdbs; ++b) {
    RdbWeights rdb;
    const std::string rp = join(prefix, "rdb" + std::to_string(b));
    for (std::size_t j = 0; j < convs; ++j) {
      const std::size_t cin = d + j * growth;
      const std::size_t cout = j + 1 == convs ? d : growth;
      rdb.convs.push_back(conv_params(src, join(rp, "conv" + std::to_string(j)), 3, cin, cout));
    }
    w.rdbs.push_back(std::move(rdb));
  }
  return w;
}

namespace {

Var rdb(Var x, const RdbWeights& w) {
  std::vector<Var> features{x};
  for (std::size_t j = 0; j + 1 < w.convs.size(); ++j) {
    Var input = features.size() == 1 ? x : ops::concat(features);
    features.push_back(ops::leaky_relu(conv_same(w.convs[j], input), kDenseSlope));
  }
  Var input = features.size() == 1 ? x : ops::concat(features);
  return ops::add(x, ops::scale(conv_same(w.convs.back(), input), kResidualScale));
}

}  // namespace

Var rrdb(Var x, const RrdbWeights& w) {
  Var h = x;
  for (const auto& block : w.rdbs) h = rdb(h, block);
  return ops::add(x, ops::scale(h, kResidualScale));
}

namespace {

std::vector<RrdbWeights> rrdb_chain(ParamSource& src, const std::string& prefix, const ModelConfig& cfg,
                                    std::size_t count) {
  std::vector<RrdbWeights> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(
        rrdb_weights(src, join(prefix, "rrdb" + std::to_string(k)), cfg.d, cfg.growth(), cfg.rdbs_per_rrdb, cfg.convs_per_rdb));
  }
  return out;
}

GateBranch gate_branch(ParamSource& src, const std::string& prefix, const ModelConfig& cfg) {
  GateBranch b;
  b.conv = conv_params(src, join(prefix, "conv"), 3, 1, cfg.d);
  b.rrdb = rrdb_weights(src, join(prefix, "rrdb"), cfg.d, cfg.growth(), cfg.rdbs_per_rrdb, cfg.convs_per_rdb);
  return b;
}

CohfBlockWeights block_weights(ParamSource& src, const std::string& prefix, const ModelConfig& cfg) {
  CohfBlockWeights w;
  const Switches& s = cfg.switches;
  if (s.use_short_wa) {
    w.short_attn = attention_weights(src, join(prefix, "swa.attn"), cfg.window_attention());
    w.short_mlp = mlp_weights(src, join(prefix, "swa.mlp"), cfg.d);
  }
  if (s.use_long_wa) {
    w.long_attn = attention_weights(src, join(prefix, "lwa.attn"), cfg.window_attention());
    w.long_mlp = mlp_weights(src, join(prefix, "lwa.mlp"), cfg.d);
  }
  if (s.use_inter_attn) {
    const std::string ip = join(prefix, "inter");
    if (s.use_adain) w.inter.adain = adain_weights(src, join(ip, "adain"), cfg.d, cfg.r);
    w.inter.attention = attention_weights(src, join(ip, "attn"), cfg.inter_attention());
    w.inter.mlp = mlp_weights(src, join(ip, "mlp"), cfg.d);
  }
  return w;
}

}  // namespace

NetworkWeights network_weights(ParamSource& src, const ModelConfig& cfg) {
  cfg.validate();
  NetworkWeights w;
  w.intensity = gate_branch(src, "gate.intensity", cfg);
  w.structure = gate_branch(src, "gate.structure", cfg);
  if (cfg.switches.use_inter_attn) w.guide = gate_branch(src, "gate.guide", cfg);
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    StageWeights s;
    s.rrdbs = rrdb_chain(src, sp, cfg, cfg.rrdbs_per_stage);
    s.extract = conv_params(src, join(sp, "extract"), 3, cfg.d, cfg.d);
    s.combine = conv_params(src, join(sp, "combine"), 3, 2 * cfg.d, cfg.d);
    if (cfg.switches.use_prior_fusion) s.select = conv_params(src, join(sp, "select"), 3, cfg.d, 1);
    s.block = block_weights(src, join(sp, "block"), cfg);
    w.stages.push_back(std::move(s));
  }
  w.output.expand = conv_params(src, "out.expand", 3, 2 * cfg.d, cfg.d * cfg.r * cfg.r);
  w.output.intensity_head = conv_params(src, "out.intensity", 3, cfg.d, 1, Init::ZeroAtStart);
  w.output.gradient_head = conv_params(src, "out.gradient", 3, cfg.d, 1, Init::ZeroAtStart);
  return w;
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed, InitMode mode) {
  ModelState state;
  StateInitializer init(state, seed, mode);
  network_weights(init, cfg);
  return state;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  ShapeCounter counter;
  network_weights(counter, cfg);
  return counter.count();
}

GateFeatures input_gate(Var lr, Var lr_grad, Var guide_grad, const NetworkWeights& w, const ModelConfig& cfg) {
  cfg.preflight(lr.dim(0), lr.dim(1));
  if (lr.shape() != Shape{lr.dim(0), lr.dim(1), 1} || lr_grad.shape() != lr.shape()) {
    throw ShapeError("input_gate: I_in and R_s must both be [h,w,1], got " + to_string(lr.shape()) + " and " +
                     to_string(lr_grad.shape()));
  }
  const Shape hr{cfg.r * lr.dim(0), cfg.r * lr.dim(1), 1};
  if (guide_grad.shape() != hr) {
    throw ShapeError("input_gate: R_c must be " + to_string(hr) + ", got " + to_string(guide_grad.shape()));
  }
  auto branch = [](Var x, const GateBranch& b) { return rrdb(conv_same(b.conv, x), b.rrdb); };
  GateFeatures f;
  f.intensity = branch(lr, w.intensity);
  f.structure = branch(lr_grad, w.structure);
  if (cfg.switches.use_inter_attn) f.guide = branch(guide_grad, w.guide);
  return f;
}

Var cohf_t_block(Var structure, Var guide, const CohfBlockWeights& w, const ModelConfig& cfg) {
  const Switches& s = cfg.switches;
  Var p = structure;
  if (s.use_short_wa) p = window_attention(p, cfg.g, WindowMode::Short, w.short_attn, w.short_mlp, cfg.window_attention());
  if (s.use_long_wa) p = window_attention(p, cfg.g, WindowMode::Long, w.long_attn, w.long_mlp, cfg.window_attention());
  if (s.use_inter_attn) p = inter_modality_attention(p, guide, w.inter, cfg.inter_attention(), s.use_adain);
  return p;
}

StageOutput stage_forward(Var features, Var prior, Var guide, const StageWeights& w, const ModelConfig& cfg) {
  StageOutput out;
  Var e = features;
  for (const auto& block : w.rrdbs) e = rrdb(e, block);
  out.embedded = e;
  Var structural = conv_same(w.extract, e);
  Var fs = conv_same(w.combine, ops::concat({prior, structural}));
  out.prior = cohf_t_block(fs, guide, w.block, cfg);
  if (cfg.switches.use_prior_fusion) {
    out.selection = ops::sigmoid(conv_same(w.select, structural));
    out.features = ops::add(e, ops::mul_channel_map(out.prior, out.selection));
  } else {
    out.features = e;
  }
  return out;
}

ModelOutputs output_gate(Var features, Var prior, Var upsampled, const OutputGateWeights& w, const ModelConfig& cfg) {
  Var h = conv_same(w.expand, ops::concat({features, prior}));
  h = ops::gelu(ops::pixel_shuffle(h, cfg.r));
  return {ops::add(conv_same(w.intensity_head, h), upsampled), conv_same(w.gradient_head, h)};
}

ModelOutputs forward(Var lr, Var lr_grad, Var guide_grad, const NetworkWeights& w, const ModelConfig& cfg) {
  GateFeatures gate = input_gate(lr, lr_grad, guide_grad, w, cfg);
  Var f = gate.intensity;
  Var p = gate.structure;
  for (const auto& stage : w.stages) {
    StageOutput s = stage_forward(f, p, gate.guide, stage, cfg);
    f = s.features;
    p = s.prior;
  }
  Var up = lr.tape()->constant(bicubic_upsample(lr.value(), cfg.r));
  return output_gate(f, p, up, w.output, cfg);
}

Prediction predict(const ModelState& state, const ModelConfig& cfg, const Tensor& lr, const Tensor& guide_grad) {
  Tape tape;
  TapeBinder binder(tape, state, false);
  const NetworkWeights w = network_weights(binder, cfg);
  ModelOutputs out = forward(tape.constant(lr), tape.constant(gradient_map(lr)), tape.constant(guide_grad), w, cfg);
  return {out.intensity.value(), out.gradient.value()};
}

}  // namespace cohft
