#include "cohft/run_config.hpp"

#include <fstream>
#include <sstream>

namespace cohft {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_model_key(const std::string& key) {
  if (key == "variant") return false;
  ModelConfig scratch;
  return scratch.to_map().count(key) != 0;
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"preset", "tiny"},
      {"seed", "0"},
      // paths
      {"data", "data"},
      {"checkpoint", "checkpoint"},
      {"input", ""},
      {"guide", ""},
      // data generation
      {"samples", "8"},
      {"side", "96"},
      {"min_ellipses", "4"},
      {"max_ellipses", "9"},
      {"labels", "6"},
      {"blur_sigma", "0.6"},
      {"noise_sigma", "0"},
      // training: desk-scale schedule, 100 epochs x 2 batches = 200 steps
      {"epochs", "100"},
      {"batch_size", "4"},
      {"lr", "2e-3"},
      {"lr_halve_every", "25"},
      {"weight_decay", "1e-4"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"adam_eps", "1e-8"},
      // objective: desk runs train on MSE; the SSIM-weighted defaults live in LossConfig
      {"alpha", "1"},
      {"lambda", "0.1"},
      // verification
      {"check_fault", ""},
      {"check_fault_scale", "1.5"},
  };
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      assign(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (is_model_key(key)) {
    ModelConfig scratch;
    scratch.set(key, value);  // validates the value's syntax
    model_overrides_[key] = value;
    return;
  }
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

Real RunConfig::get_real(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  Real out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

ModelConfig RunConfig::model() const {
  std::size_t r = 2;
  if (auto it = model_overrides_.find("r"); it != model_overrides_.end()) {
    ModelConfig scratch;
    scratch.set("r", it->second);
    r = scratch.r;
  }
  ModelConfig c = ModelConfig::preset(get("preset"), r);
  for (const auto& [k, v] : model_overrides_) c.set(k, v);
  c.validate();
  return c;
}

PhantomSpec RunConfig::phantom(std::uint64_t seed) const {
  PhantomSpec s;
  s.seed = seed;
  s.side = get_size("side");
  s.min_ellipses = get_size("min_ellipses");
  s.max_ellipses = get_size("max_ellipses");
  s.labels = get_size("labels");
  s.blur_sigma = get_real("blur_sigma");
  s.noise_sigma = get_real("noise_sigma");
  s.validate();
  return s;
}

LossConfig RunConfig::loss() const {
  LossConfig l;
  l.alpha = get_real("alpha");
  l.lambda = get_real("lambda");
  if (l.alpha < 0 || l.alpha > 1) throw ConfigError("alpha must lie in [0, 1]");
  if (l.lambda < 0) throw ConfigError("lambda must be >= 0");
  return l;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.epochs = get_size("epochs");
  o.batch_size = get_size("batch_size");
  o.seed = get_u64("seed");
  o.optimizer.lr = get_real("lr");
  o.optimizer.halve_every = get_size("lr_halve_every");
  o.optimizer.weight_decay = get_real("weight_decay");
  o.optimizer.beta1 = get_real("beta1");
  o.optimizer.beta2 = get_real("beta2");
  o.optimizer.eps = get_real("adam_eps");
  o.loss = loss();
  if (o.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  return o;
}

std::string RunConfig::echo() const {
  std::map<std::string, std::string> all = values_;
  for (auto& [k, v] : model().to_map()) {
    if (k != "variant") all[k] = v;
  }
  std::ostringstream os;
  for (const auto& [k, v] : all) os << k << '=' << v << '\n';
  return os.str();
}

void RunConfig::save_echo(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << echo();
}

}  // namespace cohft
