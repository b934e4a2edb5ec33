#include "cohft/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "cohft/io.hpp"
#include "cohft/objectives.hpp"
#include "cohft/params.hpp"
#include "cohft/resample.hpp"

namespace cohft {

void PhantomSpec::validate() const {
  if (side < 2) throw ConfigError("phantom side must be >= 2, got " + std::to_string(side));
  if (min_ellipses > max_ellipses) {
    throw ConfigError("phantom ellipse range is empty: " + std::to_string(min_ellipses) + ".." +
                      std::to_string(max_ellipses));
  }
  if (labels < 2) throw ConfigError("phantom needs at least 2 labels");
  if (blur_sigma < 0 || noise_sigma < 0) throw ConfigError("phantom blur and noise sigmas must be >= 0");
}

namespace {

struct Ellipse {
  Real cy, cx, ay, ax, cos_t, sin_t;
  std::size_t label;

  bool contains(Real y, Real x) const {
    const Real dy = y - cy, dx = x - cx;
    const Real u = dx * cos_t + dy * sin_t;
    const Real v = -dx * sin_t + dy * cos_t;
    return (u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0;
  }
};

std::vector<Real> gaussian_taps(Real sigma) {
  const long radius = static_cast<long>(std::ceil(3 * sigma));
  std::vector<Real> taps(static_cast<std::size_t>(2 * radius + 1));
  Real total = 0;
  for (long i = -radius; i <= radius; ++i) {
    const Real v = std::exp(-static_cast<Real>(i * i) / (2 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : taps) v /= total;
  return taps;
}

// Separable Gaussian blur with symmetric reflection at the borders.
Tensor blur(const Tensor& img, Real sigma) {
  if (sigma == 0) return img;
  const std::vector<Real> taps = gaussian_taps(sigma);
  const long radius = static_cast<long>(taps.size() / 2);
  const long h = static_cast<long>(img.dim(0)), w = static_cast<long>(img.dim(1));
  Tensor tmp(img.shape()), out(img.shape());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      Real s = 0;
      for (long k = -radius; k <= radius; ++k) s += taps[static_cast<std::size_t>(k + radius)] * img[y * w + reflect_index(x + k, w)];
      tmp[y * w + x] = s;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      Real s = 0;
      for (long k = -radius; k <= radius; ++k) s += taps[static_cast<std::size_t>(k + radius)] * tmp[reflect_index(y + k, h) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

}  // namespace

Phantom synth_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto count = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(spec.min_ellipses), static_cast<std::int64_t>(spec.max_ellipses)));
  std::vector<Ellipse> ellipses;
  for (std::size_t i = 0; i < count; ++i) {
    Ellipse e{};
    e.cy = rng.uniform(0.2, 0.8);
    e.cx = rng.uniform(0.2, 0.8);
    e.ay = rng.uniform(0.08, 0.35);
    e.ax = rng.uniform(0.08, 0.35);
    const Real theta = rng.uniform(0, std::numbers::pi);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    e.label = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(spec.labels) - 1));
    ellipses.push_back(e);
  }
  // Independently shuffled, evenly spaced levels: the modalities share edges, not intensities,
  // and every label boundary keeps a contrast of at least 0.8 / (labels - 1) in both.
  auto table = [&] {
    std::vector<Real> lut(spec.labels);
    for (std::size_t i = 0; i < lut.size(); ++i)
      lut[i] = 0.1 + 0.8 * static_cast<Real>(i) / static_cast<Real>(lut.size() - 1);
    for (std::size_t i = lut.size() - 1; i > 0; --i)
      std::swap(lut[i], lut[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
    return lut;
  };
  const std::vector<Real> lut1 = table(), lut2 = table();

  const std::size_t n = spec.side;
  Tensor t1({n, n, 1}), t2({n, n, 1});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Real py = (static_cast<Real>(y) + 0.5) / static_cast<Real>(n);
      const Real px = (static_cast<Real>(x) + 0.5) / static_cast<Real>(n);
      std::size_t label = 0;
      for (const auto& e : ellipses)
        if (e.contains(py, px)) label = e.label;
      t1[y * n + x] = lut1[label];
      t2[y * n + x] = lut2[label];
    }
  t1 = blur(t1, spec.blur_sigma);
  t2 = blur(t2, spec.blur_sigma);
  for (Tensor* t : {&t1, &t2}) {
    for (auto& v : t->data()) {
      if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  return {t1, t2};
}

Tensor degrade(const Tensor& hr, std::size_t r) { return bicubic_downsample(hr, r); }

TrainingPair make_pair(const PhantomSpec& spec, std::size_t r) {
  if (r == 0 || spec.side % r != 0) {
    throw ConfigError("phantom side " + std::to_string(spec.side) + " is not divisible by r=" + std::to_string(r));
  }
  Phantom ph = synth_phantom(spec);
  TrainingPair p;
  p.t2_hr = ph.t2;
  p.t2_lr = degrade(ph.t2, r);
  p.t2_lr_grad = gradient_map(p.t2_lr);
  p.t1_hr_grad = gradient_map(ph.t1);
  return p;
}

namespace {

std::filesystem::path field_path(const std::filesystem::path& dir, const std::string& id, const char* field) {
  return dir / (id + "." + field + ".chft");
}

}  // namespace

void save_pair(const std::filesystem::path& dir, const std::string& id, const TrainingPair& pair) {
  io::save_tensor(field_path(dir, id, "t2_lr"), pair.t2_lr);
  io::save_tensor(field_path(dir, id, "t2_lr_grad"), pair.t2_lr_grad);
  io::save_tensor(field_path(dir, id, "t1_hr_grad"), pair.t1_hr_grad);
  io::save_tensor(field_path(dir, id, "t2_hr"), pair.t2_hr);
}

TrainingPair load_pair(const std::filesystem::path& dir, const std::string& id) {
  TrainingPair p;
  p.t2_lr = io::load_tensor(field_path(dir, id, "t2_lr"));
  p.t2_lr_grad = io::load_tensor(field_path(dir, id, "t2_lr_grad"));
  p.t1_hr_grad = io::load_tensor(field_path(dir, id, "t1_hr_grad"));
  p.t2_hr = io::load_tensor(field_path(dir, id, "t2_hr"));
  return p;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  for (const auto& id : ids) out << id << '\n';
}

std::vector<std::string> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.txt").string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.ids = read_manifest(dir);
  for (const auto& id : ds.ids) ds.pairs.push_back(load_pair(dir, id));
  return ds;
}

}  // namespace cohft
