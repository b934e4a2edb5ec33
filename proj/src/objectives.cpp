#include "cohft/objectives.hpp"

#include <cmath>
#include <limits>

#include "cohft/ops.hpp"

namespace cohft {

namespace {

void check_image(const Shape& s, const char* op) {
  if (s.size() != 3 || s[2] != 1) throw ShapeError(std::string(op) + ": expected a [h,w,1] image, got " + to_string(s));
}

struct Diffs {
  Real dx, dy;
};

Diffs diffs_at(const Tensor& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  const Real v = img[y * w + x];
  return {x + 1 < w ? img[y * w + x + 1] - v : 0.0, y + 1 < h ? img[(y + 1) * w + x] - v : 0.0};
}

}  // namespace

Tensor gradient_map(const Tensor& img, Real eps) {
  check_image(img.shape(), "gradient_map");
  const std::size_t h = img.dim(0), w = img.dim(1);
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Diffs d = diffs_at(img, y, x, h, w);
      out[y * w + x] = std::sqrt(d.dx * d.dx + d.dy * d.dy + eps);
    }
  return out;
}

Var gradient_map(Var img, Real eps) {
  check_image(img.shape(), "gradient_map");
  const std::size_t h = img.dim(0), w = img.dim(1);
  return img.tape()->apply(
      "gradient_map", {img}, [eps](TensorRefs in) { return gradient_map(*in[0], eps); },
      [h, w](TensorRefs in, const Tensor& r, const Tensor& g, std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        Tensor& gi = *grads[0];
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t k = y * w + x;
            const Diffs d = diffs_at(*in[0], y, x, h, w);
            const Real s = g[k] / r[k];
            if (x + 1 < w) {
              gi[k + 1] += s * d.dx;
              gi[k] -= s * d.dx;
            }
            if (y + 1 < h) {
              gi[k + w] += s * d.dy;
              gi[k] -= s * d.dy;
            }
          }
      });
}

Tensor gaussian_window(std::size_t size, Real sigma) {
  Tensor k({size, size, 1, 1});
  const Real c = (static_cast<Real>(size) - 1.0) / 2.0;
  std::vector<Real> g1(size);
  Real s = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const Real t = static_cast<Real>(i) - c;
    g1[i] = std::exp(-t * t / (2 * sigma * sigma));
    s += g1[i];
  }
  for (auto& v : g1) v /= s;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) k[i * size + j] = g1[i] * g1[j];
  return k;
}

Var ssim(Var a, Var b, const LossConfig& cfg) {
  check_image(a.shape(), "ssim");
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.dim(0) < cfg.ssim_window || a.dim(1) < cfg.ssim_window) {
    throw ShapeError("ssim: image " + to_string(a.shape()) + " is smaller than the " + std::to_string(cfg.ssim_window) +
                     "x" + std::to_string(cfg.ssim_window) + " window");
  }
  Tape& tape = *a.tape();
  Var window = tape.constant(gaussian_window(cfg.ssim_window, cfg.ssim_sigma));
  Var zero = tape.constant(Tensor::zeros({1}));
  auto blur = [&](Var x) { return ops::conv2d(x, window, zero, 1, 0); };

  // Every term is built symmetrically in (a, b) so ssim(a, b) == ssim(b, a) bit-exactly.
  Var mu_a = blur(a), mu_b = blur(b);
  Var mu_aa = ops::mul(mu_a, mu_a), mu_bb = ops::mul(mu_b, mu_b), mu_ab = ops::mul(mu_a, mu_b);
  Var var_a = ops::sub(blur(ops::mul(a, a)), mu_aa);
  Var var_b = ops::sub(blur(ops::mul(b, b)), mu_bb);
  Var cov = ops::sub(blur(ops::mul(a, b)), mu_ab);

  Var num = ops::mul(ops::add_scalar(ops::scale(mu_ab, 2.0), cfg.c1), ops::add_scalar(ops::scale(cov, 2.0), cfg.c2));
  Var den = ops::mul(ops::add_scalar(ops::add(mu_aa, mu_bb), cfg.c1), ops::add_scalar(ops::add(var_a, var_b), cfg.c2));
  return ops::mean(ops::div(num, den));
}

Real ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  Tape tape;
  return ssim(tape.constant(a), tape.constant(b), cfg).value().item();
}

Var mse(Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return ops::mean(ops::square(ops::sub(a, b)));
}

Real mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Real s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<Real>(a.numel());
}

Real psnr(const Tensor& a, const Tensor& b) {
  const Real e = mse(a, b);
  if (e == 0) return std::numeric_limits<Real>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

Var loss_in(Var out, Var gt, const LossConfig& cfg) {
  return ops::sub(ops::scale(mse(out, gt), cfg.alpha), ops::scale(ssim(out, gt, cfg), 1.0 - cfg.alpha));
}

Var loss_c(Var grad_out, Var grad_gt, const LossConfig& cfg) { return loss_in(grad_out, grad_gt, cfg); }

LossTerms total_loss(Var out, Var grad_out, Var gt, const LossConfig& cfg) {
  Var grad_gt = gradient_map(gt, cfg.epsilon_grad);
  Var li = loss_in(out, gt, cfg);
  Var lc = loss_c(grad_out, grad_gt, cfg);
  return {ops::add(li, ops::scale(lc, cfg.lambda)), li, lc};
}

LossValues evaluate_loss(const Tensor& out, const Tensor& grad_out, const Tensor& gt, const LossConfig& cfg) {
  Tape tape;
  LossTerms t = total_loss(tape.constant(out), tape.constant(grad_out), tape.constant(gt), cfg);
  return {t.total.value().item(), t.intensity.value().item(), t.gradient.value().item()};
}

}  // namespace cohft
