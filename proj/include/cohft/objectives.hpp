#pragma once

#include "cohft/tape.hpp"

namespace cohft {

struct LossConfig {
  Real alpha = 0.95;          // MSE weight against SSIM
  Real lambda = 0.5;          // gradient-loss weight
  Real epsilon_grad = 1e-6;   // inside the gradient-map square root
  std::size_t ssim_window = 11;
  Real ssim_sigma = 1.5;
  Real c1 = 0.01 * 0.01;      // unit dynamic range
  Real c2 = 0.03 * 0.03;
};

// sqrt(dx^2 + dy^2 + eps) with forward differences; the last row/column
// difference is zero (replicate boundary). [h,w,1] -> [h,w,1].
Tensor gradient_map(const Tensor& img, Real eps = 1e-6);
Var gradient_map(Var img, Real eps = 1e-6);

// Normalized 2-D Gaussian as conv weights [k,k,1,1].
Tensor gaussian_window(std::size_t size, Real sigma);

// Mean of the Gaussian-windowed SSIM map over valid positions. Inputs [h,w,1], h,w >= window.
Var ssim(Var a, Var b, const LossConfig& cfg = {});
Real ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg = {});

Var mse(Var a, Var b);
Real mse(const Tensor& a, const Tensor& b);

// 10 log10(1 / MSE); +infinity when the images are identical.
Real psnr(const Tensor& a, const Tensor& b);

// alpha * MSE - (1 - alpha) * SSIM
Var loss_in(Var out, Var gt, const LossConfig& cfg = {});
Var loss_c(Var grad_out, Var grad_gt, const LossConfig& cfg = {});

struct LossTerms {
  Var total, intensity, gradient;
};

// L = L_in + lambda * L_c, with the gradient target computed from gt.
LossTerms total_loss(Var out, Var grad_out, Var gt, const LossConfig& cfg = {});

struct LossValues {
  Real total, intensity, gradient;
};

LossValues evaluate_loss(const Tensor& out, const Tensor& grad_out, const Tensor& gt, const LossConfig& cfg = {});

}  // namespace cohft
