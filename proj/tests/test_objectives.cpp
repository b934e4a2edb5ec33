#include <doctest.h>

#include <cmath>
#include <limits>

#include "cohft/objectives.hpp"
#include "support/oracles.hpp"

using namespace cohft;

TEST_CASE("gradient map") {
  const Tensor flat = gradient_map(Tensor::full({5, 7, 1}, 0.3));
  for (Real v : flat.data()) CHECK(v == doctest::Approx(1e-3).epsilon(1e-12));

  Tensor step({4, 6, 1});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 3; x < 6; ++x) step[y * 6 + x] = 1;
  const Tensor g = gradient_map(step);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const Real expect = x == 2 ? std::sqrt(1 + 1e-6) : std::sqrt(1e-6);
      CHECK(g[y * 6 + x] == doctest::Approx(expect).epsilon(1e-14));
    }

  Rng rng(1);
  Tensor x = oracle::random(rng, {9, 8, 1}, 0, 1);
  const Tensor gx = gradient_map(x);
  CHECK(max_abs_diff(gx, oracle::gradient_map(x)) < 1e-15);
  for (Real v : gx.data()) CHECK(v >= std::sqrt(1e-6));
  for (auto& v : x.data()) v += 0.25;
  CHECK(max_abs_diff(gradient_map(x), gx) < 1e-12);

  Tape tape;
  CHECK(gradient_map(tape.constant(x)).value() == gradient_map(x));
  auto f = [](Tape&, const std::vector<Var>& v) { return gradient_map(v[0]); };
  CHECK(oracle::fd_check(f, {oracle::random(rng, {5, 6, 1}, 0, 1)}, rng) <= 1e-5);
}

TEST_CASE("ssim") {
  Rng rng(2);
  const Tensor a = oracle::random(rng, {16, 14, 1}, 0, 1), b = oracle::random(rng, {16, 14, 1}, 0, 1);
  CHECK(ssim(a, a) == 1);
  CHECK(ssim(a, b) == ssim(b, a));
  CHECK(ssim(a, b) == doctest::Approx(oracle::ssim(a, b)).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b)) <= 1);

  // Constant patches: means 0 and 1, no variance, so SSIM = C1 / (1 + C1).
  const Real c1 = 1e-4;
  CHECK(ssim(Tensor({11, 11, 1}), Tensor::full({11, 11, 1}, 1)) == doctest::Approx(c1 / (1 + c1)).epsilon(1e-12));

  const Tensor w = gaussian_window(11, 1.5);
  CHECK(w.shape() == Shape{11, 11, 1, 1});
  Real total = 0;
  for (Real v : w.data()) total += v;
  CHECK(total == doctest::Approx(1).epsilon(1e-14));
  CHECK(w[5 * 11 + 5] == *std::max_element(w.data().begin(), w.data().end()));

  CHECK_THROWS(ssim(Tensor({10, 12, 1}), Tensor({10, 12, 1})));
  CHECK_THROWS(ssim(Tensor({12, 12, 1}), Tensor({12, 13, 1})));

  auto f = [](Tape&, const std::vector<Var>& v) { return ssim(v[0], v[1]); };
  CHECK(oracle::fd_check(f, {oracle::random(rng, {12, 13, 1}, 0, 1), oracle::random(rng, {12, 13, 1}, 0, 1)}, rng, 40) <= 1e-5);
}

TEST_CASE("mse and psnr") {
  Rng rng(3);
  CHECK(psnr(Tensor({4, 4, 1}), Tensor::full({4, 4, 1}, 0.1)) == doctest::Approx(20).epsilon(1e-12));
  const Tensor a = oracle::random(rng, {7, 5, 1}, 0, 1), b = oracle::random(rng, {7, 5, 1}, 0, 1);
  CHECK(psnr(a, a) == std::numeric_limits<Real>::infinity());
  CHECK(mse(a, b) == doctest::Approx(oracle::mse(a, b)).epsilon(1e-14));
  CHECK(psnr(a, b) == doctest::Approx(oracle::psnr(a, b)).epsilon(1e-12));
  Tape tape;
  CHECK(mse(tape.constant(a), tape.constant(b)).value()[0] == doctest::Approx(mse(a, b)).epsilon(1e-14));
}

TEST_CASE("training objective") {
  Rng rng(4);
  const LossConfig cfg;
  CHECK(cfg.alpha == 0.95);
  CHECK(cfg.lambda == 0.5);
  CHECK(cfg.epsilon_grad == 1e-6);
  const Tensor gt = oracle::random(rng, {12, 12, 1}, 0, 1), out = oracle::random(rng, {12, 12, 1}, 0, 1);
  const Tensor rout = oracle::random(rng, {12, 12, 1}, 0, 1);
  Tape tape;
  auto in = [&](const Tensor& x, const LossConfig& c) { return loss_in(tape.constant(x), tape.constant(gt), c).value()[0]; };

  CHECK(in(gt, cfg) == doctest::Approx(-0.05).epsilon(1e-14));
  LossConfig pure = cfg;
  pure.alpha = 1;
  CHECK(in(out, pure) == doctest::Approx(oracle::mse(out, gt)).epsilon(1e-14));
  CHECK(in(out, cfg) == doctest::Approx(0.95 * oracle::mse(out, gt) - 0.05 * oracle::ssim(out, gt)).epsilon(1e-12));
  CHECK(loss_c(tape.constant(gt), tape.constant(gt), cfg).value()[0] == doctest::Approx(-0.05).epsilon(1e-14));
  CHECK(loss_c(tape.constant(rout), tape.constant(gt), pure).value()[0] == doctest::Approx(oracle::mse(rout, gt)).epsilon(1e-14));

  const Tensor rgt = oracle::gradient_map(gt);
  const LossValues perfect = evaluate_loss(gt, rgt, gt, cfg);
  CHECK(perfect.total == doctest::Approx(-0.05 * 1.5).epsilon(1e-12));
  LossConfig nolambda = cfg;
  nolambda.lambda = 0;
  CHECK(evaluate_loss(out, rout, gt, nolambda).total == evaluate_loss(out, rout, gt, nolambda).intensity);

  const LossValues v = evaluate_loss(out, rout, gt, cfg);
  const Real li = 0.95 * oracle::mse(out, gt) - 0.05 * oracle::ssim(out, gt);
  const Real lc = 0.95 * oracle::mse(rout, rgt) - 0.05 * oracle::ssim(rout, rgt);
  CHECK(v.intensity == doctest::Approx(li).epsilon(1e-12));
  CHECK(v.gradient == doctest::Approx(lc).epsilon(1e-12));
  CHECK(v.total == doctest::Approx(li + 0.5 * lc).epsilon(1e-12));
  const LossTerms t = total_loss(tape.constant(out), tape.constant(rout), tape.constant(gt), cfg);
  CHECK(t.total.value()[0] == doctest::Approx(v.total).epsilon(1e-14));

  auto f = [cfg](Tape&, const std::vector<Var>& x) { return total_loss(x[0], x[1], x[2], cfg).total; };
  CHECK(oracle::fd_check(f, {out, rout, gt}, rng, 40) <= 1e-4);
}
