#include <doctest.h>

#include <cmath>

#include "cohft/cross_modality.hpp"
#include "cohft/ops.hpp"
#include "support/oracles.hpp"

using namespace cohft;

namespace {

ModelState random_inter(const AttentionConfig& cfg, std::uint64_t seed, Real spread = 0.5) {
  ModelState state;
  StateInitializer init(state, seed, InitMode::Dense);
  inter_modality_weights(init, "im", cfg);
  Rng rng(seed + 1);
  for (auto& [name, t] : state.entries()) t = oracle::random(rng, t.shape(), -spread, spread);
  return state;
}

Tensor run_inter(const ModelState& s, const AttentionConfig& cfg, const Tensor& x1, const Tensor& x2, bool adain = true) {
  Tape tape;
  TapeBinder bind(tape, s, false);
  const InterModalityWeights w = inter_modality_weights(bind, "im", cfg);
  return inter_modality_attention(tape.constant(x1), tape.constant(x2), w, cfg, adain).value();
}

Tensor run_adain(const ModelState& s, const Tensor& x1, const Tensor& x2, std::size_t r) {
  Tape tape;
  TapeBinder bind(tape, s, false);
  const AdainWeights w = adain_weights(bind, "im.adain", x1.dim(2), r);
  return adaptive_instance_norm(tape.constant(x1), tape.constant(x2), w, r).value();
}

}  // namespace

TEST_CASE("channel moments") {
  const Tensor mu = channel_mean(Tensor::full({3, 2, 2}, 0.7));
  const Tensor sd = channel_std(Tensor::full({3, 2, 2}, 0.7));
  for (Real v : mu.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
  for (Real v : sd.data()) CHECK(v == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));

  const Tensor pm({2, 1, 1}, std::vector<Real>{-1, 1});
  CHECK(channel_mean(pm)[0] == 0);
  CHECK(channel_std(pm)[0] == doctest::Approx(std::sqrt(1 + 1e-5)).epsilon(1e-14));

  Rng rng(1);
  const Tensor x = oracle::random(rng, {4, 4, 3}, -2, 3);
  const auto m = oracle::moments(x);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(channel_mean(x)[c] == doctest::Approx(m.mean[c]).epsilon(1e-13));
    CHECK(channel_std(x)[c] == doctest::Approx(m.sd[c]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(channel_mean(Tensor({1, 1, 3})), ShapeError);
}

TEST_CASE("instance standardization") {
  Rng rng(2);
  SUBCASE("random input has zero mean and unit variance") {
    for (int t = 0; t < 10; ++t) {
      const Tensor y = instance_standardize(oracle::random(rng, {5, 4, 3}, -4, 9));
      const auto m = oracle::moments(y, 0);
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(m.mean[c]) <= 1e-4);
        CHECK(m.sd[c] * m.sd[c] <= 1);
        CHECK(m.sd[c] * m.sd[c] >= 1 - 1e-3);
      }
    }
  }
  SUBCASE("fixed point, constant channel, mean shift") {
    const Tensor z = instance_standardize(oracle::random(rng, {6, 6, 2}));
    CHECK(max_abs_diff(instance_standardize(z), z) < 1e-4);
    const Tensor flat = instance_standardize(Tensor::full({3, 3, 1}, 4.0));
    for (Real v : flat.data()) CHECK(v == 0);
    Tensor x = oracle::random(rng, {4, 4, 2});
    const Tensor before = instance_standardize(x);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += i % 2 ? 3.5 : -1.25;
    CHECK(max_abs_diff(instance_standardize(x), before) < 1e-12);
  }
}

TEST_CASE("adain apply") {
  Rng rng(3);
  auto apply = [](const Tensor& xs, const Tensor& mu, const Tensor& sd, const Tensor& beta, const Tensor& gamma) {
    Tape tape;
    return adain_apply(tape.constant(xs), tape.constant(mu), tape.constant(sd), tape.constant(beta),
                       tape.constant(gamma)).value();
  };
  SUBCASE("zero point-wise maps transfer the target moments") {
    for (int t = 0; t < 20; ++t) {
      const Tensor x1 = oracle::random(rng, {3, 3, 4}, -2, 2), x2 = oracle::random(rng, {6, 6, 4}, -5, 1);
      const Tensor out = apply(instance_standardize(x2), channel_mean(x1), channel_std(x1), Tensor({6, 6, 1}),
                               Tensor({6, 6, 1}));
      const auto got = oracle::moments(out), want = oracle::moments(x1);
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(got.mean[c] - want.mean[c]) <= 1e-4);
        CHECK(std::abs(got.sd[c] - want.sd[c]) <= 1e-4);
      }
    }
  }
  SUBCASE("zero standardized input leaves mu + beta") {
    const Tensor mu({2}, std::vector<Real>{0.5, -1}), sd({2}, std::vector<Real>{2, 3});
    const Tensor beta = oracle::random(rng, {2, 2, 1}), gamma = oracle::random(rng, {2, 2, 1});
    const Tensor out = apply(Tensor({2, 2, 2}), mu, sd, beta, gamma);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(out[i * 2 + j] == mu[j] + beta[i]);
  }
  SUBCASE("scalar loop oracle and gradients") {
    const Tensor xs = oracle::random(rng, {3, 2, 3}), mu = oracle::random(rng, {3}), sd = oracle::random(rng, {3}, 0.5, 2);
    const Tensor beta = oracle::random(rng, {3, 2, 1}), gamma = oracle::random(rng, {3, 2, 1});
    const Tensor out = apply(xs, mu, sd, beta, gamma);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(out[i * 3 + j] == doctest::Approx(xs[i * 3 + j] * (sd[j] + gamma[i]) + mu[j] + beta[i]).epsilon(1e-14));
    auto f = [](Tape&, const std::vector<Var>& v) { return adain_apply(v[0], v[1], v[2], v[3], v[4]); };
    CHECK(oracle::fd_check(f, {xs, mu, sd, beta, gamma}, rng) <= 1e-5);
    auto g = [](Tape&, const std::vector<Var>& v) {
      return ops::concat({ops::reshape(instance_standardize(v[0]), {27}), channel_mean(v[0]), channel_std(v[0])});
    };
    CHECK(oracle::fd_check(g, {oracle::random(rng, {3, 3, 3})}, rng) <= 1e-5);
  }
}

TEST_CASE("point-wise affine maps") {
  Rng rng(4);
  const AttentionConfig cfg{4, 2, 2, 2, true};
  SUBCASE("shape contract and safe start") {
    ModelState s;
    StateInitializer init(s, 5, InitMode::SafeStart);
    inter_modality_weights(init, "im", cfg);
    Tape tape;
    TapeBinder bind(tape, s, false);
    const AdainWeights w = adain_weights(bind, "im.adain", 4, 2);
    const PointwiseAffine pa = compute_affine(tape.constant(oracle::random(rng, {6, 6, 4})),
                                              tape.constant(oracle::random(rng, {12, 12, 4})), w, 2);
    CHECK(pa.beta.shape() == Shape{12, 12, 1});
    CHECK(pa.gamma.shape() == Shape{12, 12, 1});
    CHECK(pa.beta.value() == Tensor::zeros({12, 12, 1}));
    CHECK(pa.gamma.value() == Tensor::zeros({12, 12, 1}));
    CHECK_THROWS_AS(compute_affine(tape.constant(Tensor({6, 6, 4})), tape.constant(Tensor({12, 10, 4})), w, 2),
                    ShapeError);
  }
  SUBCASE("r=1 is valid") {
    const AttentionConfig c1{4, 2, 1, 1, true};
    const ModelState s = random_inter(c1, 6);
    const Tensor x1 = oracle::random(rng, {3, 3, 4}), x2 = oracle::random(rng, {3, 3, 4});
    CHECK(max_abs_diff(run_adain(s, x1, x2, 1), oracle::adain(s, "im.adain", x1, x2, 1)) < 1e-12);
  }
  SUBCASE("full AdaIN matches the loop oracle") {
    const ModelState s = random_inter(cfg, 7);
    const Tensor x1 = oracle::random(rng, {3, 3, 4}), x2 = oracle::random(rng, {6, 6, 4});
    CHECK(max_abs_diff(run_adain(s, x1, x2, 2), oracle::adain(s, "im.adain", x1, x2, 2)) < 1e-12);
  }
}

TEST_CASE("inter-modality attention") {
  Rng rng(5);
  SUBCASE("safe start is the identity on x1") {
    const AttentionConfig cfg{4, 2, 2, 2, true};
    ModelState s;
    StateInitializer init(s, 8, InitMode::SafeStart);
    inter_modality_weights(init, "im", cfg);
    const Tensor x1 = oracle::random(rng, {6, 6, 4});
    CHECK(run_inter(s, cfg, x1, oracle::random(rng, {12, 12, 4})) == x1);
  }
  SUBCASE("same modality with zero affine reduces to self attention") {
    const AttentionConfig cfg{4, 2, 1, 1, true};
    ModelState s = random_inter(cfg, 9);
    for (const char* k : {"im.adain.beta.w", "im.adain.beta.b", "im.adain.gamma.w", "im.adain.gamma.b"})
      s.at(k) = Tensor::zeros(s.at(k).shape());
    const Tensor x = oracle::random(rng, {4, 4, 4});
    const Tensor self = oracle::mlp(s, "im.mlp", oracle::attention(s, "im.attn", cfg, x, x));
    // AdaIN of x toward itself is x up to the eps in the standard deviation
    CHECK(max_abs_diff(run_inter(s, cfg, x, x), self) < 1e-4);
    CHECK(max_abs_diff(run_inter(s, cfg, x, x, false), self) < 1e-12);
  }
  SUBCASE("composition oracle, 6x6x4 with a 12x12x4 reference, p=2") {
    const AttentionConfig cfg{4, 2, 2, 2, true};
    const ModelState s = random_inter(cfg, 10);
    const Tensor x1 = oracle::random(rng, {6, 6, 4}), x2 = oracle::random(rng, {12, 12, 4});
    const Tensor ref = oracle::adain(s, "im.adain", x1, x2, 2);
    const Tensor expect = oracle::mlp(s, "im.mlp", oracle::attention(s, "im.attn", cfg, x1, ref));
    CHECK(max_abs_diff(run_inter(s, cfg, x1, x2), expect) < 1e-11);
  }
  SUBCASE("output keeps x1's shape for every ratio") {
    for (std::size_t r : {1, 2, 3, 4}) {
      const AttentionConfig cfg{4, 4, 1, r, true};
      const ModelState s = random_inter(cfg, 11 + r);
      const Tensor x1 = oracle::random(rng, {2, 3, 4});
      CHECK(run_inter(s, cfg, x1, oracle::random(rng, {2 * r, 3 * r, 4})).shape() == x1.shape());
    }
  }
  SUBCASE("gradients reach every weight") {
    const AttentionConfig cfg{4, 2, 1, 2, true};
    const ModelState s = random_inter(cfg, 20, 0.4);
    std::vector<Tensor> inputs = {oracle::random(rng, {2, 2, 4}), oracle::random(rng, {4, 4, 4})};
    for (const auto& t : oracle::values(s)) inputs.push_back(t);
    auto f = [cfg](Tape&, const std::vector<Var>& v) {
      oracle::ListSource src({v.begin() + 2, v.end()});
      const InterModalityWeights w = inter_modality_weights(src, "im", cfg);
      return inter_modality_attention(v[0], v[1], w, cfg);
    };
    CHECK(oracle::fd_check(f, inputs, rng) <= 1e-5);
  }
}
