#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "cohft/commands.hpp"
#include "cohft/io.hpp"
#include "cohft/resample.hpp"
#include "support/oracles.hpp"

using namespace cohft;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cohft_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

RunConfig small_config(const fs::path& data) {
  RunConfig cfg;
  cfg.parse("side=24\nsamples=8\ndata=" + data.string() + "\n");
  return cfg;
}

}  // namespace

TEST_CASE("run config") {
  RunConfig cfg;
  CHECK(cfg.get("preset") == "tiny");
  CHECK(cfg.model().d == 4);
  cfg.parse("# comment\n\n preset = S  # trailing\nd=8\nuse_adain=false\nepochs=3\n");
  const ModelConfig m = cfg.model();
  CHECK(m.variant == "S");
  CHECK(m.d == 8);
  CHECK(m.stages == 2);
  CHECK_FALSE(m.switches.use_adain);
  CHECK(cfg.train_options().epochs == 3);
  CHECK_THROWS_AS(cfg.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.assign("epochs"), ConfigError);
  CHECK_THROWS_AS(cfg.parse("a=1\nbogus=2\n", "run.cfg"), ConfigError);
  try {
    cfg.parse("epochs=1\nbogus=2\n", "run.cfg");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
  cfg.set("epochs", "-1");
  CHECK_THROWS_AS(cfg.train_options(), ConfigError);
  cfg.set("epochs", "2");
  cfg.set("alpha", "1.5");
  CHECK_THROWS_AS(cfg.loss(), ConfigError);
  cfg.set("alpha", "1");

  const auto dir = scratch_dir("config");
  cfg.save_echo(dir / "config.txt");
  RunConfig back;
  back.load_file(dir / "config.txt");
  CHECK(back.echo() == cfg.echo());
  CHECK(back.model().to_map() == m.to_map());
  fs::remove_all(dir);
}

TEST_CASE("learning-rate schedule") {
  const OptimizerConfig defaults;
  CHECK(defaults.lr == 1e-4);
  CHECK(defaults.weight_decay == 1e-4);
  CHECK(learning_rate(defaults, 0) == 1e-4);
  CHECK(learning_rate(defaults, 99) == 1e-4);
  CHECK(learning_rate(defaults, 100) == 0.5 * learning_rate(defaults, 99));
  CHECK(learning_rate(defaults, 250) == 0.25e-4);
  const TrainOptions desk = RunConfig().train_options();
  CHECK(learning_rate(desk.optimizer, desk.optimizer.halve_every) == 0.5 * learning_rate(desk.optimizer, 0));
}

TEST_CASE("gen-data") {
  const auto root = scratch_dir("gen");
  std::ostringstream log;
  RunConfig cfg;
  cfg.set("samples", "8");
  commands::gen_data(cfg, root / "a", log);
  CHECK(lines(root / "a" / "manifest.txt").size() == 8);
  CHECK(fs::exists(root / "a" / "config.txt"));
  const Dataset a = load_dataset(root / "a");
  CHECK(a.pairs[0].t2_lr.shape() == Shape{48, 48, 1});
  CHECK(a.pairs[0].t2_hr.shape() == Shape{96, 96, 1});
  for (const auto& p : a.pairs) CHECK_NOTHROW(cfg.model().preflight(p.t2_lr.dim(0), p.t2_lr.dim(1)));

  commands::gen_data(cfg, root / "b", log);
  CHECK(load_dataset(root / "b").pairs == a.pairs);
  cfg.set("seed", "1");
  commands::gen_data(cfg, root / "c", log);
  CHECK(load_dataset(root / "c").pairs != a.pairs);

  cfg.set("side", "20");  // 10x10 input fails the g=3 requirement
  CHECK_THROWS_AS(commands::gen_data(cfg, root / "d", log), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("train, eval and infer") {
  const auto root = scratch_dir("train");
  std::ostringstream log;
  RunConfig cfg = small_config(root / "data");
  commands::gen_data(cfg, root / "data", log);
  const Dataset data = load_dataset(root / "data");

  SUBCASE("zero epochs leave the initialization, and it reproduces bicubic") {
    cfg.set("epochs", "0");
    commands::train(cfg, root / "run0", log);
    CHECK(load_state(root / "run0" / "model.chft") == commands::initial_state(cfg));
    CHECK(lines(root / "run0" / "loss.csv") == std::vector<std::string>{"step,total,loss_in,loss_c"});

    io::save_tensor(root / "lr.chft", data.pairs[0].t2_lr);
    io::save_tensor(root / "guide.chft", data.pairs[0].t1_hr_grad);
    cfg.set("checkpoint", (root / "run0").string());
    cfg.set("input", (root / "lr.chft").string());
    cfg.set("guide", (root / "guide.chft").string());
    const Prediction p = commands::infer(cfg, root / "pred", log);
    CHECK(p.intensity == bicubic_upsample(data.pairs[0].t2_lr, 2));
    CHECK(io::load_tensor(root / "pred" / "I_out.chft") == p.intensity);
    CHECK(io::load_tensor(root / "pred" / "R_out.chft").shape() == Shape{24, 24, 1});
    CHECK(commands::infer(cfg, root / "pred2", log).gradient == p.gradient);

    cfg.set("input", "");
    CHECK_THROWS_AS(commands::infer(cfg, root / "pred3", log), ConfigError);
  }
  SUBCASE("one epoch writes a step per batch and moves the weights") {
    cfg.set("epochs", "1");
    commands::train(cfg, root / "run1", log);
    const auto rows = lines(root / "run1" / "loss.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("1,", 0) == 0);
    CHECK(rows[2].rfind("2,", 0) == 0);
    CHECK(load_state(root / "run1" / "model.chft") != commands::initial_state(cfg));
    RunConfig saved;
    saved.load_file(root / "run1" / "config.txt");
    CHECK(saved.echo() == cfg.echo());

    RunConfig ev = cfg;
    ev.set("checkpoint", (root / "run1").string());
    const auto metrics = commands::eval(ev, root / "eval", log);
    CHECK(metrics.size() == data.ids.size());
    CHECK(lines(root / "eval" / "eval.csv").size() == data.ids.size() + 1);
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      const TrainingPair& p = data.pairs[i];
      const Tensor up = bicubic_upsample(p.t2_lr, 2);
      CHECK(metrics[i].sample_id == data.ids[i]);
      CHECK(metrics[i].bicubic_psnr_db == doctest::Approx(oracle::psnr(up, p.t2_hr)).epsilon(1e-10));
      CHECK(metrics[i].bicubic_ssim == doctest::Approx(oracle::ssim(up, p.t2_hr)).epsilon(1e-10));
    }
  }
  SUBCASE("perfect-model stub") {
    Predictor perfect = [](const TrainingPair& p) { return Prediction{p.t2_hr, gradient_map(p.t2_hr)}; };
    const auto metrics = commands::eval(cfg, root / "eval", log, perfect);
    for (const auto& m : metrics) {
      CHECK(m.psnr_db == std::numeric_limits<Real>::infinity());
      CHECK(m.ssim == 1);
    }
    const auto csv = lines(root / "eval" / "eval.csv");
    CHECK(csv[0] == "sample_id,psnr_db,ssim,loss_in,loss_c,total,bicubic_psnr_db,bicubic_ssim");
    CHECK(csv[1].find(",inf,1,") != std::string::npos);
  }
  SUBCASE("divergence guard") {
    cfg.set("epochs", "3");
    cfg.set("lr", "1e200");
    try {
      commands::train(cfg, root / "diverge", log);
      FAIL("training should have diverged");
    } catch (const DivergenceError& e) {
      CHECK(e.step() >= 1);
      CHECK(std::string(e.what()).find("step " + std::to_string(e.step())) != std::string::npos);
    }
  }
  fs::remove_all(root);
}

TEST_CASE("check") {
  const auto dir = scratch_dir("check");
  std::ostringstream log;
  RunConfig cfg;
  CHECK(commands::check(cfg, dir / "fresh", log));
  const std::string report = log.str();
  for (const char* module : {"[tensor-core]", "[attention-core]", "[window-attention]", "[cross-modality]", "[srnet]",
                             "[objectives]", "[datagen]"})
    CHECK(report.find(module) != std::string::npos);
  CHECK(report.find("FAIL") == std::string::npos);
  CHECK(fs::exists(dir / "fresh" / "check.txt"));

  std::ostringstream faulty;
  cfg.set("check_fault", "conv2d");
  CHECK_FALSE(commands::check(cfg, dir / "fault", faulty));
  CHECK(faulty.str().find("FAIL  gradcheck conv2d") != std::string::npos);
  fs::remove_all(dir);
}
