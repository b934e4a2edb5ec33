// cohft: data generation, training, evaluation, inference and self-checks.
//
//   cohft gen-data --out data --set samples=8
//   cohft train    --set data=data --out run
//   cohft eval     --set data=data --set checkpoint=run --out run/eval
//   cohft infer    --set checkpoint=run --set input=I_in.chft --set guide=R_c.chft --out pred
//   cohft check    [--set check_fault=conv2d]

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "cohft/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, const std::string& default_out) {
  flags.out = default_out;
  cmd->add_option("--config", flags.config, "key=value settings file")->check(CLI::ExistingFile);
  cmd->add_option("--set", flags.sets, "override one setting, key=value (repeatable)")->allow_extra_args(false);
  cmd->add_option("--out", flags.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", flags.seed, "random seed")->check(CLI::NonNegativeNumber);
}

cohft::RunConfig resolve(const CommonFlags& flags) {
  cohft::RunConfig cfg;
  if (!flags.config.empty()) cfg.load_file(flags.config);
  for (const auto& s : flags.sets) cfg.assign(s);
  if (flags.seed >= 0) cfg.set("seed", std::to_string(flags.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided MR super-resolution with cross-modality high-frequency attention"};
  app.require_subcommand(1);

  CommonFlags gen, train, eval, infer, check;
  add_common(app.add_subcommand("gen-data", "generate a synthetic paired-modality dataset"), gen, "data");
  add_common(app.add_subcommand("train", "train a model; writes model.chft, config.txt and loss.csv"), train, "run");
  add_common(app.add_subcommand("eval", "per-sample PSNR/SSIM/losses against ground truth and bicubic"), eval, "eval");
  add_common(app.add_subcommand("infer", "super-resolve one image; writes I_out.chft and R_out.chft"), infer, "infer");
  add_common(app.add_subcommand("check", "run the invariant and gradient-check suite"), check, "");

  CLI11_PARSE(app, argc, argv);

  namespace cmd = cohft::commands;
  try {
    if (app.got_subcommand("gen-data")) {
      cmd::gen_data(resolve(gen), gen.out, std::cout);
    } else if (app.got_subcommand("train")) {
      cmd::train(resolve(train), train.out, std::cout);
    } else if (app.got_subcommand("eval")) {
      cmd::eval(resolve(eval), eval.out, std::cout);
    } else if (app.got_subcommand("infer")) {
      cmd::infer(resolve(infer), infer.out, std::cout);
    } else if (app.got_subcommand("check")) {
      return cmd::check(resolve(check), check.out, std::cout) ? 0 : 1;
    }
  } catch (const cohft::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const cohft::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
