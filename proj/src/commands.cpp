#include "cohft/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cohft/io.hpp"
#include "cohft/verify.hpp"

namespace cohft::commands {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigFile = "config.txt";
constexpr const char* kStateFile = "model.chft";

void prepare(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  cfg.save_echo(out / kConfigFile);
}

std::string sample_id(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void gen_data(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const ModelConfig model = cfg.model();
  const std::size_t n = cfg.get_size("samples");
  const PhantomSpec base = cfg.phantom(0);
  if (base.side % model.r != 0) {
    throw ConfigError("side " + std::to_string(base.side) + " is not divisible by r=" + std::to_string(model.r));
  }
  model.preflight(base.side / model.r, base.side / model.r);
  prepare(cfg, out);

  Rng seeds(cfg.get_u64("seed"));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const TrainingPair pair = make_pair(cfg.phantom(seeds.next()), model.r);
    ids.push_back(sample_id(i));
    save_pair(out, ids.back(), pair);
  }
  write_manifest(out, ids);
  log << "wrote " << n << " pairs (" << base.side / model.r << " -> " << base.side << ") to " << out.string() << '\n';
}

ModelState initial_state(const RunConfig& cfg) {
  return init_model(cfg.model(), cfg.get_u64("seed") ^ 0x9e3779b97f4a7c15ULL);
}

void train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const ModelConfig model = cfg.model();
  const TrainOptions opts = cfg.train_options();
  const Dataset data = load_dataset(cfg.get("data"));
  for (const auto& p : data.pairs) model.preflight(p.t2_lr.dim(0), p.t2_lr.dim(1));
  prepare(cfg, out);

  ModelState state = initial_state(cfg);
  save_state(out / kStateFile, state);

  std::ofstream csv(out / "loss.csv");
  if (!csv) throw std::runtime_error("cannot write " + (out / "loss.csv").string());
  write_step_csv_header(csv);
  log << "training " << model.variant << " (" << state.parameter_count() << " parameters) on " << data.pairs.size()
      << " pairs for " << opts.epochs << " epochs\n";

  StepLog last;
  auto on_step = [&](const StepLog& s) {
    write_step_csv_row(csv, s);
    last = s;
  };
  auto on_epoch = [&](std::size_t epoch, const ModelState& st) {
    save_state(out / kStateFile, st);
    csv.flush();
    log << "epoch " << epoch << "/" << opts.epochs << "  lr " << format_real(last.lr) << "  loss " << format_real(last.total)
        << '\n';
  };
  try {
    cohft::train(model, std::move(state), data.pairs, opts, on_step, on_epoch);
  } catch (const DivergenceError&) {
    csv.flush();
    throw;
  }
}

ModelConfig checkpoint_model(const RunConfig& cfg) {
  RunConfig saved;
  saved.load_file(fs::path(cfg.get("checkpoint")) / kConfigFile);
  return saved.model();
}

ModelState checkpoint_state(const RunConfig& cfg) { return load_state(fs::path(cfg.get("checkpoint")) / kStateFile); }

std::vector<MetricRow> eval(const RunConfig& cfg, const fs::path& out, std::ostream& log,
                            const std::optional<Predictor>& predictor) {
  const Dataset data = load_dataset(cfg.get("data"));
  std::size_t r = cfg.model().r;
  ModelConfig model;
  ModelState state;
  Predictor pred;
  if (predictor) {
    pred = *predictor;
  } else {
    model = checkpoint_model(cfg);
    state = checkpoint_state(cfg);
    r = model.r;
    pred = model_predictor(state, model);
  }
  prepare(cfg, out);
  const std::vector<MetricRow> rows = evaluate(data, pred, r, cfg.loss());
  write_metrics_csv(out / "eval.csv", rows);

  Real psnr_sum = 0, bic_sum = 0;
  for (const auto& row : rows) {
    psnr_sum += row.psnr_db;
    bic_sum += row.bicubic_psnr_db;
  }
  const Real n = static_cast<Real>(std::max<std::size_t>(rows.size(), 1));
  log << "evaluated " << rows.size() << " samples: mean PSNR " << format_real(psnr_sum / n) << " dB, bicubic "
      << format_real(bic_sum / n) << " dB\n";
  return rows;
}

Prediction infer(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  if (cfg.get("input").empty() || cfg.get("guide").empty()) {
    throw ConfigError("infer needs input=<I_in.chft> and guide=<R_c.chft>");
  }
  const ModelConfig model = checkpoint_model(cfg);
  const ModelState state = checkpoint_state(cfg);
  const Tensor lr = io::load_tensor(cfg.get("input"));
  const Tensor guide = io::load_tensor(cfg.get("guide"));
  prepare(cfg, out);
  Prediction p = predict(state, model, lr, guide);
  io::save_tensor(out / "I_out.chft", p.intensity);
  io::save_tensor(out / "R_out.chft", p.gradient);
  log << "wrote I_out and R_out " << to_string(p.intensity.shape()) << " to " << out.string() << '\n';
  return p;
}

bool check(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  CheckOptions opts;
  opts.seed = cfg.get_u64("seed");
  opts.fault_op = cfg.get("check_fault");
  opts.fault_scale = cfg.get_real("check_fault_scale");
  const std::vector<CheckResult> results = run_checks(opts);
  const std::string report = format_report(results);
  log << report;
  if (!out.empty()) {
    prepare(cfg, out);
    std::ofstream(out / "check.txt") << report;
  }
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace cohft::commands
