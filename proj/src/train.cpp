#include "cohft/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cohft/io.hpp"
#include "cohft/ops.hpp"
#include "cohft/resample.hpp"

namespace cohft {

Real learning_rate(const OptimizerConfig& cfg, std::size_t epoch) {
  if (cfg.halve_every == 0) return cfg.lr;
  return cfg.lr * std::pow(0.5, static_cast<Real>(epoch / cfg.halve_every));
}

AdamW::AdamW(const ModelState& state, OptimizerConfig cfg) : cfg_(cfg) {
  for (const auto& [name, t] : state.entries()) {
    m_.push_back(Tensor::zeros(t.shape()));
    v_.push_back(Tensor::zeros(t.shape()));
  }
}

void AdamW::step(ModelState& state, const std::vector<Tensor>& grads, Real lr) {
  auto& entries = state.entries();
  if (grads.size() != entries.size() || m_.size() != entries.size()) {
    throw std::invalid_argument("AdamW::step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(entries.size()) + " state entries");
  }
  ++t_;
  const Real c1 = 1 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real c2 = 1 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g[k] * g[k];
      const Real update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      p[k] -= lr * (update + cfg_.weight_decay * p[k]);
    }
  }
}

BatchResult batch_gradient(const ModelState& state, const ModelConfig& model, const std::vector<const TrainingPair*>& batch,
                           const LossConfig& loss) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  Tape tape;
  TapeBinder binder(tape, state, true);
  const NetworkWeights w = network_weights(binder, model);

  Var total, intensity, gradient;
  for (const TrainingPair* pair : batch) {
    ModelOutputs out = forward(tape.constant(pair->t2_lr), tape.constant(pair->t2_lr_grad),
                               tape.constant(pair->t1_hr_grad), w, model);
    LossTerms t = total_loss(out.intensity, out.gradient, tape.constant(pair->t2_hr), loss);
    total = total.valid() ? ops::add(total, t.total) : t.total;
    intensity = intensity.valid() ? ops::add(intensity, t.intensity) : t.intensity;
    gradient = gradient.valid() ? ops::add(gradient, t.gradient) : t.gradient;
  }
  const Real inv = 1.0 / static_cast<Real>(batch.size());
  Var mean_total = ops::scale(total, inv);
  tape.backward(mean_total);

  BatchResult r;
  r.loss = {mean_total.value().item(), intensity.value().item() * inv, gradient.value().item() * inv};
  std::unordered_map<std::string, std::size_t> index;
  const auto& entries = state.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    index.emplace(entries[i].first, i);
    r.grads.push_back(Tensor::zeros(entries[i].second.shape()));
  }
  for (const auto& [name, var] : binder.bound()) r.grads[index.at(name)] = tape.grad(var);
  return r;
}

ModelState train(const ModelConfig& model, ModelState state, const std::vector<TrainingPair>& data,
                 const TrainOptions& opts, const StepCallback& on_step, const EpochCallback& on_epoch) {
  if (opts.epochs > 0 && data.empty()) throw std::invalid_argument("train: empty dataset");
  if (opts.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  for (const auto& p : data) model.preflight(p.t2_lr.dim(0), p.t2_lr.dim(1));

  AdamW optimizer(state, opts.optimizer);
  Rng rng(opts.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
    }
    const Real lr = learning_rate(opts.optimizer, epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += opts.batch_size) {
      std::vector<const TrainingPair*> batch;
      for (std::size_t k = begin; k < std::min(order.size(), begin + opts.batch_size); ++k) batch.push_back(&data[order[k]]);
      ++step;
      BatchResult r = batch_gradient(state, model, batch, opts.loss);
      if (!std::isfinite(r.loss.total)) {
        throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": loss is not finite");
      }
      optimizer.step(state, r.grads, lr);
      if (on_step) on_step({step, epoch, lr, r.loss.total, r.loss.intensity, r.loss.gradient});
    }
    if (on_epoch) on_epoch(epoch + 1, state);
  }
  return state;
}

Predictor model_predictor(const ModelState& state, const ModelConfig& model) {
  return [&state, model](const TrainingPair& pair) { return predict(state, model, pair.t2_lr, pair.t1_hr_grad); };
}

std::vector<MetricRow> evaluate(const Dataset& data, const Predictor& predictor, std::size_t r, const LossConfig& loss) {
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    const TrainingPair& pair = data.pairs[i];
    const Prediction pred = predictor(pair);
    const LossValues lv = evaluate_loss(pred.intensity, pred.gradient, pair.t2_hr, loss);
    const Tensor bicubic = bicubic_upsample(pair.t2_lr, r);
    MetricRow row;
    row.sample_id = data.ids.at(i);
    row.psnr_db = psnr(pred.intensity, pair.t2_hr);
    row.ssim = ssim(pred.intensity, pair.t2_hr, loss);
    row.loss_in = lv.intensity;
    row.loss_c = lv.gradient;
    row.total = lv.total;
    row.bicubic_psnr_db = psnr(bicubic, pair.t2_hr);
    row.bicubic_ssim = ssim(bicubic, pair.t2_hr, loss);
    rows.push_back(row);
  }
  return rows;
}

std::string format_real(Real v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,psnr_db,ssim,loss_in,loss_c,total,bicubic_psnr_db,bicubic_ssim\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << format_real(r.psnr_db) << ',' << format_real(r.ssim) << ',' << format_real(r.loss_in)
        << ',' << format_real(r.loss_c) << ',' << format_real(r.total) << ',' << format_real(r.bicubic_psnr_db) << ','
        << format_real(r.bicubic_ssim) << '\n';
  }
}

void write_step_csv_header(std::ostream& os) { os << "step,total,loss_in,loss_c\n"; }

void write_step_csv_row(std::ostream& os, const StepLog& row) {
  os << row.step << ',' << format_real(row.total) << ',' << format_real(row.loss_in) << ',' << format_real(row.loss_c)
     << '\n';
}

void save_state(const std::filesystem::path& file, const ModelState& state) { io::save_named(file, state.entries()); }

ModelState load_state(const std::filesystem::path& file) { return ModelState::from_entries(io::load_named(file)); }

}  // namespace cohft
