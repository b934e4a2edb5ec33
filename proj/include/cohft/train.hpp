#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohft/datagen.hpp"
#include "cohft/objectives.hpp"
#include "cohft/srnet.hpp"

namespace cohft {

struct OptimizerConfig {
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 1e-4;  // decoupled
  std::size_t halve_every = 100;  // epochs between learning-rate halvings
};

// Base rate halved once per completed `halve_every` epochs.
Real learning_rate(const OptimizerConfig& cfg, std::size_t epoch);

// Adam moments with decoupled weight decay, one slot per state entry.
class AdamW {
 public:
  AdamW(const ModelState& state, OptimizerConfig cfg);

  // grads[i] is the gradient of entry i of `state`.
  void step(ModelState& state, const std::vector<Tensor>& grads, Real lr);
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  std::size_t epochs = 400;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;  // batch shuffling
  OptimizerConfig optimizer;
  LossConfig loss;
};

struct StepLog {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  Real lr = 0;
  Real total = 0, loss_in = 0, loss_c = 0;  // batch means
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct BatchResult {
  LossValues loss;                  // batch means
  std::vector<Tensor> grads;        // aligned with the state entries
};

// Mean loss over the batch and its gradient for every state entry.
BatchResult batch_gradient(const ModelState& state, const ModelConfig& model, const std::vector<const TrainingPair*>& batch,
                           const LossConfig& loss);

using StepCallback = std::function<void(const StepLog&)>;
using EpochCallback = std::function<void(std::size_t epoch, const ModelState&)>;

// Throws DivergenceError when a batch loss is not finite.
ModelState train(const ModelConfig& model, ModelState state, const std::vector<TrainingPair>& data,
                 const TrainOptions& opts, const StepCallback& on_step = {}, const EpochCallback& on_epoch = {});

struct MetricRow {
  std::string sample_id;
  Real psnr_db = 0, ssim = 0;
  Real loss_in = 0, loss_c = 0, total = 0;
  Real bicubic_psnr_db = 0, bicubic_ssim = 0;
};

using Predictor = std::function<Prediction(const TrainingPair&)>;

Predictor model_predictor(const ModelState& state, const ModelConfig& model);

std::vector<MetricRow> evaluate(const Dataset& data, const Predictor& predictor, std::size_t r, const LossConfig& loss = {});

// Decimal text; infinities print as "inf".
std::string format_real(Real v);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
void write_step_csv_header(std::ostream& os);
void write_step_csv_row(std::ostream& os, const StepLog& row);

void save_state(const std::filesystem::path& file, const ModelState& state);
ModelState load_state(const std::filesystem::path& file);

}  // namespace cohft
