#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cohft/run_config.hpp"
#include "cohft/train.hpp"

// Subcommands of the command-line tool. Each writes its artifacts and the
// effective configuration (config.txt) into `out`.
namespace cohft::commands {

// Dataset of `samples` phantom pairs; ids sample_0000, sample_0001, ...
void gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// Initialization used by train, derived from the model settings and `seed`.
ModelState initial_state(const RunConfig& cfg);

// Trains on the dataset at key `data`. Writes model.chft after
// initialization and after every epoch, plus loss.csv.
void train(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// Model settings and weights of the checkpoint directory at key `checkpoint`.
ModelConfig checkpoint_model(const RunConfig& cfg);
ModelState checkpoint_state(const RunConfig& cfg);

// eval.csv over the dataset at key `data`; `predictor` replaces the checkpoint model when given.
std::vector<MetricRow> eval(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log,
                            const std::optional<Predictor>& predictor = std::nullopt);

// I_out.chft and R_out.chft from the files at keys `input` (I_in) and `guide` (R_c).
Prediction infer(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// Returns true when every check passes; the report goes to `log` and out/check.txt.
bool check(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace cohft::commands
