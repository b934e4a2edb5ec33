#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cohft/tensor.hpp"

namespace cohft {

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::size_t side = 96;  // high-resolution canvas side
  std::size_t min_ellipses = 4;
  std::size_t max_ellipses = 9;
  std::size_t labels = 6;  // distinct tissue classes, background included
  Real blur_sigma = 1.0;
  Real noise_sigma = 0.0;

  void validate() const;
};

struct Phantom {
  Tensor t1, t2;  // [side, side, 1] each, in [0, 1]
};

// Shared ellipse geometry, one label-indexed lookup table per modality, blur, noise, clamp.
Phantom synth_phantom(const PhantomSpec& spec);

// Bicubic downsampling by r.
Tensor degrade(const Tensor& hr, std::size_t r);

struct TrainingPair {
  Tensor t2_lr;       // I_in  [h,w,1]
  Tensor t2_lr_grad;  // R_s   [h,w,1]
  Tensor t1_hr_grad;  // R_c   [rh,rw,1]
  Tensor t2_hr;       // I_gt  [rh,rw,1]

  bool operator==(const TrainingPair& other) const = default;
};

TrainingPair make_pair(const PhantomSpec& spec, std::size_t r);

// Dataset directory: <id>.<field>.chft per sample plus manifest.txt with one id per line.
void save_pair(const std::filesystem::path& dir, const std::string& id, const TrainingPair& pair);
TrainingPair load_pair(const std::filesystem::path& dir, const std::string& id);

void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::filesystem::path& dir);

struct Dataset {
  std::vector<std::string> ids;
  std::vector<TrainingPair> pairs;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace cohft
