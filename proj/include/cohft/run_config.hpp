#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cohft/datagen.hpp"
#include "cohft/srnet.hpp"
#include "cohft/train.hpp"

namespace cohft {

// Command settings as key=value text. Files allow blank lines and '#' comments.
// Model keys (d, g, heads, use_adain, ...) override the chosen preset.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "<text>");
  // "key=value"
  void assign(const std::string& assignment);
  // Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  Real get_real(const std::string& key) const;

  ModelConfig model() const;
  PhantomSpec phantom(std::uint64_t seed) const;
  TrainOptions train_options() const;
  LossConfig loss() const;

  // Effective settings, one sorted key=value per line, reloadable with load_file.
  std::string echo() const;
  void save_echo(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> model_overrides_;
};

}  // namespace cohft
