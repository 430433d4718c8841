#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lisa/losses.hpp"
#include "lisa/model.hpp"
#include "lisa/optim.hpp"
#include "lisa/synth_data.hpp"

namespace lisa {

/// Where training and evaluation samples come from. A non-empty directory
/// wins over procedural generation.
struct DataConfig {
  std::string train_dir;
  std::string eval_dir;
  SceneSpec scene;
  int train_count = 256;
  int eval_count = 256;
  /// Generated eval samples start at this index so they never repeat train ones.
  int eval_first_index = 1000000;
  /// Eval-only corruption schedule (the train scene stays as configured).
  std::vector<CorruptionRule> eval_corruptions;
};

struct AnchorConfig {
  std::string path;  ///< anchor file; empty selects the pseudo encoder
  std::vector<std::string> prompts;  ///< pseudo-encoder prompts; empty selects the default pool
};

struct TrainConfig {
  std::string run_id = "lisa";
  int epochs = 50;
  int batch_size = 64;
  int max_steps = 0;  ///< 0 means no cap beyond `epochs`
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  ModelConfig model;
  LossWeights loss;
  DataConfig data;
  AnchorConfig anchors;

  AdamWConfig optimizer() const;
  /// Loss weights after applying the ablation flags (no SDM means lambda_sep = 0).
  LossWeights effective_loss() const;
  void validate() const;
};

/// Parses a JSON document; missing keys keep their defaults, unknown keys are
/// rejected. Throws ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const TrainConfig& cfg);

/// Applies LISA_SEED when set. Throws ConfigError on an unparsable value.
void apply_env_overrides(TrainConfig& cfg);

}  // namespace lisa
