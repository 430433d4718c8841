#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lisa/checkpoint.hpp"
#include "lisa/config.hpp"
#include "lisa/geometry.hpp"
#include "lisa/losses.hpp"
#include "lisa/model.hpp"
#include "lisa/optim.hpp"
#include "lisa/sdm.hpp"
#include "lisa/synth_data.hpp"

namespace lisa {

inline constexpr std::string_view kMetricsHeader = "step,total,l1,ang,sep";
inline constexpr std::string_view kEvalHeader = "group,count,mean_deg,std_deg,acc_lt_8deg";
inline constexpr std::string_view kPredictionsHeader =
    "index,subject_id,yaw,pitch,pred_yaw,pred_pitch,error_deg,attrs";
inline constexpr std::string_view kAblationHeader =
    "variant,seed,count,mean_deg,std_deg,acc_lt_8deg";

/// One metrics row; numbers use %.17g so equal runs give equal bytes.
std::string format_metrics_row(std::uint64_t step, const LossReport& r);

/// Training samples: the configured directory or procedurally generated.
std::vector<GazeSample> load_train_set(const TrainConfig& cfg);
/// Evaluation samples, with the eval corruption schedule applied to
/// generated data.
std::vector<GazeSample> load_eval_set(const TrainConfig& cfg);
/// Anchor file when configured, otherwise pseudo-encoded prompts.
AnchorSet resolve_anchors(const TrainConfig& cfg);

struct StepStats {
  std::uint64_t step = 0;  ///< 1-based index of the step just taken
  LossReport report;
  double alpha_grad = 0.0;  ///< dL/d alpha_logit before the update
  std::size_t degenerate_embeddings = 0;
};

/// Mini-batch AdamW training. Each epoch visits the samples in a permutation
/// drawn from a seeded generator, so a resumed run sees the same batches.
class Trainer {
 public:
  /// `anchors` must outlive the trainer; it is never read when the SDM is
  /// disabled. Throws InvalidArgument on an empty dataset.
  Trainer(const TrainConfig& cfg, std::vector<GazeSample> samples, const AnchorSet* anchors);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One optimizer step. Throws DivergenceError if the loss is not finite.
  StepStats step();
  /// Steps until `total_steps()`; writes one metrics row per step when
  /// `metrics` is given (the header is the caller's business).
  void run(std::ostream* metrics, const std::function<void(const StepStats&)>& on_step = {});

  std::uint64_t steps_taken() const { return step_; }
  std::uint64_t batches_per_epoch() const { return batches_per_epoch_; }
  std::uint64_t total_steps() const;
  bool done() const { return step_ >= total_steps(); }

  Checkpoint checkpoint();
  /// Throws ConfigError when names or shapes disagree with this model.
  void restore(const Checkpoint& ckpt);

  /// Fraction of steps so far in which alpha_logit got a nonzero gradient.
  double alpha_live_fraction() const;

  LisaModel& model() { return model_; }
  AdamW& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<GazeSample>& samples() const { return samples_; }

 private:
  void start_epoch();

  TrainConfig cfg_;
  LossWeights weights_;
  std::vector<GazeSample> samples_;
  const AnchorSet* anchors_;
  LisaModel model_;
  AdamW optimizer_;
  Rng data_rng_;
  std::string epoch_rng_state_;
  std::vector<std::size_t> order_;
  std::uint64_t batches_per_epoch_ = 0;
  std::uint64_t cursor_ = 0;
  bool epoch_open_ = false;
  std::uint64_t step_ = 0;
  std::uint64_t alpha_live_steps_ = 0;
};

/// Copies the named parameters and buffers of a checkpoint into `model`.
void load_weights(LisaModel& model, const Checkpoint& ckpt);

struct Prediction {
  int index = 0;
  int subject_id = 0;
  GazeAngles truth;
  GazeAngles pred;
  double error_deg = 0.0;
  std::vector<std::string> attrs;
};

/// Eval-mode forward pass over `samples` in batches.
std::vector<Prediction> predict(LisaModel& model, const std::vector<GazeSample>& samples,
                                int batch_size);

struct GroupRow {
  std::string group;
  std::size_t count = 0;
  std::optional<MetricReport> report;  ///< empty for a group with no samples
};

/// "overall" first, then one row per requested tag in the given order. A
/// sample belongs to every group whose tag it carries.
std::vector<GroupRow> group_metrics(const std::vector<Prediction>& preds,
                                    const std::vector<std::string>& groups);
std::string eval_table_csv(const std::vector<GroupRow>& rows);
std::string predictions_csv(const std::vector<Prediction>& preds);

struct AblationVariant {
  std::string label;
  std::string slug;
  AblationFlags flags;
};

/// Full model followed by the three single-module ablations.
const std::vector<AblationVariant>& ablation_variants();

struct AblationRow {
  std::string label;
  std::uint64_t seed = 0;
  MetricReport report;
};

/// Trains and evaluates every variant for every seed on shared data. When
/// `out_dir` is set each run writes `{run_id}_{slug}_s{seed}_metrics.csv` there.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<GazeSample>& train,
                                const std::vector<GazeSample>& eval, const AnchorSet& anchors,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir = {});
std::string ablation_table_csv(const std::vector<AblationRow>& rows);

struct TrainSummary {
  std::uint64_t steps = 0;
  MetricReport train_report;
  double alpha_live_fraction = 0.0;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};

/// End-to-end `train`: writes metrics.csv, config.json, checkpoint.lisa and
/// train_predictions.csv to `out_dir`. With `resume`, training continues from
/// that checkpoint and metrics rows are appended.
TrainSummary run_training(const TrainConfig& cfg, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume = {},
                          std::ostream* log = nullptr);

}  // namespace lisa
