#include "lisa/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "lisa/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lisa {

namespace {

// Activations and im2col buffers run to tens of megabytes. glibc serves such
// blocks with fresh mmaps by default, so every step would pay for zeroing new
// pages; keeping them on the heap lets freed blocks be reused.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

Tensor gather_images(const std::vector<GazeSample>& samples, const std::size_t* idx,
                     std::size_t n) {
  const Tensor& first = samples[idx[0]].image;
  std::vector<int> shape{static_cast<int>(n)};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(shape);
  const std::size_t per = first.size();
  for (std::size_t b = 0; b < n; ++b) {
    const Tensor& img = samples[idx[b]].image;
    if (!img.same_shape(first)) throw ShapeError("samples in a batch differ in image shape");
    std::copy(img.data(), img.data() + per, out.data() + b * per);
  }
  return out;
}

std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

// Keeps the header and the rows up to `step` of an existing metrics file.
std::string metrics_prefix(const std::filesystem::path& path, std::uint64_t step) {
  std::ifstream is(path);
  std::string out = std::string(kMetricsHeader) + "\n";
  if (!is) return out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(line.substr(0, comma)) > step) break;
    out += line + "\n";
  }
  return out;
}

}  // namespace

std::string format_metrics_row(std::uint64_t step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(step), r.total, r.l1, r.ang, r.sep);
  return buf;
}

std::vector<GazeSample> load_train_set(const TrainConfig& cfg) {
  if (!cfg.data.train_dir.empty()) return read_dataset(cfg.data.train_dir).samples;
  return generate_dataset(cfg.data.scene, cfg.data.train_count, 0);
}

std::vector<GazeSample> load_eval_set(const TrainConfig& cfg) {
  if (!cfg.data.eval_dir.empty()) return read_dataset(cfg.data.eval_dir).samples;
  SceneSpec scene = cfg.data.scene;
  scene.corruptions = cfg.data.eval_corruptions;
  return generate_dataset(scene, cfg.data.eval_count, cfg.data.eval_first_index);
}

AnchorSet resolve_anchors(const TrainConfig& cfg) {
  if (!cfg.anchors.path.empty()) return load_anchors(cfg.anchors.path, cfg.model.embed_dim);
  const auto& prompts = cfg.anchors.prompts.empty() ? default_prompt_pool() : cfg.anchors.prompts;
  return build_pseudo_anchors(prompts, cfg.model.embed_dim);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& cfg, std::vector<GazeSample> samples,
                 const AnchorSet* anchors)
    : cfg_((cfg.validate(), cfg)),
      weights_(cfg.effective_loss()),
      samples_(std::move(samples)),
      anchors_(cfg.model.ablation.use_sdm ? anchors : nullptr),
      model_(cfg.model),
      optimizer_((model_.init(cfg.seed), model_.parameters()), cfg.optimizer()),
      data_rng_(splitmix64(cfg.seed ^ 0xda7a5eedULL)) {
  keep_large_blocks_on_heap();
  if (samples_.empty()) throw InvalidArgument("training set is empty");
  if (weights_.lambda_sep > 0.0 && anchors_ == nullptr) {
    throw InvalidArgument("separation loss enabled but no anchor set given");
  }
  if (anchors_ && anchors_->dim() != cfg.model.embed_dim) {
    throw ConfigError("anchor dimension " + std::to_string(anchors_->dim()) +
                      " does not match embed_dim " + std::to_string(cfg.model.embed_dim));
  }
  const auto b = static_cast<std::uint64_t>(cfg_.batch_size);
  batches_per_epoch_ = (samples_.size() + b - 1) / b;
  order_.resize(samples_.size());
}

std::uint64_t Trainer::total_steps() const {
  const std::uint64_t by_epochs = batches_per_epoch_ * static_cast<std::uint64_t>(cfg_.epochs);
  return cfg_.max_steps > 0 ? std::min<std::uint64_t>(by_epochs, cfg_.max_steps) : by_epochs;
}

void Trainer::start_epoch() {
  epoch_rng_state_ = data_rng_.state();
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[data_rng_.below(i)]);
  }
  cursor_ = 0;
  epoch_open_ = true;
}

StepStats Trainer::step() {
  if (!epoch_open_ || cursor_ == batches_per_epoch_) start_epoch();
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t lo = cursor_ * b;
  const std::size_t n = std::min(b, samples_.size() - lo);
  const std::size_t* idx = order_.data() + lo;

  Tensor images = gather_images(samples_, idx, n);
  std::vector<GazeAngles> truths(n);
  for (std::size_t i = 0; i < n; ++i) truths[i] = samples_[idx[i]].gaze;

  model_.zero_grad();
  ModelOutput out;
  try {
    out = model_.forward(images, Mode::train);
  } catch (const InvalidArgument& e) {
    // With finite inputs, a non-finite activation can only come from the
    // weights having blown up.
    if (!images.all_finite()) throw;
    throw DivergenceError("training diverged at step " + std::to_string(step_ + 1) +
                          ": non-finite activations (" + e.what() + ", lr=" +
                          std::to_string(cfg_.learning_rate) + ")");
  }
  BatchLoss loss = batch_loss(truths, out.angles, out.embedding, anchors_, weights_);
  const LossReport& r = loss.report;
  if (!std::isfinite(r.total)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "training diverged at step %llu: total=%g l1=%g ang=%g sep=%g (lr=%g)",
                  static_cast<unsigned long long>(step_ + 1), r.total, r.l1, r.ang, r.sep,
                  cfg_.learning_rate);
    throw DivergenceError(buf);
  }
  model_.backward(loss.d_angles, loss.d_embedding);

  StepStats s;
  s.alpha_grad = model_.fusion().alpha_logit.grad[0];
  if (s.alpha_grad != 0.0) ++alpha_live_steps_;
  optimizer_.step();
  ++cursor_;
  s.step = ++step_;
  s.report = r;
  s.degenerate_embeddings = loss.degenerate_embeddings;
  return s;
}

void Trainer::run(std::ostream* metrics, const std::function<void(const StepStats&)>& on_step) {
  while (!done()) {
    const StepStats s = step();
    if (metrics) *metrics << format_metrics_row(s.step, s.report) << '\n';
    if (on_step) on_step(s);
  }
  if (metrics) metrics->flush();
}

double Trainer::alpha_live_fraction() const {
  return step_ == 0 ? 0.0 : static_cast<double>(alpha_live_steps_) / static_cast<double>(step_);
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c;
  c.step = step_;
  c.optimizer_steps = optimizer_.steps();
  c.config_json = config_to_json(cfg_);
  // The state that regenerates the permutation used by the next step.
  const bool mid_epoch = epoch_open_ && cursor_ < batches_per_epoch_;
  c.rng_state = mid_epoch ? epoch_rng_state_ : data_rng_.state();
  auto params = model_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    c.parameters.push_back({params[k]->name, params[k]->value});
    c.first_moments.push_back({params[k]->name, optimizer_.first_moments()[k]});
    c.second_moments.push_back({params[k]->name, optimizer_.second_moments()[k]});
  }
  for (const Buffer& b : model_.buffers()) c.buffers.push_back({b.name, *b.value});
  return c;
}

void load_weights(LisaModel& model, const Checkpoint& ckpt) {
  auto params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ckpt.parameters.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const NamedTensor& t = ckpt.parameters[k];
    if (t.name != params[k]->name || !t.value.same_shape(params[k]->value)) {
      throw ConfigError("checkpoint parameter '" + t.name + "' " + t.value.shape_str() +
                        " does not match model parameter '" + params[k]->name + "' " +
                        params[k]->value.shape_str());
    }
    params[k]->value = t.value;
  }
  auto buffers = model.buffers();
  if (buffers.size() != ckpt.buffers.size()) throw ConfigError("checkpoint buffer count mismatch");
  for (std::size_t k = 0; k < buffers.size(); ++k) {
    const NamedTensor& t = ckpt.buffers[k];
    if (t.name != buffers[k].name || !t.value.same_shape(*buffers[k].value)) {
      throw ConfigError("checkpoint buffer '" + t.name + "' does not match the model");
    }
    *buffers[k].value = t.value;
  }
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_weights(model_, ckpt);
  const std::size_t n = model_.parameters().size();
  if (ckpt.first_moments.size() != n || ckpt.second_moments.size() != n) {
    throw ConfigError("checkpoint optimizer state does not match the model");
  }
  for (std::size_t k = 0; k < n; ++k) {
    optimizer_.first_moments()[k] = ckpt.first_moments[k].value;
    optimizer_.second_moments()[k] = ckpt.second_moments[k].value;
  }
  optimizer_.set_steps(ckpt.optimizer_steps);
  step_ = ckpt.step;
  alpha_live_steps_ = 0;
  data_rng_.set_state(ckpt.rng_state);
  epoch_open_ = false;
  const std::uint64_t pos = step_ % batches_per_epoch_;
  if (pos != 0) {
    start_epoch();
    cursor_ = pos;
  }
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<Prediction> predict(LisaModel& model, const std::vector<GazeSample>& samples,
                                int batch_size) {
  if (batch_size < 1) throw InvalidArgument("predict: batch_size must be positive");
  keep_large_blocks_on_heap();
  std::vector<Prediction> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(batch_size, samples.size() - lo);
    const Tensor angles = model.forward(gather_images(samples, idx.data() + lo, n), Mode::eval).angles;
    for (std::size_t i = 0; i < n; ++i) {
      const GazeSample& s = samples[lo + i];
      Prediction p;
      p.index = s.index;
      p.subject_id = s.subject_id;
      p.truth = s.gaze;
      p.pred = {angles.at(static_cast<int>(i), 0), angles.at(static_cast<int>(i), 1)};
      p.error_deg = angular_error_deg(p.truth, p.pred);
      p.attrs = s.attrs;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<GroupRow> group_metrics(const std::vector<Prediction>& preds,
                                    const std::vector<std::string>& groups) {
  auto summarize = [](const std::string& name, const std::vector<double>& errs) {
    GroupRow row;
    row.group = name;
    row.count = errs.size();
    if (!errs.empty()) row.report = summarize_errors(errs);
    return row;
  };
  std::vector<double> all;
  all.reserve(preds.size());
  for (const auto& p : preds) all.push_back(p.error_deg);
  std::vector<GroupRow> rows{summarize("overall", all)};
  for (const auto& g : groups) {
    std::vector<double> errs;
    for (const auto& p : preds) {
      if (std::find(p.attrs.begin(), p.attrs.end(), g) != p.attrs.end()) errs.push_back(p.error_deg);
    }
    rows.push_back(summarize(g, errs));
  }
  return rows;
}

std::string eval_table_csv(const std::vector<GroupRow>& rows) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& r : rows) {
    out += r.group + "," + std::to_string(r.count) + ",";
    out += r.report ? r.report->to_csv_row() : "null,null,null";
    out += "\n";
  }
  return out;
}

std::string predictions_csv(const std::vector<Prediction>& preds) {
  std::string out = std::string(kPredictionsHeader) + "\n";
  char buf[256];
  for (const auto& p : preds) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,", p.index, p.subject_id,
                  p.truth.yaw, p.truth.pitch, p.pred.yaw, p.pred.pitch, p.error_deg);
    out += buf + join(p.attrs, '|') + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v = {
      {"Ours", "full", {true, true, true}},
      {"w/o Spectral Injection Block", "no_spectral", {false, true, true}},
      {"w/o Spatial Saliency Gating", "no_gating", {true, false, true}},
      {"w/o SDM", "no_sdm", {true, true, false}},
  };
  return v;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<GazeSample>& train,
                                const std::vector<GazeSample>& eval, const AnchorSet& anchors,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir) {
  if (eval.empty()) throw InvalidArgument("ablation needs a non-empty eval set");
  if (out_dir) std::filesystem::create_directories(*out_dir);
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : ablation_variants()) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.model.ablation = v.flags;
      Trainer trainer(cfg, train, &anchors);
      std::ostringstream metrics;
      metrics << kMetricsHeader << '\n';
      trainer.run(&metrics);
      if (out_dir) {
        write_text(*out_dir / (cfg.run_id + "_" + v.slug + "_s" + std::to_string(seed) +
                               "_metrics.csv"),
                   metrics.str());
      }
      const auto preds = predict(trainer.model(), eval, cfg.batch_size);
      std::vector<double> errs;
      for (const auto& p : preds) errs.push_back(p.error_deg);
      rows.push_back({v.label, seed, summarize_errors(errs)});
    }
  }
  return rows;
}

std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
  std::string out = std::string(kAblationHeader) + "\n";
  for (const auto& r : rows) {
    out += r.label + "," + std::to_string(r.seed) + "," + std::to_string(r.report.count) + "," +
           r.report.to_csv_row() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainSummary run_training(const TrainConfig& cfg, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  const AnchorSet anchors = cfg.model.ablation.use_sdm ? resolve_anchors(cfg) : AnchorSet{};
  Trainer trainer(cfg, load_train_set(cfg), cfg.model.ablation.use_sdm ? &anchors : nullptr);

  TrainSummary summary;
  summary.metrics = out_dir / "metrics.csv";
  summary.checkpoint = out_dir / "checkpoint.lisa";
  std::string prefix = std::string(kMetricsHeader) + "\n";
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume);
    trainer.restore(ckpt);
    prefix = metrics_prefix(summary.metrics, ckpt.step);
  }
  write_text(out_dir / "config.json", config_to_json(cfg) + "\n");

  std::ofstream metrics(summary.metrics, std::ios::binary);
  metrics << prefix;
  const std::uint64_t every = std::max<std::uint64_t>(1, trainer.total_steps() / 20);
  trainer.run(&metrics, [&](const StepStats& s) {
    if (log && (s.step % every == 0 || s.step == trainer.total_steps())) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %llu/%llu  total %.4f  ang %.3f deg  alpha %.4f\n",
                    static_cast<unsigned long long>(s.step),
                    static_cast<unsigned long long>(trainer.total_steps()), s.report.total,
                    s.report.ang, trainer.model().fusion().alpha());
      *log << buf << std::flush;
    }
  });
  if (!metrics) throw std::runtime_error("cannot write " + summary.metrics.string());
  metrics.close();

  save_checkpoint(trainer.checkpoint(), summary.checkpoint);
  const auto preds = predict(trainer.model(), trainer.samples(), cfg.batch_size);
  write_text(out_dir / "train_predictions.csv", predictions_csv(preds));
  std::vector<double> errs;
  for (const auto& p : preds) errs.push_back(p.error_deg);
  summary.train_report = summarize_errors(errs);
  summary.steps = trainer.steps_taken();
  summary.alpha_live_fraction = trainer.alpha_live_fraction();
  return summary;
}

}  // namespace lisa
