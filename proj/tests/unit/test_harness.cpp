#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lisa/errors.hpp"
#include "lisa/harness.hpp"

namespace lisa {
namespace fs = std::filesystem;
namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.run_id = "tiny";
  c.epochs = 3;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.seed = 5;
  c.model.backbone.stage_channels = {4, 6, 8};
  c.model.backbone.detail_stage_index = 1;
  c.model.backbone.guide_stage_index = 2;
  c.model.backbone.aligned_channels = 6;
  c.model.head.mlp_hidden = {12};
  c.model.embed_dim = 8;
  c.data.scene.height = 16;
  c.data.scene.width = 16;
  c.data.scene.seed = 3;
  c.data.train_count = 10;
  c.data.eval_count = 12;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lisa_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> metric_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::vector<double> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::string run_metrics(const TrainConfig& cfg, const AnchorSet& anchors) {
  Trainer t(cfg, load_train_set(cfg), &anchors);
  std::ostringstream os;
  t.run(&os);
  return os.str();
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsFollowTrainingRecipe) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.model.fusion.gamma, 0.25);
  EXPECT_EQ(c.model.fusion.epsilon, 0.1);
  EXPECT_EQ(c.model.backbone.aligned_channels, 64);
  EXPECT_EQ(c.model.embed_dim, 64);
  EXPECT_EQ(c.loss.lambda_sep, 0.1);
  EXPECT_EQ(c.loss.lambda_ang, 1.0);
  EXPECT_EQ(c.optimizer().learning_rate, 1e-4);
  EXPECT_EQ(c.optimizer().weight_decay, 5e-4);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesNestedOverrides) {
  const TrainConfig c = parse_config(R"({
    "run_id": "x", "epochs": 7, "batch_size": 8, "learning_rate": 0.01, "seed": 11,
    "model": {"fusion": {"gamma": 0.5, "mask_shape": "rectangular"},
              "backbone": {"aligned_channels": 16}, "head": {"mlp_hidden": [32]}},
    "loss": {"lambda_sep": 0.3},
    "ablation": {"use_sdm": false},
    "data": {"train_count": 5, "scene": {"height": 32, "width": 32,
             "corruptions": [{"tag": "noise", "severity": 0.4, "probability": 0.2}]},
             "eval_corruptions": [{"tag": "mask", "severity": 1.0, "probability": 1.0}]},
    "anchors": {"prompts": ["a", "b"]}
  })");
  EXPECT_EQ(c.run_id, "x");
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.model.fusion.gamma, 0.5);
  EXPECT_EQ(c.model.fusion.mask_shape, MaskShape::rectangular);
  EXPECT_EQ(c.model.backbone.aligned_channels, 16);
  EXPECT_EQ(c.model.head.mlp_hidden, std::vector<int>{32});
  EXPECT_EQ(c.loss.lambda_sep, 0.3);
  EXPECT_FALSE(c.model.ablation.use_sdm);
  EXPECT_EQ(c.effective_loss().lambda_sep, 0.0);
  EXPECT_EQ(c.data.scene.height, 32);
  ASSERT_EQ(c.data.scene.corruptions.size(), 1u);
  EXPECT_EQ(c.data.scene.corruptions[0].tag, "noise");
  ASSERT_EQ(c.data.eval_corruptions.size(), 1u);
  EXPECT_EQ(c.anchors.prompts, (std::vector<std::string>{"a", "b"}));
}

TEST(Config, RejectsUnknownKeysBadTypesAndInvalidValues) {
  EXPECT_THROW(parse_config(R"({"epochz": 3})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"fusion": {"gama": 0.3}}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"epochs": "three"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"epochs": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"learning_rate": -1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"fusion": {"gamma": 1.5}}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"head": {"pool": "max"}}})"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c = tiny_config();
  c.data.eval_corruptions = {{"bright", 0.5, 0.5}};
  c.model.ablation.use_saliency_gating = false;
  const std::string j = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(j)), j);
}

TEST(Config, SeedFromEnvironment) {
  TrainConfig c;
  ::setenv("LISA_SEED", "1234", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.seed, 1234u);
  ::setenv("LISA_SEED", "12x", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  ::unsetenv("LISA_SEED");
  apply_env_overrides(c);
  EXPECT_EQ(c.seed, 1234u);
}

// ------------------------------------------------------------ checkpoint

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.step = 17;
  c.optimizer_steps = 17;
  c.config_json = R"({"a":1})";
  c.rng_state = "state";
  Tensor t({2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * i - 0.25;
  c.parameters = {{"w", t}, {"b", Tensor({3}, 1.5)}};
  c.first_moments = c.parameters;
  c.second_moments = c.parameters;
  c.buffers = {{"bn.running_mean", Tensor({3}, -2.0)}};
  return c;
}

TEST(CheckpointFormat, RoundTripIsExact) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(d.step, 17u);
  EXPECT_EQ(d.config_json, c.config_json);
  EXPECT_EQ(d.rng_state, "state");
  ASSERT_EQ(d.parameters.size(), 2u);
  EXPECT_EQ(d.parameters[0].name, "w");
  EXPECT_EQ(d.parameters[0].value.shape(), (std::vector<int>{2, 3}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(d.parameters[0].value[i], c.parameters[0].value[i]);
  EXPECT_EQ(encode_checkpoint(d), bytes);
}

TEST(CheckpointFormat, MalformedInputsReportOffsets) {
  const auto good = encode_checkpoint(sample_checkpoint());
  auto expect_offset = [](std::vector<std::uint8_t> b, std::size_t off) {
    try {
      decode_checkpoint(b);
      ADD_FAILURE() << "no error";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.position(), off) << e.what();
    }
  };
  auto bad = good;
  bad[2] = 'x';
  expect_offset(bad, 2);
  bad = good;
  bad[10] = 9;
  expect_offset(bad, 10);
  auto extra = good;
  extra.push_back(0);
  expect_offset(extra, good.size());
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(good.begin(), good.end() - 3)), ParseError);
}

// --------------------------------------------------------------- trainer

TEST(Trainer, RejectsEmptyDataAndMissingAnchors) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  EXPECT_THROW(Trainer(c, {}, &anchors), InvalidArgument);
  EXPECT_THROW(Trainer(c, load_train_set(c), nullptr), InvalidArgument);
  TrainConfig wrong = c;
  wrong.model.embed_dim = 9;
  EXPECT_THROW(Trainer(wrong, load_train_set(wrong), &anchors), ConfigError);
}

TEST(Trainer, StepCountsFollowEpochsAndCap) {
  TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  EXPECT_EQ(t.batches_per_epoch(), 3u);  // 10 samples in batches of 4
  EXPECT_EQ(t.total_steps(), 9u);
  c.max_steps = 4;
  Trainer capped(c, load_train_set(c), &anchors);
  EXPECT_EQ(capped.total_steps(), 4u);
}

TEST(Trainer, SameSeedGivesIdenticalMetricBytes) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  const std::string a = run_metrics(c, anchors), b = run_metrics(c, anchors);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  TrainConfig other = c;
  other.seed = 6;
  EXPECT_NE(run_metrics(other, anchors), a);
}

TEST(Trainer, ZeroLearningRateLeavesParametersBitIdentical) {
  TrainConfig c = tiny_config();
  c.learning_rate = 0.0;
  c.epochs = 1;
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  std::vector<Tensor> before;
  for (Param* p : t.model().parameters()) before.push_back(p->value);
  t.run(nullptr);
  EXPECT_EQ(t.steps_taken(), t.batches_per_epoch());
  const auto after = t.model().parameters();
  for (std::size_t k = 0; k < after.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i) ASSERT_EQ(after[k]->value[i], before[k][i]) << after[k]->name;
}

TEST(Trainer, LossReportRecomposesEveryStep) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  const LossWeights w = c.effective_loss();
  t.run(nullptr, [&](const StepStats& s) {
    const LossReport& r = s.report;
    EXPECT_NEAR(r.total, r.l1 + w.lambda_ang * r.ang + w.lambda_sep * r.sep, 1e-6);
    EXPECT_GE(r.sep, 0.0);
    EXPECT_GT(r.sep, 0.0);
  });
}

TEST(Trainer, AlphaReceivesGradientOnAlmostEveryStep) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  double before = t.model().fusion().alpha_logit.value[0];
  t.run(nullptr);
  EXPECT_GE(t.alpha_live_fraction(), 0.95);
  EXPECT_NE(t.model().fusion().alpha_logit.value[0], before);
}

TEST(Trainer, WithoutSdmAnchorsAreNeverRead) {
  TrainConfig c = tiny_config();
  c.model.ablation.use_sdm = false;
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  std::ostringstream os;
  t.run(&os);
  EXPECT_EQ(anchors.access_count(), 0u);
  for (const auto& row : metric_rows(std::string(kMetricsHeader) + "\n" + os.str())) EXPECT_EQ(row[4], 0.0);
  Trainer none(c, load_train_set(c), nullptr);
  EXPECT_NO_THROW(none.step());
}

TEST(Trainer, AblationSwitchesReachTheModel) {
  TrainConfig c = tiny_config();
  c.model.ablation.use_spectral_injection = false;
  c.model.ablation.use_saliency_gating = false;
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  EXPECT_FALSE(t.model().fusion().spectral_injection);
  EXPECT_FALSE(t.model().fusion().saliency_gating);
  const StepStats s = t.step();
  EXPECT_EQ(s.alpha_grad, 0.0);
}

TEST(Trainer, DivergenceIsReported) {
  TrainConfig c = tiny_config();
  c.learning_rate = 1e300;
  const AnchorSet anchors = resolve_anchors(c);
  Trainer t(c, load_train_set(c), &anchors);
  try {
    for (int i = 0; i < 9; ++i) t.step();
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos);
  }
}

TEST(Trainer, CheckpointResumeMatchesUninterruptedRun) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  for (std::uint64_t k : {1u, 3u, 4u}) {  // mid-epoch, epoch boundary, next epoch
    Trainer full(c, load_train_set(c), &anchors);
    for (std::uint64_t i = 0; i < k; ++i) full.step();
    const auto bytes = encode_checkpoint(full.checkpoint());
    const StepStats ref = full.step();

    Trainer resumed(c, load_train_set(c), &anchors);
    resumed.restore(decode_checkpoint(bytes));
    EXPECT_EQ(resumed.steps_taken(), k);
    const StepStats got = resumed.step();
    EXPECT_EQ(got.step, ref.step);
    EXPECT_NEAR(got.report.total, ref.report.total, 1e-6);
    EXPECT_NEAR(got.report.l1, ref.report.l1, 1e-6);
    EXPECT_NEAR(got.report.ang, ref.report.ang, 1e-6);
    EXPECT_NEAR(got.report.sep, ref.report.sep, 1e-6);
  }
}

TEST(Trainer, RestoreRejectsMismatchedModel) {
  const TrainConfig c = tiny_config();
  const AnchorSet anchors = resolve_anchors(c);
  Trainer a(c, load_train_set(c), &anchors);
  Checkpoint ck = a.checkpoint();
  ck.parameters[0].value = Tensor({1});
  Trainer b(c, load_train_set(c), &anchors);
  EXPECT_THROW(b.restore(ck), ConfigError);
}

TEST(RunTraining, WritesArtifactsAndResumesSeamlessly) {
  TrainConfig c = tiny_config();
  const fs::path full = fresh_dir("full"), part = fresh_dir("part");
  const TrainSummary s = run_training(c, full);
  EXPECT_EQ(s.steps, 9u);
  for (const char* f : {"metrics.csv", "config.json", "checkpoint.lisa", "train_predictions.csv"}) {
    EXPECT_TRUE(fs::exists(full / f)) << f;
  }
  const std::string metrics = slurp(full / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, kMetricsHeader.size()), kMetricsHeader);
  EXPECT_EQ(metric_rows(metrics).size(), 9u);
  EXPECT_EQ(parse_config(slurp(full / "config.json")).seed, c.seed);

  TrainConfig first = c;
  first.max_steps = 5;
  run_training(first, part);
  run_training(c, part, part / "checkpoint.lisa");
  const auto a = metric_rows(metrics), b = metric_rows(slurp(part / "metrics.csv"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_NEAR(a[i][j], b[i][j], 1e-6) << i;

  // The stored weights reproduce the training-set predictions.
  LisaModel model(c.model);
  load_weights(model, load_checkpoint(full / "checkpoint.lisa"));
  const auto preds = predict(model, load_train_set(c), c.batch_size);
  EXPECT_EQ(predictions_csv(preds), slurp(full / "train_predictions.csv"));
  fs::remove_all(full);
  fs::remove_all(part);
}

// ------------------------------------------------------------ evaluation

std::vector<Prediction> fake_predictions() {
  std::vector<Prediction> p;
  Rng rng(9);
  const std::vector<std::vector<std::string>> tags = {{"clean"}, {"mask"}, {"mask", "noise"}, {"noise"}};
  for (int i = 0; i < 40; ++i) {
    Prediction q;
    q.index = i;
    q.subject_id = 1 + i % 5;
    q.truth = {rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)};
    q.pred = {q.truth.yaw + 0.2 * rng.normal(), q.truth.pitch + 0.1 * rng.normal()};
    q.error_deg = angular_error_deg(q.truth, q.pred);
    q.attrs = tags[i % 4];
    p.push_back(q);
  }
  return p;
}

TEST(GroupMetrics, AllCleanMatchesOverall) {
  auto preds = fake_predictions();
  for (auto& p : preds) p.attrs = {"clean"};
  const auto rows = group_metrics(preds, {"clean"});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].group, "overall");
  EXPECT_EQ(rows[0].count, rows[1].count);
  EXPECT_EQ(rows[0].report->mean_deg, rows[1].report->mean_deg);
  EXPECT_EQ(rows[0].report->std_deg, rows[1].report->std_deg);
  EXPECT_EQ(rows[0].report->acc_lt_8deg, rows[1].report->acc_lt_8deg);
}

TEST(GroupMetrics, DuplicationInvariance) {
  const auto preds = fake_predictions();
  auto doubled = preds;
  doubled.insert(doubled.end(), preds.begin(), preds.end());
  const auto a = group_metrics(preds, {"mask", "noise"});
  const auto b = group_metrics(doubled, {"mask", "noise"});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(2 * a[i].count, b[i].count);
    EXPECT_NEAR(a[i].report->mean_deg, b[i].report->mean_deg, 1e-12);
    EXPECT_NEAR(a[i].report->std_deg, b[i].report->std_deg, 1e-12);
    EXPECT_EQ(a[i].report->acc_lt_8deg, b[i].report->acc_lt_8deg);
  }
}

TEST(GroupMetrics, DisjointGroupsRecombineToOverall) {
  const auto preds = fake_predictions();
  std::vector<Prediction> relabeled = preds;
  for (auto& p : relabeled) {
    if (p.attrs.size() > 1) p.attrs = {"occluder"};
  }
  const auto rows = group_metrics(relabeled, {"clean", "mask", "noise", "occluder"});
  double weighted = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    weighted += rows[i].report->mean_deg * rows[i].count;
    n += rows[i].count;
  }
  EXPECT_EQ(n, rows[0].count);
  EXPECT_NEAR(weighted / n, rows[0].report->mean_deg, 1e-6);
}

TEST(GroupMetrics, MembershipAndEmptyGroups) {
  const auto rows = group_metrics(fake_predictions(), {"mask", "noise", "glasses"});
  EXPECT_EQ(rows[0].count, 40u);
  EXPECT_EQ(rows[1].count, 20u);
  EXPECT_EQ(rows[2].count, 20u);
  EXPECT_EQ(rows[3].count, 0u);
  EXPECT_FALSE(rows[3].report.has_value());
  const std::string csv = eval_table_csv(rows);
  EXPECT_EQ(csv.substr(0, kEvalHeader.size()), kEvalHeader);
  EXPECT_NE(csv.find("\nglasses,0,null,null,null\n"), std::string::npos) << csv;
}

TEST(PredictionsCsv, Layout) {
  const auto preds = fake_predictions();
  const std::string csv = predictions_csv(preds);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kPredictionsHeader);
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 4), "0,1,");
  std::getline(is, line);
  EXPECT_NE(line.find(",mask"), std::string::npos);
  std::getline(is, line);
  EXPECT_NE(line.find(",mask|noise"), std::string::npos);
}

TEST(EvalSet, CorruptionsAppliedAndDisjointFromTrain) {
  TrainConfig c = tiny_config();
  c.data.eval_corruptions = {{"mask", 1.0, 1.0}};
  const auto train = load_train_set(c);
  const auto eval = load_eval_set(c);
  EXPECT_EQ(eval.size(), 12u);
  for (const auto& s : eval) {
    EXPECT_GE(s.index, c.data.eval_first_index);
    EXPECT_EQ(s.attrs, std::vector<std::string>{"mask"});
  }
  for (const auto& s : train) EXPECT_EQ(s.attrs, std::vector<std::string>{"clean"});
}

// -------------------------------------------------------------- ablation

TEST(Ablation, FourVariantsWithFixedLabels) {
  const auto& v = ablation_variants();
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].label, "Ours");
  EXPECT_EQ(v[1].label, "w/o Spectral Injection Block");
  EXPECT_EQ(v[2].label, "w/o Spatial Saliency Gating");
  EXPECT_EQ(v[3].label, "w/o SDM");
  EXPECT_TRUE(v[0].flags.use_spectral_injection && v[0].flags.use_saliency_gating && v[0].flags.use_sdm);
  EXPECT_FALSE(v[1].flags.use_spectral_injection);
  EXPECT_FALSE(v[2].flags.use_saliency_gating);
  EXPECT_FALSE(v[3].flags.use_sdm);
}

TEST(Ablation, RunsEveryVariantAndZeroesSeparationWithoutSdm) {
  TrainConfig c = tiny_config();
  c.epochs = 1;
  const auto train = load_train_set(c), eval = load_eval_set(c);
  const AnchorSet anchors = resolve_anchors(c);
  const fs::path dir = fresh_dir("ablate");
  const auto rows = ablate(c, train, eval, anchors, {1, 2}, dir);
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) EXPECT_EQ(r.report.count, eval.size());
  for (std::uint64_t seed : {1, 2}) {
    const auto sep = metric_rows(slurp(dir / ("tiny_no_sdm_s" + std::to_string(seed) + "_metrics.csv")));
    ASSERT_FALSE(sep.empty());
    for (const auto& row : sep) EXPECT_EQ(row[4], 0.0);
    const auto full = metric_rows(slurp(dir / ("tiny_full_s" + std::to_string(seed) + "_metrics.csv")));
    EXPECT_GT(full[0][4], 0.0);
  }
  const std::string table = ablation_table_csv(rows);
  EXPECT_EQ(table.substr(0, kAblationHeader.size()), kAblationHeader);
  EXPECT_NE(table.find("\nw/o Spatial Saliency Gating,2,"), std::string::npos) << table;
  fs::remove_all(dir);
}

}  // namespace
}  // namespace lisa
