#include "lisa/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lisa/errors.hpp"

namespace lisa {

using nlohmann::json;

namespace {

// Reads keys from one JSON object, remembering which were consumed so that
// typos surface as errors instead of silently falling back to defaults.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

MaskShape parse_mask_shape(const std::string& s) {
  if (s == "radial") return MaskShape::radial;
  if (s == "rectangular") return MaskShape::rectangular;
  throw ConfigError("model.fusion.mask_shape must be 'radial' or 'rectangular'");
}

std::vector<CorruptionRule> read_rules(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<CorruptionRule> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Reader r(j[i], where + "[" + std::to_string(i) + "]");
    CorruptionRule rule;
    r.get("tag", rule.tag);
    r.get("severity", rule.severity);
    r.get("probability", rule.probability);
    r.finish();
    out.push_back(rule);
  }
  return out;
}

json rules_json(const std::vector<CorruptionRule>& rules) {
  json a = json::array();
  for (const auto& r : rules) {
    a.push_back({{"tag", r.tag}, {"severity", r.severity}, {"probability", r.probability}});
  }
  return a;
}

void read_model(const json& j, ModelConfig& m) {
  Reader r(j, "model");
  if (const json* b = r.child("backbone")) {
    Reader rb(*b, "model.backbone");
    rb.get("in_channels", m.backbone.in_channels);
    rb.get("stage_channels", m.backbone.stage_channels);
    rb.get("detail_stage_index", m.backbone.detail_stage_index);
    rb.get("guide_stage_index", m.backbone.guide_stage_index);
    rb.get("aligned_channels", m.backbone.aligned_channels);
    rb.finish();
  }
  if (const json* f = r.child("fusion")) {
    Reader rf(*f, "model.fusion");
    rf.get("alpha_logit", m.fusion.alpha_logit);
    rf.get("gamma", m.fusion.gamma);
    rf.get("epsilon", m.fusion.epsilon);
    rf.get("gate_hidden_channels", m.fusion.gate_hidden_channels);
    std::string shape = m.fusion.mask_shape == MaskShape::radial ? "radial" : "rectangular";
    rf.get("mask_shape", shape);
    m.fusion.mask_shape = parse_mask_shape(shape);
    rf.finish();
  }
  if (const json* h = r.child("head")) {
    Reader rh(*h, "model.head");
    rh.get("mlp_hidden", m.head.mlp_hidden);
    std::string pool = "mean";
    rh.get("pool", pool);
    if (pool != "mean") throw ConfigError("model.head.pool must be 'mean'");
    rh.finish();
  }
  r.get("embed_dim", m.embed_dim);
  r.finish();
}

}  // namespace

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig o;
  o.learning_rate = learning_rate;
  o.weight_decay = weight_decay;
  return o;
}

LossWeights TrainConfig::effective_loss() const {
  LossWeights w = loss;
  if (!model.ablation.use_sdm) w.lambda_sep = 0.0;
  return w;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite value >= 0");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("run_id must be a non-empty file-name-safe string");
  }
  try {
    model.validate();
    loss.validate();
    data.scene.validate();
    SceneSpec eval_scene = data.scene;
    eval_scene.corruptions = data.eval_corruptions;
    eval_scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (data.train_count < 1 || data.eval_count < 0) {
    throw ConfigError("data.train_count must be positive and data.eval_count >= 0");
  }
}

TrainConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  Reader r(j, "config");
  r.get("run_id", c.run_id);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("max_steps", c.max_steps);
  r.get("learning_rate", c.learning_rate);
  r.get("weight_decay", c.weight_decay);
  r.get("seed", c.seed);
  if (const json* m = r.child("model")) read_model(*m, c.model);
  if (const json* l = r.child("loss")) {
    Reader rl(*l, "loss");
    rl.get("lambda_sep", c.loss.lambda_sep);
    rl.get("lambda_ang", c.loss.lambda_ang);
    rl.get("smooth_l1_beta", c.loss.smooth_l1_beta);
    rl.finish();
  }
  if (const json* a = r.child("ablation")) {
    Reader ra(*a, "ablation");
    ra.get("use_spectral_injection", c.model.ablation.use_spectral_injection);
    ra.get("use_saliency_gating", c.model.ablation.use_saliency_gating);
    ra.get("use_sdm", c.model.ablation.use_sdm);
    ra.finish();
  }
  if (const json* d = r.child("data")) {
    Reader rd(*d, "data");
    rd.get("train_dir", c.data.train_dir);
    rd.get("eval_dir", c.data.eval_dir);
    rd.get("train_count", c.data.train_count);
    rd.get("eval_count", c.data.eval_count);
    rd.get("eval_first_index", c.data.eval_first_index);
    if (const json* e = rd.child("eval_corruptions")) {
      c.data.eval_corruptions = read_rules(*e, rd.path("eval_corruptions"));
    }
    if (const json* s = rd.child("scene")) {
      Reader rs(*s, "data.scene");
      SceneSpec& sc = c.data.scene;
      rs.get("yaw_min", sc.yaw_min);
      rs.get("yaw_max", sc.yaw_max);
      rs.get("pitch_min", sc.pitch_min);
      rs.get("pitch_max", sc.pitch_max);
      rs.get("height", sc.height);
      rs.get("width", sc.width);
      rs.get("n_subjects", sc.n_subjects);
      rs.get("seed", sc.seed);
      if (const json* cr = rs.child("corruptions")) {
        sc.corruptions = read_rules(*cr, rs.path("corruptions"));
      }
      rs.finish();
    }
    rd.finish();
  }
  if (const json* a = r.child("anchors")) {
    Reader ra(*a, "anchors");
    ra.get("path", c.anchors.path);
    ra.get("prompts", c.anchors.prompts);
    ra.finish();
  }
  r.finish();
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  const SceneSpec& sc = c.data.scene;
  json j = {
      {"run_id", c.run_id},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"max_steps", c.max_steps},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"seed", c.seed},
      {"model",
       {{"backbone",
         {{"in_channels", m.backbone.in_channels},
          {"stage_channels", m.backbone.stage_channels},
          {"detail_stage_index", m.backbone.detail_stage_index},
          {"guide_stage_index", m.backbone.guide_stage_index},
          {"aligned_channels", m.backbone.aligned_channels}}},
        {"fusion",
         {{"alpha_logit", m.fusion.alpha_logit},
          {"gamma", m.fusion.gamma},
          {"epsilon", m.fusion.epsilon},
          {"gate_hidden_channels", m.fusion.gate_hidden_channels},
          {"mask_shape", m.fusion.mask_shape == MaskShape::radial ? "radial" : "rectangular"}}},
        {"head", {{"pool", "mean"}, {"mlp_hidden", m.head.mlp_hidden}}},
        {"embed_dim", m.embed_dim}}},
      {"loss",
       {{"lambda_sep", c.loss.lambda_sep},
        {"lambda_ang", c.loss.lambda_ang},
        {"smooth_l1_beta", c.loss.smooth_l1_beta}}},
      {"ablation",
       {{"use_spectral_injection", m.ablation.use_spectral_injection},
        {"use_saliency_gating", m.ablation.use_saliency_gating},
        {"use_sdm", m.ablation.use_sdm}}},
      {"data",
       {{"train_dir", c.data.train_dir},
        {"eval_dir", c.data.eval_dir},
        {"train_count", c.data.train_count},
        {"eval_count", c.data.eval_count},
        {"eval_first_index", c.data.eval_first_index},
        {"eval_corruptions", rules_json(c.data.eval_corruptions)},
        {"scene",
         {{"yaw_min", sc.yaw_min},
          {"yaw_max", sc.yaw_max},
          {"pitch_min", sc.pitch_min},
          {"pitch_max", sc.pitch_max},
          {"height", sc.height},
          {"width", sc.width},
          {"n_subjects", sc.n_subjects},
          {"seed", sc.seed},
          {"corruptions", rules_json(sc.corruptions)}}}}},
      {"anchors", {{"path", c.anchors.path}, {"prompts", c.anchors.prompts}}},
  };
  return j.dump(2);
}

void apply_env_overrides(TrainConfig& cfg) {
  const char* s = std::getenv("LISA_SEED");
  if (!s || !*s) return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used, 0);
    if (used != std::string(s).size() || s[0] == '-') throw std::invalid_argument("seed");
    cfg.seed = v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("LISA_SEED is not a non-negative integer: '") + s + "'");
  }
}

}  // namespace lisa
