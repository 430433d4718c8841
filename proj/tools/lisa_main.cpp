// Command line front end: training, evaluation, ablation, plotting and the
// data / anchor preparation steps.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lisa/config.hpp"
#include "lisa/errors.hpp"
#include "lisa/fam_fusion.hpp"
#include "lisa/harness.hpp"
#include "lisa/plot.hpp"
#include "lisa/random.hpp"
#include "lisa/sdm.hpp"
#include "lisa/synth_data.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

lisa::TrainConfig config_or_default(const std::string& path) {
  lisa::TrainConfig cfg = path.empty() ? lisa::TrainConfig{} : lisa::load_config(path);
  lisa::apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

// "tag:severity:probability", severity and probability optional.
lisa::CorruptionRule parse_rule(const std::string& text) {
  lisa::CorruptionRule r;
  std::stringstream ss(text);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.empty() || parts.size() > 3) throw lisa::ConfigError("bad corruption rule '" + text + "'");
  r.tag = parts[0];
  r.severity = parts.size() > 1 ? std::stod(parts[1]) : 0.5;
  r.probability = parts.size() > 2 ? std::stod(parts[2]) : 1.0;
  return r;
}

lisa::AnchorSet anchors_from_dump(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw lisa::ParseError(std::string("encoder dump is not JSON: ") + e.what(), e.byte);
  }
  const auto prompts = j.at("prompts").get<std::vector<std::string>>();
  const auto rows = j.at("embeddings").get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw lisa::InvalidArgument("encoder dump has no embeddings");
  const int d = static_cast<int>(rows.front().size());
  lisa::Tensor e({static_cast<int>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d) {
      throw lisa::InvalidArgument("encoder dump rows differ in length");
    }
    for (int k = 0; k < d; ++k) e.at(static_cast<int>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return lisa::AnchorSet(std::move(e), prompts);
}

int cmd_train(const std::string& config, const std::string& out, const std::string& resume) {
  const lisa::TrainConfig cfg = config_or_default(config);
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const auto s = lisa::run_training(cfg, out, from, &std::cerr);
  std::printf("steps %llu  train mean %.3f deg  std %.3f  acc<8 %.3f  alpha-live %.3f\n",
              static_cast<unsigned long long>(s.steps), s.train_report.mean_deg,
              s.train_report.std_deg, s.train_report.acc_lt_8deg, s.alpha_live_fraction);
  std::printf("checkpoint %s\nmetrics %s\n", s.checkpoint.c_str(), s.metrics.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& group_by,
             const std::string& out, const std::string& preds_out) {
  const lisa::Checkpoint ckpt = lisa::load_checkpoint(ckpt_path);
  const lisa::TrainConfig cfg = lisa::parse_config(ckpt.config_json);
  lisa::LisaModel model(cfg.model);
  lisa::load_weights(model, ckpt);
  const auto samples =
      data.empty() ? lisa::load_eval_set(cfg) : lisa::read_dataset(data).samples;
  if (samples.empty()) throw lisa::InvalidArgument("evaluation set is empty");
  const auto preds = lisa::predict(model, samples, cfg.batch_size);

  std::vector<std::string> groups;
  if (group_by == "attrs") {
    groups = lisa::attribute_tags();
  } else if (group_by != "none") {
    throw lisa::ConfigError("--group-by must be 'attrs' or 'none'");
  }
  const std::string table = lisa::eval_table_csv(lisa::group_metrics(preds, groups));
  if (out.empty()) {
    std::cout << table;
  } else {
    write_file(out, table);
  }
  if (!preds_out.empty()) write_file(preds_out, lisa::predictions_csv(preds));
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& out,
               const std::vector<std::uint64_t>& seeds_in) {
  const lisa::TrainConfig cfg = config_or_default(config);
  const std::vector<std::uint64_t> seeds = seeds_in.empty() ? std::vector<std::uint64_t>{cfg.seed}
                                                            : seeds_in;
  const auto train = lisa::load_train_set(cfg);
  const auto eval = lisa::load_eval_set(cfg);
  const lisa::AnchorSet anchors = lisa::resolve_anchors(cfg);
  const auto rows = lisa::ablate(cfg, train, eval, anchors, seeds, fs::path(out));
  const std::string table = lisa::ablation_table_csv(rows);
  write_file(fs::path(out) / (cfg.run_id + "_ablation.csv"), table);
  std::cout << table;
  return 0;
}

int cmd_plot(const std::string& in, const std::string& out, std::string run_id) {
  if (run_id.empty()) run_id = fs::path(in).stem().string();
  const fs::path dir = out.empty() ? fs::path(in).parent_path() : fs::path(out);
  for (const auto& p : lisa::plot_csv(in, dir.empty() ? "." : dir, run_id)) {
    std::cout << p.string() << '\n';
  }
  return 0;
}

struct DataGenOptions {
  std::string spec_path;
  int count = 256, first_index = 0, n_subjects = 28, size = 64;
  std::uint64_t seed = 0;
  std::vector<std::string> rules;
};

// Flags given explicitly on the command line win over the --spec config.
int cmd_data_gen(const std::string& out, const DataGenOptions& o, const CLI::App& cmd) {
  lisa::SceneSpec spec;
  int count = o.count;
  if (!o.spec_path.empty()) {
    const lisa::TrainConfig cfg = lisa::load_config(o.spec_path);
    spec = cfg.data.scene;
    if (cmd.count("--count") == 0) count = cfg.data.train_count;
  }
  if (o.spec_path.empty() || cmd.count("--seed")) spec.seed = o.seed;
  if (o.spec_path.empty() || cmd.count("--subjects")) spec.n_subjects = o.n_subjects;
  if (o.spec_path.empty() || cmd.count("--size")) spec.height = spec.width = o.size;
  if (!o.rules.empty()) spec.corruptions.clear();
  for (const auto& r : o.rules) spec.corruptions.push_back(parse_rule(r));
  const int first_index = o.first_index;
  spec.validate();
  lisa::write_dataset(out, lisa::generate_dataset(spec, count, first_index));
  std::printf("wrote %d samples to %s\n", count, out.c_str());
  return 0;
}

// One prompt per non-empty line.
std::vector<std::string> read_prompt_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> prompts;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) prompts.push_back(line);
  }
  if (prompts.empty()) throw lisa::InvalidArgument(path.string() + " contains no prompts");
  return prompts;
}

int cmd_anchors_build(const std::string& out, bool pseudo, const std::string& dump, int dim,
                      std::vector<std::string> prompts, const std::string& prompt_file) {
  if (!prompt_file.empty()) {
    for (auto& p : read_prompt_file(prompt_file)) prompts.push_back(std::move(p));
  }
  if (pseudo == !dump.empty()) {
    throw lisa::ConfigError("anchors build needs exactly one of --pseudo or --encoder-dump");
  }
  const lisa::AnchorSet a =
      pseudo ? lisa::build_pseudo_anchors(prompts.empty() ? lisa::default_prompt_pool() : prompts, dim)
             : anchors_from_dump(dump);
  lisa::save_anchors(a, out);
  std::printf("wrote %d anchors of dimension %d to %s\n", a.count(), a.dim(), out.c_str());
  return 0;
}

// Per corruption: amplitude-spectrum stability and spatial distance between a
// clean face and its corrupted copy, averaged over `count` faces.
int cmd_diag_spectrum(const std::string& out, int count, std::uint64_t seed) {
  lisa::SceneSpec spec;
  spec.seed = seed;
  const auto faces = lisa::generate_dataset(spec, count);
  std::string csv = "corruption_name,severity,stability,spatial_distance\n";
  const char* tags[] = {"bright", "dark", "noise", "glasses", "mask", "occluder"};
  for (const char* tag : tags) {
    for (double sev : {0.25, 0.5, 1.0}) {
      lisa::Rng rng(lisa::splitmix64(seed + 17));
      double stab = 0.0, spat = 0.0;
      for (const auto& f : faces) {
        const auto c = lisa::corrupt(f, tag, sev, rng);
        stab += lisa::spectrum_stability(f.image, c.image);
        spat += lisa::spatial_distance(f.image, c.image);
      }
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%g,%.9g,%.9g\n", tag, sev, stab / count, spat / count);
      csv += buf;
    }
  }
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_file(out, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lisa: gaze estimation with spectral fusion and semantic disentanglement"};
  app.require_subcommand(1);

  std::string config, out, resume, ckpt, data, group_by = "attrs", preds_out, in, run_id, dump;
  std::vector<std::uint64_t> seeds;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "JSON config (defaults when omitted)");
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, grouped by attribute tags");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory (default: the config's eval set)");
  eval->add_option("--group-by", group_by, "'attrs' or 'none'");
  eval->add_option("--out", out, "Write the table here instead of stdout");
  eval->add_option("--predictions", preds_out, "Also write per-sample predictions");

  auto* abl = app.add_subcommand("ablate", "Train and compare the ablation variants");
  abl->add_option("--config", config, "JSON config");
  std::string ablate_out = "ablation";
  abl->add_option("--out", ablate_out, "Output directory (default: ./ablation)");
  abl->add_option("--seeds", seeds, "Seeds to run (default: the config seed)")->delimiter(',');

  auto* plot = app.add_subcommand("plot", "Render a metrics, predictions or eval CSV");
  plot->add_option("--in", in, "Input CSV")->required();
  plot->add_option("--out", out, "Output directory (default: next to the input)");
  plot->add_option("--run-id", run_id, "File name prefix (default: input stem)");

  auto* dgen_parent = app.add_subcommand("data", "Synthetic data");
  dgen_parent->require_subcommand(1);
  auto* dgen = dgen_parent->add_subcommand("gen", "Render a synthetic dataset");
  DataGenOptions gen;
  std::uint64_t seed = 0;
  dgen->add_option("--out", out, "Output directory")->required();
  dgen->add_option("--spec", gen.spec_path, "JSON config whose data.scene and train_count are used");
  dgen->add_option("--count", gen.count, "Number of samples")->check(CLI::PositiveNumber);
  dgen->add_option("--first-index", gen.first_index, "Index of the first sample");
  dgen->add_option("--seed", gen.seed, "Scene seed");
  dgen->add_option("--subjects", gen.n_subjects, "Number of subjects")->check(CLI::PositiveNumber);
  dgen->add_option("--size", gen.size, "Image side length")->check(CLI::Range(16, 1024));
  dgen->add_option("--corrupt", gen.rules, "tag[:severity[:probability]], repeatable");

  auto* anc_parent = app.add_subcommand("anchors", "Text anchors");
  anc_parent->require_subcommand(1);
  auto* abuild = anc_parent->add_subcommand("build", "Build an anchor file");
  bool pseudo = false;
  int dim = 64;
  std::vector<std::string> prompts;
  std::string prompt_file;
  abuild->add_option("--out", out, "Anchor file")->required();
  abuild->add_flag("--pseudo", pseudo, "Use the built-in deterministic pseudo encoder");
  abuild->add_option("--encoder-dump", dump, "JSON {prompts, embeddings} from an external encoder");
  abuild->add_option("--dim", dim, "Embedding dimension for --pseudo")->check(CLI::PositiveNumber);
  abuild->add_option("--prompt", prompts, "Prompt for --pseudo, repeatable");
  abuild->add_option("--prompts", prompt_file, "Text file with one prompt per line for --pseudo");

  auto* diag_parent = app.add_subcommand("diag", "Diagnostics");
  diag_parent->require_subcommand(1);
  auto* dspec = diag_parent->add_subcommand("spectrum", "Spectrum stability under corruptions");
  int diag_count = 100;
  dspec->add_option("--out", out, "CSV path (default: stdout)");
  dspec->add_option("--count", diag_count, "Faces per corruption")->check(CLI::PositiveNumber);
  dspec->add_option("--seed", seed, "Scene seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, out, resume);
    if (*eval) return cmd_eval(ckpt, data, group_by, out, preds_out);
    if (*abl) return cmd_ablate(config, ablate_out, seeds);
    if (*plot) return cmd_plot(in, out, run_id);
    if (*dgen) return cmd_data_gen(out, gen, *dgen);
    if (*abuild) return cmd_anchors_build(out, pseudo, dump, dim, prompts, prompt_file);
    if (*dspec) return cmd_diag_spectrum(out, diag_count, seed);
  } catch (const lisa::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
