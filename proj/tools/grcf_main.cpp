// Command-line entry point: synthetic data generation, two-stage training,
// evaluation with perturbations, advantage-weight analysis export, and the
// gradient self-check.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grcf/config.hpp"
#include "grcf/data.hpp"
#include "grcf/gradcheck.hpp"
#include "grcf/metrics.hpp"
#include "grcf/model.hpp"
#include "grcf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

// one run per output directory, enforced by a marker file
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : lock_path_(dir / ".grcf.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw grcf::DataError("cannot create output directory: " + dir.string());
    std::FILE* f = std::fopen(lock_path_.c_str(), "wx");
    if (!f) {
      throw grcf::ConfigError("output directory is locked by another run: " + dir.string());
    }
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(lock_path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path lock_path_;
};

void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw grcf::DataError("cannot write: " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

std::vector<std::pair<std::string, std::string>> split_kv(const std::string& csv) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      out.emplace_back(item, "");
    } else {
      out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
  }
  return out;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  int n = 100;
  std::uint64_t seed = 42;
  std::uint64_t map_seed = 9001;
  std::string task = "regression";
  std::string dims;
  int len_audio = 6;
  int len_vision = 6;
  double noise = 0.1;
  double half_range = 3.0;
  std::string out;
};

int cmd_synth(const SynthArgs& args) {
  grcf::SynthConfig cfg;
  cfg.n = args.n;
  cfg.seed = args.seed;
  cfg.map_seed = args.map_seed;
  cfg.task = grcf::task_from_string(args.task);
  cfg.len_audio = args.len_audio;
  cfg.len_vision = args.len_vision;
  cfg.noise_text = cfg.noise_audio = cfg.noise_vision = args.noise;
  cfg.half_range = args.half_range;
  for (const auto& [key, value] : split_kv(args.dims)) {
    const int v = std::stoi(value);
    if (key == "text") {
      cfg.d_text = v;
    } else if (key == "audio") {
      cfg.d_audio = v;
    } else if (key == "vision") {
      cfg.d_vision = v;
    } else {
      throw grcf::ConfigError("--dims: unknown modality '" + key + "'");
    }
  }
  const auto samples = grcf::generate_synthetic(cfg);
  grcf::save_dataset(args.out, samples);
  std::cout << "wrote " << samples.size() << " samples (d_text=" << cfg.d_text
            << ", d_audio=" << cfg.d_audio << ", d_vision=" << cfg.d_vision << ") to " << args.out
            << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string stage = "both";
  std::string resume;
  std::string out;
  // one-to-one flag overrides of config fields
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<int> stage1_epochs;
  std::optional<int> stage2_epochs;
  std::optional<int> batch_pairs;
  std::optional<int> pairs;
};

grcf::EvalReport eval_report(const grcf::Model& model, std::span<const grcf::Sample> samples,
                             bool exclude_ties) {
  const auto preds = model.predict(samples);
  if (model.config().head == grcf::HeadKind::Regression) {
    std::vector<double> y;
    for (const auto& s : samples) y.push_back(s.label);
    return grcf::evaluate_regression(y, preds, model.config().half_range, exclude_ties);
  }
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label > 0.5 ? 1 : 0);
  return grcf::evaluate_classification(labels, preds);
}

json eval_report_json(const grcf::Model& model, std::span<const grcf::Sample> samples,
                      bool exclude_ties) {
  return eval_report(model, samples, exclude_ties).to_json();
}

int cmd_train(const TrainArgs& args) {
  const auto started = std::chrono::steady_clock::now();
  grcf::TrainConfig cfg =
      args.config.empty() ? grcf::TrainConfig{} : grcf::TrainConfig::load(args.config);
  if (args.seed) cfg.seed = *args.seed;
  if (args.strategy) cfg.strategy = grcf::group_strategy_from_string(*args.strategy);
  if (args.stage1_epochs) cfg.stage1.epochs = *args.stage1_epochs;
  if (args.stage2_epochs) cfg.stage2.epochs = *args.stage2_epochs;
  if (args.batch_pairs) cfg.optim.batch_pairs = *args.batch_pairs;
  if (args.pairs) cfg.pairs.explicit_pairs = *args.pairs;
  cfg.stage1_weights.half_range = cfg.model.half_range;
  cfg.validate();

  if (args.stage != "1" && args.stage != "2" && args.stage != "both") {
    throw grcf::ConfigError("--stage must be 1, 2, or both");
  }
  const bool run1 = args.stage == "1" || args.stage == "both";
  const bool run2 = args.stage == "2" || args.stage == "both";
  if (args.stage == "2" && args.resume.empty()) {
    throw grcf::ConfigError("--stage 2 requires --resume with a stage-1 checkpoint");
  }

  const grcf::TaskKind task = cfg.model.head == grcf::HeadKind::Regression
                                  ? grcf::TaskKind::Regression
                                  : grcf::TaskKind::Classification;
  const auto train = grcf::load_dataset(args.data, cfg.model.half_range, task);
  const auto val = grcf::load_dataset(args.val, cfg.model.half_range, task);

  DirLock lock(args.out);
  const fs::path out_dir(args.out);

  grcf::Rng master(cfg.seed);
  grcf::Rng pair_rng = master.fork(10);
  grcf::Rng init_rng = master.fork(11);
  const int n_pairs = cfg.pairs.count_for(static_cast<int>(train.size()));
  const auto pairs = grcf::sample_pairs(train, n_pairs, pair_rng);

  grcf::Model model = args.resume.empty() ? grcf::Model(cfg.model, init_rng)
                                          : grcf::Model::load_checkpoint(args.resume);
  if (model.config().to_json() != cfg.model.to_json()) {
    throw grcf::ConfigError("resumed checkpoint's model config disagrees with the run config");
  }

  json outputs = json::object();
  bool diverged = false;
  std::string divergence_note;
  const std::string header = task == grcf::TaskKind::Regression
                                 ? "step,group,reg,bound,mae,total"
                                 : "step,sep,comp,bound,cal,total";

  if (run1) {
    auto s1 = grcf::run_stage1(model, train, pairs, val, cfg);
    grcf::save_loss_log((out_dir / "loss_stage1.csv").string(), s1.log, header);
    model.restore(s1.best_params);
    model.save_checkpoint((out_dir / "checkpoint_stage1.json").string());
    outputs["checkpoint_stage1"] = (out_dir / "checkpoint_stage1.json").string();
    outputs["loss_stage1"] = (out_dir / "loss_stage1.csv").string();
    std::cout << "stage 1: best val PairwiseAcc " << s1.best_metric << " at epoch "
              << s1.best_epoch << "\n";
    diverged = diverged || s1.diverged;
    if (s1.diverged) divergence_note = s1.divergence_note;
  }
  if (run2 && !diverged) {
    auto s2 = grcf::run_stage2(model, train, pairs, val, cfg);
    const std::string h2 = task == grcf::TaskKind::Regression ? header
                                                              : "step,sep,comp,bound,bce,total";
    grcf::save_loss_log((out_dir / "loss_stage2.csv").string(), s2.log, h2);
    model.restore(s2.best_params);
    model.save_checkpoint((out_dir / "checkpoint_stage2.json").string());
    outputs["checkpoint_stage2"] = (out_dir / "checkpoint_stage2.json").string();
    outputs["loss_stage2"] = (out_dir / "loss_stage2.csv").string();
    std::cout << "stage 2: best val "
              << (task == grcf::TaskKind::Regression ? "MAE " : "Acc2 ") << s2.best_metric
              << " at epoch " << s2.best_epoch << "\n";
    diverged = diverged || s2.diverged;
    if (s2.diverged) divergence_note = s2.divergence_note;
  }

  const json report = eval_report_json(model, val, false);
  write_json_atomic(out_dir / "val_report.json", report);
  outputs["val_report"] = (out_dir / "val_report.json").string();

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json manifest;
  manifest["command"] = "train";
  manifest["config"] = cfg.to_json();
  manifest["stage"] = args.stage;
  manifest["seed"] = cfg.seed;
  manifest["dataset_hash"] = {{"train", grcf::file_content_hash(args.data)},
                              {"val", grcf::file_content_hash(args.val)}};
  manifest["pairs"] = n_pairs;
  manifest["outputs"] = outputs;
  manifest["duration_seconds"] = seconds;
  manifest["diverged"] = diverged;
  if (diverged) manifest["divergence_note"] = divergence_note;
  write_json_atomic(out_dir / "manifest.json", manifest);

  if (diverged) {
    std::cerr << "training diverged: " << divergence_note << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string noise;  // comma list of sigmas
  std::uint64_t noise_seed = 20250;
  std::string ablate;
  std::string truncate;
  bool exclude_ties = false;
  std::string out;
};

int cmd_eval(const EvalArgs& args) {
  grcf::Model model = grcf::Model::load_checkpoint(args.ckpt);
  const bool classification = model.config().head == grcf::HeadKind::Classification;
  const grcf::TaskKind task =
      classification ? grcf::TaskKind::Classification : grcf::TaskKind::Regression;
  auto samples = grcf::load_dataset(args.data, model.config().half_range, task);

  // fixed perturbation order: truncate, ablate, noise
  if (!args.truncate.empty()) {
    grcf::TruncateDims dims;
    for (const auto& [key, value] : split_kv(args.truncate)) {
      const int v = std::stoi(value);
      if (key == "text") {
        dims.text = v;
      } else if (key == "audio") {
        dims.audio = v;
      } else if (key == "vision") {
        dims.vision = v;
      } else {
        throw grcf::ConfigError("--truncate: unknown modality '" + key + "'");
      }
    }
    samples = grcf::perturb_truncate(samples, dims);
  }
  if (!args.ablate.empty()) {
    std::vector<grcf::Modality> mods;
    for (const auto& [key, value] : split_kv(args.ablate)) {
      (void)value;
      if (key == "text") {
        mods.push_back(grcf::Modality::Text);
      } else if (key == "audio") {
        mods.push_back(grcf::Modality::Audio);
      } else if (key == "vision") {
        mods.push_back(grcf::Modality::Vision);
      } else {
        throw grcf::ConfigError("--ablate: unknown modality '" + key + "'");
      }
    }
    samples = grcf::perturb_ablate(samples, mods);
  }

  std::vector<double> sigmas;
  if (!args.noise.empty()) {
    std::stringstream ss(args.noise);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) sigmas.push_back(std::stod(item));
    }
  }

  json result;
  if (sigmas.size() <= 1) {
    auto evaluated = sigmas.empty() || sigmas[0] == 0.0
                         ? samples
                         : grcf::perturb_noise(samples, sigmas[0], args.noise_seed);
    const grcf::EvalReport rep = eval_report(model, evaluated, args.exclude_ties);
    result = rep.to_json();
    std::cout << "evaluation" << (sigmas.empty() ? "" : " (sigma " + std::to_string(sigmas[0]) + ")")
              << "\n" << rep.to_table() << result.dump(2) << "\n";
  } else {
    grcf::Rng seeder(args.noise_seed);
    json rows = json::array();
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      const double sigma = sigmas[k];
      auto evaluated = sigma == 0.0
                           ? samples
                           : grcf::perturb_noise(samples, sigma, seeder.fork(k).next_u64());
      const grcf::EvalReport rep = eval_report(model, evaluated, args.exclude_ties);
      json row;
      row["sigma"] = sigma;
      row["report"] = rep.to_json();
      rows.push_back(std::move(row));
      std::cout << "sigma " << sigma << "\n" << rep.to_table();
    }
    result["noise_sweep"] = std::move(rows);
  }

  if (!args.out.empty()) write_json_atomic(args.out, result);
  return kExitOk;
}

// ---- analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string ckpt;
  std::string data;
  int pairs = -1;
  double top_frac = 0.05;
  std::uint64_t seed = 42;
  std::string out;
};

int cmd_analyze(const AnalyzeArgs& args) {
  if (args.top_frac <= 0.0 || args.top_frac > 1.0) {
    throw grcf::ConfigError("--top-frac must lie in (0, 1]");
  }
  grcf::Model model = grcf::Model::load_checkpoint(args.ckpt);
  if (model.config().head != grcf::HeadKind::Regression) {
    throw grcf::ConfigError("analyze expects a regression checkpoint");
  }
  auto samples =
      grcf::load_dataset(args.data, model.config().half_range, grcf::TaskKind::Regression);
  const int n_pairs =
      args.pairs > 0 ? args.pairs : grcf::default_pair_count(static_cast<int>(samples.size()));
  grcf::Rng rng(args.seed);
  const auto sampled = grcf::sample_pairs(samples, n_pairs, rng);

  const auto preds = model.predict(samples);
  std::vector<double> labels;
  for (const auto& s : samples) labels.push_back(s.label);

  grcf::PairBatch batch;
  batch.predictions = grcf::Tensor::constant_column(preds);
  batch.labels = labels;
  int tied = 0;
  for (const auto& p : sampled) {
    if (labels[static_cast<std::size_t>(p.i)] > labels[static_cast<std::size_t>(p.j)]) {
      batch.ranking_pairs.emplace_back(p.i, p.j);
    } else if (labels[static_cast<std::size_t>(p.j)] > labels[static_cast<std::size_t>(p.i)]) {
      batch.ranking_pairs.emplace_back(p.j, p.i);
    } else {
      ++tied;
    }
  }
  if (batch.ranking_pairs.empty()) throw grcf::DataError("analyze: no ranking pairs");

  grcf::TrainConfig defaults;
  defaults.model = model.config();
  defaults.stage1_weights.half_range = model.config().half_range;
  const grcf::GroupSpec spec = defaults.group_spec();
  const auto adv = grcf::advantage_weights(batch, defaults.stage1_weights.adv_eps,
                                           defaults.stage1_weights.fallback_uniform);

  struct Row {
    int i, j, delta_g;
    double s_i, s_j, reward, advantage, weight, margin, hinge;
  };
  std::vector<Row> rows;
  rows.reserve(batch.ranking_pairs.size());
  for (std::size_t k = 0; k < batch.ranking_pairs.size(); ++k) {
    const auto [i, j] = batch.ranking_pairs[k];
    Row r;
    r.i = i;
    r.j = j;
    r.s_i = labels[static_cast<std::size_t>(i)];
    r.s_j = labels[static_cast<std::size_t>(j)];
    r.delta_g = grcf::group_distance(r.s_i, r.s_j, spec);
    r.margin = grcf::dynamic_margin(r.delta_g, defaults.margins);
    r.reward = adv.rewards[k];
    r.advantage = adv.advantages[k];
    r.weight = adv.weights[k];
    r.hinge = std::max(0.0, r.margin - (preds[static_cast<std::size_t>(i)] -
                                        preds[static_cast<std::size_t>(j)]));
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.weight > b.weight; });

  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(args.top_frac * static_cast<double>(rows.size())));
  {
    std::ofstream out(args.out);
    if (!out) throw grcf::DataError("cannot write: " + args.out);
    out << "i,j,s_i,s_j,reward,advantage,weight,delta_g,margin,hinge\n";
    out.precision(17);
    for (std::size_t k = 0; k < std::min(keep, rows.size()); ++k) {
      const Row& r = rows[k];
      out << r.i << ',' << r.j << ',' << r.s_i << ',' << r.s_j << ',' << r.reward << ','
          << r.advantage << ',' << r.weight << ',' << r.delta_g << ',' << r.margin << ','
          << r.hinge << "\n";
    }
  }

  // summary over every ranking pair sampled, not just the exported head
  std::map<int, std::pair<double, int>> by_dg;
  std::vector<double> weights_v, dgs_v;
  for (const Row& r : rows) {
    auto& [total, count] = by_dg[r.delta_g];
    total += r.weight;
    ++count;
    weights_v.push_back(r.weight);
    dgs_v.push_back(static_cast<double>(r.delta_g));
  }
  json summary;
  summary["pairs_analyzed"] = rows.size();
  summary["pairs_exported"] = std::min(keep, rows.size());
  summary["tied_pairs_skipped"] = tied;
  summary["degenerate_fallback"] = adv.degenerate;
  json mean_by_dg = json::object();
  for (const auto& [dg, agg] : by_dg) {
    mean_by_dg[std::to_string(dg)] = agg.first / agg.second;
  }
  summary["mean_weight_by_delta_g"] = mean_by_dg;
  try {
    summary["spearman_weight_vs_delta_g"] = grcf::spearman(weights_v, dgs_v);
  } catch (const grcf::MetricError&) {
    summary["spearman_weight_vs_delta_g"] = nullptr;
  }
  write_json_atomic(args.out + ".summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---- gradcheck ----------------------------------------------------------------

struct GradCheckArgs {
  std::uint64_t seed = 42;
  std::string sizes = "tiny";
  int configs = 3;
};

int cmd_gradcheck(const GradCheckArgs& args) {
  int scale = 1;
  if (args.sizes == "tiny") {
    scale = 1;
  } else if (args.sizes == "small") {
    scale = 2;
  } else {
    throw grcf::ConfigError("--sizes must be tiny or small");
  }
  const auto results = grcf::run_gradient_checks(args.seed, args.configs, scale);
  bool all_ok = true;
  for (const auto& r : results) {
    const bool ok = r.max_rel_error < 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-22s max_rel_error=%.3e configs=%d %s\n", r.target.c_str(), r.max_rel_error,
                r.configs_checked, ok ? "ok" : "FAIL");
  }
  return all_ok ? kExitOk : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("GRCF_THREADS")) {
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));
  }

  CLI::App app{"group-wise ranking and calibration trainer"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic JSONL dataset");
  synth_cmd->add_option("--n", synth.n, "sample count")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--map-seed", synth.map_seed, "feature-map seed shared across splits");
  synth_cmd->add_option("--task", synth.task, "regression or classification");
  synth_cmd->add_option("--dims", synth.dims, "dims, e.g. text=32,audio=16,vision=16");
  synth_cmd->add_option("--len-audio", synth.len_audio, "audio frames per sample");
  synth_cmd->add_option("--len-vision", synth.len_vision, "vision frames per sample");
  synth_cmd->add_option("--noise", synth.noise, "feature noise scale");
  synth_cmd->add_option("--half-range", synth.half_range, "annotation half-range S");
  synth_cmd->add_option("--out", synth.out, "output JSONL path")->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "run the two-stage training pipeline");
  train_cmd->add_option("--config", train.config, "JSON config path");
  train_cmd->add_option("--data", train.data, "training JSONL")->required();
  train_cmd->add_option("--val", train.val, "validation JSONL")->required();
  train_cmd->add_option("--stage", train.stage, "1, 2, or both");
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from");
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--seed", train.seed, "override config seed");
  train_cmd->add_option("--strategy", train.strategy,
                        "override group strategy (overlap-3/5/7, strict-5)");
  train_cmd->add_option("--stage1-epochs", train.stage1_epochs, "override stage-1 epochs");
  train_cmd->add_option("--stage2-epochs", train.stage2_epochs, "override stage-2 epochs");
  train_cmd->add_option("--batch-pairs", train.batch_pairs, "override pairs per micro-batch");
  train_cmd->add_option("--pairs", train.pairs, "override sampled pair count");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with perturbations");
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint JSON")->required();
  eval_cmd->add_option("--data", eval.data, "evaluation JSONL")->required();
  eval_cmd->add_option("--noise", eval.noise, "noise sigma, or a comma list for a sweep");
  eval_cmd->add_option("--noise-seed", eval.noise_seed, "noise stream seed");
  eval_cmd->add_option("--ablate", eval.ablate, "modalities to zero out, e.g. audio,vision");
  eval_cmd->add_option("--truncate", eval.truncate, "dims to keep, e.g. vision=35");
  eval_cmd->add_flag("--exclude-ties", eval.exclude_ties, "drop tied-label pairs from PairwiseAcc");
  eval_cmd->add_option("--out", eval.out, "report JSON path");

  AnalyzeArgs analyze;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "export per-pair advantage weights and summary stats");
  analyze_cmd->add_option("--ckpt", analyze.ckpt, "checkpoint JSON")->required();
  analyze_cmd->add_option("--data", analyze.data, "dataset JSONL")->required();
  analyze_cmd->add_option("--pairs", analyze.pairs, "pairs to sample");
  analyze_cmd->add_option("--top-frac", analyze.top_frac, "fraction of rows to export");
  analyze_cmd->add_option("--seed", analyze.seed, "pair sampling seed");
  analyze_cmd->add_option("--out", analyze.out, "CSV output path")->required();

  GradCheckArgs gradcheck;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference self-check of every loss and the model");
  gradcheck_cmd->add_option("--seed", gradcheck.seed, "sweep seed");
  gradcheck_cmd->add_option("--sizes", gradcheck.sizes, "tiny or small");
  gradcheck_cmd->add_option("--configs", gradcheck.configs, "configurations per target")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*analyze_cmd) return cmd_analyze(analyze);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck);
  } catch (const grcf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const grcf::GroupError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const grcf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const grcf::ModelError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const grcf::TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
