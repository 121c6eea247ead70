// dapa: synthesize corpora, train, evaluate, export predictions, check gradients.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dapa/config.hpp"
#include "dapa/errors.hpp"
#include "dapa/metrics.hpp"
#include "dapa/train.hpp"
#include "dapa/verify.hpp"

namespace fs = std::filesystem;
using namespace dapa;

namespace {

struct SynthArgs {
  std::optional<fs::path> spec;
  fs::path out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> data;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> workers;
  std::optional<std::string> precision;
  std::optional<fs::path> resume;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  std::optional<fs::path> dataset_map;
  std::optional<fs::path> out;
  std::string label = "dapa";
  std::size_t workers = 1;
  bool labels_as_predictions = false;
  bool mean_prompt = false;
};

struct PredictArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out;
  std::size_t workers = 1;
  bool mean_prompt = false;
};

/// Shortest round-trip form without exponent padding: 5e-5, 0.001, 12.
std::string compact(double v) {
  char buf[32];
  std::string s(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  if (const auto e = s.find("e-0"); e != std::string::npos) s.erase(e + 2, 1);
  if (const auto e = s.find("e+0"); e != std::string::npos) s.erase(e + 2, 1);
  return s;
}

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec = a.spec ? parse_synthetic_spec(read_json_file(*a.spec)) : SyntheticSpec{};
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const fs::path manifest = generate_synthetic_corpus(spec, a.out);
  const Corpus corpus = load_corpus(manifest);
  std::cout << "seed " << spec.seed << "\n"
            << "spec " << to_json(spec).dump() << "\n"
            << "domains " << corpus.domains.size() << "\n"
            << "sessions " << corpus.sessions.size() << "\n"
            << "frames " << corpus.total_frames() << "\n"
            << "manifest " << manifest.string() << "\n";
  return 0;
}

template <typename T>
int train_with(const RunConfig& run, const Corpus& corpus, const fs::path& out, const std::optional<fs::path>& resume) {
  const auto split = split_sessions(corpus, run.train.held_out_fraction, run.train.seed);
  spdlog::info("{} training sessions, {} held out", split.train.sessions.size(), split.held_out.sessions.size());

  TrainState<T> state = [&] {
    if (!resume) return TrainState<T>::fresh(run.model, corpus.domains, run.train);
    auto loaded = load_checkpoint<T>(*resume);
    if (loaded.state.model.config != run.model)
      throw ConfigError("checkpoint '" + resume->string() + "' was trained with a different model config");
    return std::move(loaded.state);
  }();
  TrainOptions<T> options;
  options.out_dir = out;
  run_training(state, split.train, split.held_out, run.train, options);

  const auto& last = state.history.back();
  std::cout << "epochs " << state.epoch << "\nsteps " << state.step << "\nfinal_train_loss " << last.train_loss
            << "\nfinal_val_ccc " << last.val_ccc << "\nbest_epoch " << state.best_epoch << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  RunConfig run = a.config ? parse_run_config(read_json_file(*a.config)) : RunConfig{};
  if (a.data) run.manifest = *a.data;
  if (a.seed) run.train.seed = *a.seed;
  if (a.epochs) run.train.epochs = *a.epochs;
  if (a.lr) run.train.lr_peak = *a.lr;
  if (a.workers) run.train.workers = *a.workers;
  if (a.precision) run.precision = *a.precision == "float64" ? Precision::Float64 : Precision::Float32;
  run.train.validate();
  if (!run.manifest) throw UsageError("no corpus: pass --data or set data.manifest in the config");

  const Corpus corpus = load_corpus(*run.manifest);
  if (!run.d_in_given) run.model.d_in = corpus.feature_dim;
  run.model.validate();

  fs::create_directories(a.out);
  const std::string effective = to_json(run).dump(2);
  std::cout << "seed=" << run.train.seed << " lr=" << compact(run.train.lr_peak)
            << " warmup=" << run.train.warmup_steps << "\n"
            << "effective config:\n"
            << effective << std::endl;
  std::ofstream(a.out / "config.json") << effective << '\n';

  return run.precision == Precision::Float64 ? train_with<double>(run, corpus, a.out, a.resume)
                                             : train_with<float>(run, corpus, a.out, a.resume);
}

template <typename T>
std::vector<SessionPrediction> predictions_from(const fs::path& checkpoint, const Corpus& corpus, std::size_t workers,
                                                bool mean_prompt) {
  auto loaded = load_checkpoint<T>(checkpoint);
  auto model = loaded.state.ema_model();
  if (mean_prompt) model.config.unknown_domain = UnknownDomainPolicy::MeanPrompt;
  if (corpus.feature_dim != model.config.d_in)
    throw IngestionError("corpus features are " + std::to_string(corpus.feature_dim) + " wide, model expects " +
                         std::to_string(model.config.d_in));
  return predict_corpus(model, corpus, workers);
}

std::vector<SessionPrediction> predict(const fs::path& checkpoint, const Corpus& corpus, std::size_t workers,
                                       bool mean_prompt) {
  return checkpoint_precision(checkpoint) == "float64"
             ? predictions_from<double>(checkpoint, corpus, workers, mean_prompt)
             : predictions_from<float>(checkpoint, corpus, workers, mean_prompt);
}

int cmd_eval(const EvalArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  const DatasetMap map = a.dataset_map ? load_dataset_map(*a.dataset_map) : DatasetMap{};
  std::vector<SessionPrediction> preds;
  if (a.labels_as_predictions) {
    for (const auto& s : corpus.sessions) preds.push_back({s.record.session_id, s.record.domain, s.labels, s.labels});
  } else {
    preds = predict(a.checkpoint, corpus, a.workers, a.mean_prompt);
  }
  const EvalReport report = score_predictions(preds, map);

  std::printf("%-24s %8s %8s %9s\n", "dataset", "sessions", "frames", "ccc");
  for (const auto& d : report.datasets)
    std::printf("%-24s %8zu %8zu %9.4f%s\n", d.name.c_str(), d.sessions, d.frames, d.ccc.value,
                d.ccc.degenerate ? " (degenerate)" : "");
  std::printf("%-24s %8s %8s %9.4f\n", "global", "", "", report.global);
  if (a.out) {
    write_report(*a.out / "report.json", *a.out / "report.csv", report, a.label);
    write_prediction_csv(*a.out / "predictions.csv", preds);
  }
  return 0;
}

int cmd_predict(const PredictArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  const auto preds = predict(a.checkpoint, corpus, a.workers, a.mean_prompt);
  write_prediction_csv(a.out, preds);
  std::size_t frames = 0;
  for (const auto& p : preds) frames += p.prediction.size();
  std::cout << "wrote " << frames << " frames of " << preds.size() << " sessions to " << a.out.string() << "\n";
  return 0;
}

int cmd_gradcheck(bool full) {
  const auto checks = run_gradcheck_suite(full);
  bool ok = true;
  std::printf("%-40s %14s %8s  %s\n", "block", "max_rel_err", "coords", "status");
  for (const auto& c : checks) {
    std::printf("%-40s %14.3e %8zu  %s\n", c.block.c_str(), c.result.max_relative_error, c.result.coordinates,
                c.passed ? "ok" : "FAIL");
    ok = ok && c.passed;
  }
  if (!ok) {
    std::string failed;
    for (const auto& c : checks)
      if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.block;
    std::cerr << "gradient check failed: " << failed << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("dapa"));
  spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=debug|info|warn|error|off

  CLI::App app{"Dyadic engagement estimation with domain-adaptive prompts"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus");
  s->add_option("--spec", synth.spec, "Synthetic spec (JSON)");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Override the spec seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Run config (JSON)");
  t->add_option("--data", train.data, "Corpus manifest");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--seed", train.seed);
  t->add_option("--epochs", train.epochs);
  t->add_option("--lr", train.lr, "Peak learning rate");
  t->add_option("--workers", train.workers, "Parallel width (results do not depend on it)");
  t->add_option("--precision", train.precision)->check(CLI::IsMember({"float32", "float64"}));
  t->add_option("--resume", train.resume, "Continue from a checkpoint directory");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory");
  e->add_option("--data", eval.data, "Corpus manifest")->required();
  e->add_option("--dataset-map", eval.dataset_map, "JSON object mapping domain to dataset");
  e->add_option("--out", eval.out, "Write report.json, report.csv and predictions.csv here");
  e->add_option("--label", eval.label, "Row label in report.csv");
  e->add_option("--workers", eval.workers);
  e->add_flag("--labels-as-predictions", eval.labels_as_predictions, "Debug: score the labels against themselves");
  e->add_flag("--mean-prompt", eval.mean_prompt, "Use the mean prompt for domains the model has not seen");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Export per-frame predictions as CSV");
  p->alias("export");
  p->add_option("--checkpoint", pred.checkpoint, "Checkpoint directory")->required();
  p->add_option("--data", pred.data, "Corpus manifest")->required();
  p->add_option("--out", pred.out, "Output CSV")->required();
  p->add_option("--workers", pred.workers);
  p->add_flag("--mean-prompt", pred.mean_prompt, "Use the mean prompt for domains the model has not seen");

  bool full = false;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit");
  g->add_flag("--full", full, "Include the end-to-end forward + loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }
  if (e->parsed() && !eval.labels_as_predictions && eval.checkpoint.empty()) {
    std::cerr << "eval: --checkpoint is required unless --labels-as-predictions is given\n";
    return 1;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
    if (p->parsed()) return cmd_predict(pred);
    return cmd_gradcheck(full);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.exit_code();
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}
