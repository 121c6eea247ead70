#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dapa/data.hpp"
#include "dapa/metrics.hpp"
#include "dapa/model.hpp"

namespace dapa {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamOptions&) const = default;
};

struct TrainConfig {
  std::uint64_t seed = 40;
  double lr_peak = 5e-5;
  std::size_t warmup_steps = 400;
  std::size_t cosine_t_max = 10;  // epochs
  std::size_t epochs = 40;
  std::size_t batch_train = 32;
  std::size_t batch_eval = 256;
  double ema_decay = 0.999;
  AdamOptions adam;
  bool loss_on_core_only = true;
  double held_out_fraction = 0.2;  // sessions per domain kept for validation
  std::size_t workers = 1;         // parallel width; never changes results

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate for the optimizer update numbered `step` (1-based) during
/// epoch `epoch` (0-based): linear warmup over the first warmup_steps, then
/// per-epoch cosine annealing to 0 at cosine_t_max, held there.
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t epoch);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static AdamState for_parameters(const ParameterList<T>& params);
};

/// One bias-corrected Adam update in place. A non-finite gradient aborts
/// before any parameter changes, naming the offending tensor.
template <typename T>
void adam_step(AdamState<T>& state, const ParameterList<T>& params, const std::vector<std::vector<T>>& grads,
               double lr, const AdamOptions& opt);

template <typename T>
struct EmaState {
  std::vector<std::vector<T>> shadow;
  double decay = 0.999;

  static EmaState of(const ParameterList<T>& params, double decay);
};

/// shadow ← decay·shadow + (1 − decay)·params.
template <typename T>
void ema_update(EmaState<T>& ema, const ParameterList<T>& params);

struct HistoryRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer updates so far
  double lr = 0.0;        // rate of the epoch's last update
  double train_loss = 0.0;
  double val_ccc = std::numeric_limits<double>::quiet_NaN();  // NaN without a validation split

  bool operator==(const HistoryRecord&) const;
};

std::string history_csv(const std::vector<HistoryRecord>& history);

template <typename T>
struct TrainState {
  DapaModel<T> model;
  AdamState<T> adam;
  EmaState<T> ema;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;
  std::vector<HistoryRecord> history;
  double best_val_ccc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  static TrainState fresh(const ModelConfig& config, std::vector<std::string> domains, const TrainConfig& cfg);
  /// Independent model carrying the EMA shadow weights; live parameters are untouched.
  DapaModel<T> ema_model() const;
};

template <typename T>
struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // last/, best/ checkpoints and history.csv
  std::size_t stop_after_epoch = 0;              // 0 = run to cfg.epochs
  /// Called after each epoch; returning false stops training.
  std::function<bool(const TrainState<T>&, const HistoryRecord&)> on_epoch;
};

/// Trains from `state` (fresh or resumed) until cfg.epochs. Each step draws a
/// seeded batch of windows, differentiates every window on its own tape, and
/// pools the CCC loss over the batch's core frames.
template <typename T>
void run_training(TrainState<T>& state, const Corpus& train, const Corpus& validation, const TrainConfig& cfg,
                  const TrainOptions<T>& options = {});

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const TrainState<T>& state, const TrainConfig& cfg);

template <typename T>
struct LoadedCheckpoint {
  TrainState<T> state;
  TrainConfig config;
};

/// Validates everything before returning; nothing is shared with other state.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir);

/// "float32" or "float64", as recorded in a checkpoint directory.
std::string checkpoint_precision(const std::filesystem::path& dir);

}  // namespace dapa
