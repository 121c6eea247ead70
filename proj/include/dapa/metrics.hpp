#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dapa/data.hpp"
#include "dapa/model.hpp"

namespace dapa {

struct CccValue {
  double value = 0.0;
  bool degenerate = false;  // denominator < 1e-12; value is 0
};

/// Concordance correlation coefficient with population (1/M) statistics.
CccValue ccc(std::span<const double> x, std::span<const double> y);
CccValue ccc(std::span<const float> x, std::span<const float> y);

struct SessionPrediction {
  std::string session_id;
  std::string domain;
  std::vector<float> prediction;
  std::vector<float> truth;
};

struct SessionScore {
  std::string session_id;
  std::string dataset;
  std::size_t frames = 0;
  CccValue ccc;
};

struct DatasetScore {
  std::string name;
  std::size_t frames = 0;
  std::size_t sessions = 0;
  CccValue ccc;  // over the concatenated frames of every session
};

struct EvalReport {
  std::vector<DatasetScore> datasets;  // sorted by name
  std::vector<SessionScore> sessions;  // input order
  double global = 0.0;                 // unweighted mean over datasets
};

/// Domain name → dataset name. Domains without an entry are their own dataset.
using DatasetMap = std::map<std::string, std::string>;

DatasetMap load_dataset_map(const std::filesystem::path& path);

EvalReport score_predictions(std::span<const SessionPrediction> predictions, const DatasetMap& datasets = {});

/// Segments the session, runs the evaluation-mode forward per window and
/// stitches the cores back together. The domain is resolved by name through
/// the model's unknown-domain policy.
template <typename T>
std::vector<float> predict_session(const DapaModel<T>& model, const Session& session, std::size_t workers = 1);

template <typename T>
std::vector<SessionPrediction> predict_corpus(const DapaModel<T>& model, const Corpus& corpus, std::size_t workers = 1);

template <typename T>
EvalReport evaluate_corpus(const DapaModel<T>& model, const Corpus& corpus, const DatasetMap& datasets = {},
                           std::size_t workers = 1);

/// The core and both context sides each take a third of the window
/// (32 + 32 + 32 at N_w = 96).
WindowScheme scheme_for(const ModelConfig& config);

/// session_id,frame,prediction,truth for every frame, in order.
void write_prediction_csv(const std::filesystem::path& path, std::span<const SessionPrediction> predictions);

/// JSON with every score, and a CSV with one row `label` and one column per
/// dataset plus `global`.
void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report, const std::string& label);

}  // namespace dapa
