#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "dapa/data.hpp"
#include "dapa/model.hpp"
#include "dapa/train.hpp"

namespace dapa {

using Json = nlohmann::json;

// Every parser starts from `base`, overrides the keys present, rejects
// unknown keys and wrong types with a ConfigError, and validates the result.

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const SyntheticSpec& s);
ModelConfig parse_model_config(const Json& j, ModelConfig base = {});
TrainConfig parse_train_config(const Json& j, TrainConfig base = {});
SyntheticSpec parse_synthetic_spec(const Json& j, SyntheticSpec base = {});

enum class Precision { Float32, Float64 };

/// {"model": {...}, "train": {...}, "data": {"manifest", "dataset_map"}, "precision"}
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> dataset_map;
  Precision precision = Precision::Float32;
  bool d_in_given = false;  // otherwise taken from the corpus
};

RunConfig parse_run_config(const Json& j);
Json to_json(const RunConfig& c);

/// Parses a JSON file; a missing file or a syntax error is a ConfigError.
Json read_json_file(const std::filesystem::path& path);

}  // namespace dapa
