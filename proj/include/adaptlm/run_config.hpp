#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "adaptlm/corpus.hpp"
#include "adaptlm/eval_report.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/textprep.hpp"
#include "adaptlm/tokenizer.hpp"
#include "adaptlm/training.hpp"

namespace adaptlm {

struct DataConfig {
  std::optional<std::filesystem::path> scored;  // scored corpus for select / sweep
  std::optional<std::filesystem::path> corpus;  // pretraining texts (scored TSV layout)
  std::optional<std::filesystem::path> train;   // labeled TSV
  std::optional<std::filesystem::path> test;    // labeled TSV
  std::optional<std::filesystem::path> vocab;   // existing vocabulary file
  ScoredColumns scored_columns;
  LabeledColumns labeled_columns;
  std::vector<std::string> classes;  // empty: sorted labels of the training file
};

struct SelectConfig {
  double lo = 0.5;
  double hi = 1.0;
};

using SweepBin = ThresholdBin;

struct SweepDataset {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path test;
};

struct SweepConfig {
  std::vector<SweepBin> bins;
  std::vector<SweepDataset> datasets;  // empty: the data.train / data.test pair
  bool include_baseline = true;        // fine-tune from initialization without pretraining
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  DataConfig data;
  SelectConfig select;
  PrepConfig preprocess;
  bool preprocess_train = false;  // apply PrepConfig to corpus and labeled texts before tokenizing
  VocabTrainerOptions vocab;
  ModelConfig model;  // vocab_size 0: taken from the vocabulary
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  SweepConfig sweep;
};

// Unknown keys and wrong value types are ConfigErrors naming the dotted key.
// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& json, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);

// Field-level checks: seed present, sub-configs valid, referenced paths exist.
void validate(const RunConfig& config);

// Applies the run seed to the stage configs.
void propagate_seed(RunConfig& config);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& json, const std::string& where = "model");

// Stable hash of a JSON document (crc32 of its compact dump, hex).
std::string config_hash(const nlohmann::json& json);

}  // namespace adaptlm
