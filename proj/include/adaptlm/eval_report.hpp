#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

namespace adaptlm {

inline constexpr int kReportSchemaVersion = 1;

// Rows are gold classes, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const std::int32_t> preds, std::span<const std::int32_t> gold,
                          std::vector<std::string> classes);
ConfusionMatrix confusion(std::span<const std::string> preds, std::span<const std::string> gold,
                          std::vector<std::string> classes);

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;  // gold count
  bool operator==(const ClassMetrics&) const = default;
};

// 0/0 is 0 for precision, recall and F1.
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);
// Mean F1 over every declared class, present in the sample or not.
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

struct EvalReport {
  std::string dataset;
  std::string model;
  std::string config_hash;
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::uint64_t examples = 0;
  ConfusionMatrix confusion;
  bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(const ConfusionMatrix& cm, std::string dataset, std::string model, std::string config_hash = {});

enum class ReportFormat { json, markdown, tsv };

// ConfigError on anything but json / markdown / tsv.
ReportFormat parse_report_format(std::string_view name);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& json);
std::vector<EvalReport> reports_from_json(const nlohmann::json& json);

// Dataset / model / macro-F1 table. Datasets keep first-appearance order;
// rows within a dataset are sorted by macro F1, highest first.
std::string render(std::span<const EvalReport> reports, ReportFormat format);

struct ThresholdBin {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

// Macro F1 per (bin, dataset); rows follow the bins, columns the datasets.
struct ThresholdTable {
  std::vector<std::string> bins;
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> macro_f1;
  bool operator==(const ThresholdTable&) const = default;
};

// Runs `runner(bin, dataset_index)` for every pair, bins in order.
ThresholdTable threshold_sweep(std::span<const ThresholdBin> bins, std::span<const std::string> datasets,
                               const std::function<double(const ThresholdBin&, std::size_t)>& runner);

std::string render_threshold_table(const ThresholdTable& table, ReportFormat format);

// Bin label "lo - hi" with one decimal, e.g. "0.5 - 1.0".
std::string bin_label(double lo, double hi);

struct PredictionRow {
  std::string id;
  std::string gold;
  std::string pred;
  bool operator==(const PredictionRow&) const = default;
};

// TSV with header id, gold, pred.
std::vector<PredictionRow> load_predictions(const std::filesystem::path& path);
void save_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path);

}  // namespace adaptlm
