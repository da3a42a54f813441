#include "adaptlm/eval_report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "adaptlm/corpus.hpp"
#include "adaptlm/errors.hpp"

namespace adaptlm {

using nlohmann::json;

namespace {

std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ConfusionMatrix empty_matrix(std::vector<std::string> classes) {
  if (classes.empty()) throw ContractError("confusion: class list is empty");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      if (classes[i] == classes[j]) throw ContractError("confusion: duplicate class '" + classes[i] + "'");
    }
  }
  ConfusionMatrix cm;
  cm.counts.assign(classes.size(), std::vector<std::uint64_t>(classes.size(), 0));
  cm.classes = std::move(classes);
  return cm;
}

std::string escape_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else out += c;
  }
  return out;
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

ConfusionMatrix confusion(std::span<const std::int32_t> preds, std::span<const std::int32_t> gold,
                          std::vector<std::string> classes) {
  if (preds.size() != gold.size()) {
    throw DataError("confusion: " + std::to_string(preds.size()) + " predictions but " + std::to_string(gold.size()) +
                    " gold labels");
  }
  ConfusionMatrix cm = empty_matrix(std::move(classes));
  const auto c = static_cast<std::int32_t>(cm.classes.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= c) throw DataError("confusion: unknown gold class id " + std::to_string(gold[i]));
    if (preds[i] < 0 || preds[i] >= c) throw DataError("confusion: unknown predicted class id " + std::to_string(preds[i]));
    ++cm.counts[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const std::string> preds, std::span<const std::string> gold,
                          std::vector<std::string> classes) {
  if (preds.size() != gold.size()) {
    throw DataError("confusion: " + std::to_string(preds.size()) + " predictions but " + std::to_string(gold.size()) +
                    " gold labels");
  }
  std::map<std::string, std::int32_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], static_cast<std::int32_t>(i));
  auto lookup = [&](const std::string& label) {
    auto it = index.find(label);
    if (it == index.end()) throw DataError("confusion: unknown label '" + label + "'");
    return it->second;
  };
  std::vector<std::int32_t> p, g;
  p.reserve(preds.size());
  g.reserve(gold.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    g.push_back(lookup(gold[i]));
    p.push_back(lookup(preds[i]));
  }
  return confusion(p, g, std::move(classes));
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes.size();
  std::vector<ClassMetrics> out;
  out.reserve(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = cm.counts[k][k], fp = 0, fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.counts[j][k];
      fn += cm.counts[k][j];
    }
    ClassMetrics m;
    m.name = cm.classes[k];
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.support = tp + fn;
    out.push_back(m);
  }
  return out;
}

double macro_f1(const ConfusionMatrix& cm) {
  const auto metrics = per_class_metrics(cm);
  if (metrics.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : metrics) sum += m.f1;
  return sum / static_cast<double>(metrics.size());
}

double accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < cm.classes.size(); ++k) diag += cm.counts[k][k];
  return ratio(diag, cm.total());
}

EvalReport make_report(const ConfusionMatrix& cm, std::string dataset, std::string model, std::string config_hash) {
  EvalReport r;
  r.dataset = std::move(dataset);
  r.model = std::move(model);
  r.config_hash = std::move(config_hash);
  r.per_class = per_class_metrics(cm);
  r.macro_f1 = macro_f1(cm);
  r.accuracy = accuracy(cm);
  r.examples = cm.total();
  r.confusion = cm;
  return r;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::json;
  if (name == "markdown" || name == "md") return ReportFormat::markdown;
  if (name == "tsv") return ReportFormat::tsv;
  throw ConfigError("format: unknown report format '" + std::string(name) + "' (expected json, markdown or tsv)");
}

json report_to_json(const EvalReport& r) {
  json classes = json::array();
  for (const auto& m : r.per_class) {
    classes.push_back(
        {{"name", m.name}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  return json{{"schema_version", kReportSchemaVersion},
              {"dataset", r.dataset},
              {"model", r.model},
              {"config_hash", r.config_hash},
              {"macro_f1", r.macro_f1},
              {"accuracy", r.accuracy},
              {"examples", r.examples},
              {"per_class", classes},
              {"confusion", {{"classes", r.confusion.classes}, {"counts", r.confusion.counts}}}};
}

EvalReport report_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kReportSchemaVersion) {
      throw FormatError("report: unsupported schema_version " + std::to_string(version));
    }
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.examples = j.at("examples").get<std::uint64_t>();
    for (const auto& m : j.at("per_class")) {
      r.per_class.push_back(ClassMetrics{m.at("name").get<std::string>(), m.at("precision").get<double>(),
                                         m.at("recall").get<double>(), m.at("f1").get<double>(),
                                         m.at("support").get<std::uint64_t>()});
    }
    r.confusion.classes = j.at("confusion").at("classes").get<std::vector<std::string>>();
    r.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::vector<std::uint64_t>>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::vector<EvalReport> reports_from_json(const json& j) {
  std::vector<EvalReport> out;
  const json& list = j.is_object() && j.contains("reports") ? j.at("reports") : j;
  if (!list.is_array()) throw FormatError("reports: expected an array");
  for (const auto& r : list) out.push_back(report_from_json(r));
  return out;
}

std::string render(std::span<const EvalReport> reports, ReportFormat format) {
  std::vector<std::string> dataset_order;
  for (const auto& r : reports) {
    if (std::find(dataset_order.begin(), dataset_order.end(), r.dataset) == dataset_order.end()) {
      dataset_order.push_back(r.dataset);
    }
  }
  std::vector<const EvalReport*> rows;
  for (const auto& d : dataset_order) {
    std::vector<const EvalReport*> block;
    for (const auto& r : reports) {
      if (r.dataset == d) block.push_back(&r);
    }
    std::stable_sort(block.begin(), block.end(),
                     [](const EvalReport* a, const EvalReport* b) { return a->macro_f1 > b->macro_f1; });
    rows.insert(rows.end(), block.begin(), block.end());
  }

  std::ostringstream out;
  switch (format) {
    case ReportFormat::json: {
      json list = json::array();
      for (const auto* r : rows) list.push_back(report_to_json(*r));
      out << json{{"schema_version", kReportSchemaVersion}, {"reports", list}}.dump(2) << '\n';
      break;
    }
    case ReportFormat::markdown:
      out << "| Dataset | Model | Macro F1 |\n";
      out << "|---|---|---|\n";
      for (const auto* r : rows) {
        out << "| " << escape_cell(r->dataset) << " | " << escape_cell(r->model) << " | " << fixed(r->macro_f1, 3)
            << " |\n";
      }
      break;
    case ReportFormat::tsv:
      out << "dataset\tmodel\tmacro_f1\taccuracy\texamples\tconfig_hash\n";
      for (const auto* r : rows) {
        out << tsv_escape(r->dataset) << '\t' << tsv_escape(r->model) << '\t' << fixed(r->macro_f1, 6) << '\t'
            << fixed(r->accuracy, 6) << '\t' << r->examples << '\t' << r->config_hash << '\n';
      }
      break;
  }
  return out.str();
}

ThresholdTable threshold_sweep(std::span<const ThresholdBin> bins, std::span<const std::string> datasets,
                               const std::function<double(const ThresholdBin&, std::size_t)>& runner) {
  if (bins.empty()) throw ContractError("threshold_sweep: at least one bin is required");
  if (datasets.empty()) throw ContractError("threshold_sweep: at least one dataset is required");
  ThresholdTable t;
  t.datasets.assign(datasets.begin(), datasets.end());
  for (const auto& bin : bins) {
    t.bins.push_back(bin.name.empty() ? bin_label(bin.lo, bin.hi) : bin.name);
    std::vector<double> row;
    for (std::size_t d = 0; d < datasets.size(); ++d) row.push_back(runner(bin, d));
    t.macro_f1.push_back(std::move(row));
  }
  return t;
}

std::string render_threshold_table(const ThresholdTable& t, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::json: {
      json rows = json::array();
      for (std::size_t b = 0; b < t.bins.size(); ++b) {
        json scores = json::object();
        for (std::size_t d = 0; d < t.datasets.size(); ++d) scores[t.datasets[d]] = t.macro_f1[b][d];
        rows.push_back({{"bin", t.bins[b]}, {"macro_f1", scores}});
      }
      out << json{{"schema_version", kReportSchemaVersion}, {"datasets", t.datasets}, {"rows", rows}}.dump(2) << '\n';
      break;
    }
    case ReportFormat::markdown:
      out << "| Scores |";
      for (const auto& d : t.datasets) out << ' ' << escape_cell(d) << " |";
      out << "\n|---|";
      for (std::size_t d = 0; d < t.datasets.size(); ++d) out << "---|";
      out << '\n';
      for (std::size_t b = 0; b < t.bins.size(); ++b) {
        out << "| " << escape_cell(t.bins[b]) << " |";
        for (double f : t.macro_f1[b]) out << ' ' << fixed(f, 3) << " |";
        out << '\n';
      }
      break;
    case ReportFormat::tsv:
      out << "bin";
      for (const auto& d : t.datasets) out << '\t' << tsv_escape(d);
      out << '\n';
      for (std::size_t b = 0; b < t.bins.size(); ++b) {
        out << tsv_escape(t.bins[b]);
        for (double f : t.macro_f1[b]) out << '\t' << fixed(f, 6);
        out << '\n';
      }
      break;
  }
  return out.str();
}

std::string bin_label(double lo, double hi) { return fixed(lo, 1) + " - " + fixed(hi, 1); }

std::vector<PredictionRow> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(located(path.string(), 1, "missing header"));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tsv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(located(path.string(), 1, "missing column '" + name + "'"));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ci = column("id"), cg = column("gold"), cp = column("pred");
  std::vector<PredictionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tsv_line(line);
    if (fields.size() != header.size()) {
      throw FormatError(located(path.string(), lineno,
                                "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size())));
    }
    rows.push_back(PredictionRow{fields[ci], fields[cg], fields[cp]});
  }
  return rows;
}

void save_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id\tgold\tpred\n";
  for (const auto& r : rows) out << tsv_escape(r.id) << '\t' << tsv_escape(r.gold) << '\t' << tsv_escape(r.pred) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace adaptlm
