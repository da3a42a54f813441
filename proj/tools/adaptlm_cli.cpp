// adaptlm: select -> preprocess -> build-vocab -> pretrain -> finetune ->
// evaluate, plus a threshold sweep that runs the whole chain per bin.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adaptlm/checkpoint.hpp"
#include "adaptlm/corpus.hpp"
#include "adaptlm/errors.hpp"
#include "adaptlm/eval_report.hpp"
#include "adaptlm/manifest.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/run_config.hpp"
#include "adaptlm/textprep.hpp"
#include "adaptlm/tokenizer.hpp"
#include "adaptlm/training.hpp"

namespace fs = std::filesystem;
using namespace adaptlm;

namespace {

constexpr const char* kConfigEnv = "ADAPTLM_CONFIG";

// Raw TSV table; the first line is the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& path) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError(located(path.string(), 1, "missing column '" + name + "'"));
  }
};

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno > 1 && line.empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_tsv_line(line);
    } catch (const FormatError& e) {
      throw FormatError(located(path.string(), lineno, e.what()));
    }
    if (lineno == 1) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw FormatError(located(path.string(), lineno,
                                "expected " + std::to_string(t.header.size()) + " fields, got " +
                                    std::to_string(fields.size())));
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_table(const Table& t, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if (t.header.empty()) return;
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << tsv_escape(row[i]);
    out << '\n';
  };
  write_row(t.header);
  for (const auto& r : t.rows) write_row(r);
}

std::vector<std::string> text_column(const fs::path& path, const std::string& column) {
  const Table t = read_table(path);
  std::vector<std::string> out;
  if (t.header.empty()) return out;
  const std::size_t c = t.column(column, path);
  for (const auto& r : t.rows) out.push_back(r[c]);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path manifest_beside(const fs::path& output) { return output.string() + ".manifest.json"; }

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

RunConfig load_config(const Common& common) {
  std::string path = common.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (common.seed) cfg.seed = common.seed;
  if (common.output_dir) cfg.output_dir = fs::path(*common.output_dir);
  return cfg;
}

// Validation for commands that draw no random numbers: the seed may be absent.
void validate_unseeded(RunConfig cfg) {
  if (!cfg.seed) cfg.seed = 0;
  validate(cfg);
}

void validate_seeded(RunConfig& cfg) {
  validate(cfg);
  propagate_seed(cfg);
}

fs::path require_output_dir(const RunConfig& cfg) {
  if (!cfg.output_dir) throw ConfigError("output_dir: required (set it in the config or pass --output-dir)");
  fs::create_directories(*cfg.output_dir);
  return *cfg.output_dir;
}

template <typename T>
T require_path(const std::optional<T>& value, const std::string& key) {
  if (!value) throw ConfigError(key + ": required");
  return *value;
}

// Text preparation resources resolved from a PrepConfig.
struct Prep {
  PrepConfig cfg;
  std::optional<Lexicon> lexicon;
  std::optional<EmojiMap> emoji;

  explicit Prep(const PrepConfig& c) : cfg(c) {
    validate(cfg);
    if (cfg.segment_hashtags) {
      if (!cfg.lexicon_path) throw ConfigError("preprocess.lexicon: required when hashtag segmentation is on");
      if (!fs::exists(*cfg.lexicon_path)) {
        throw ConfigError("preprocess.lexicon: file not found: " + cfg.lexicon_path->string());
      }
      lexicon = load_lexicon(*cfg.lexicon_path);
    }
    if (cfg.demojize) {
      if (!cfg.emoji_map_path) throw ConfigError("preprocess.emoji_map: required when demojize is on");
      if (!fs::exists(*cfg.emoji_map_path)) {
        throw ConfigError("preprocess.emoji_map: file not found: " + cfg.emoji_map_path->string());
      }
      emoji = load_emoji_map(*cfg.emoji_map_path);
    }
  }

  std::string operator()(const std::string& text) const {
    return prepare(text, cfg, lexicon ? &*lexicon : nullptr, emoji ? &*emoji : nullptr);
  }
};

void prepare_texts(std::vector<std::string>& texts, const Prep& prep) {
  for (auto& t : texts) t = prep(t);
}

void prepare_dataset(LabeledDataset& ds, const Prep& prep) {
  for (auto& inst : ds.instances) inst.text = prep(inst.text);
}

struct LoadedModel {
  Model<float> model;
  Vocabulary vocab;
  CheckpointInfo info;
};

LoadedModel load_model_dir(const fs::path& dir, const std::optional<fs::path>& vocab_override) {
  auto ckpt = load_checkpoint(dir);
  const fs::path vocab_path = vocab_override ? *vocab_override : dir / "vocab.txt";
  Vocabulary vocab = load_vocab(vocab_path);
  if (vocab.size() != ckpt.model.config.vocab_size) {
    throw ConfigError("vocabulary " + vocab_path.string() + " has " + std::to_string(vocab.size()) +
                      " tokens but the checkpoint expects " + std::to_string(ckpt.model.config.vocab_size));
  }
  return LoadedModel{std::move(ckpt.model), std::move(vocab), std::move(ckpt.info)};
}

void save_model_dir(const Model<float>& model, const Vocabulary& vocab, const CheckpointInfo& info, const fs::path& dir) {
  save_checkpoint(model, dir, info);
  save_vocab(vocab, dir / "vocab.txt");
}

Model<float> fresh_model(const RunConfig& cfg, const Vocabulary& vocab) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  validate(mc);
  return init_params<float>(mc, derive_seed(*cfg.seed, "init"));
}

Vocabulary vocab_from(const RunConfig& cfg, std::span<const std::string> texts) {
  if (cfg.data.vocab) return load_vocab(*cfg.data.vocab);
  return build_vocab(texts, cfg.vocab);
}

LabeledDataset load_dataset(const RunConfig& cfg, const fs::path& path, std::vector<std::string> classes) {
  return load_labeled(path, cfg.data.labeled_columns, std::move(classes));
}

// Fine-tunes `model` in place on `train_path` and returns the class list.
std::vector<std::string> run_finetune(const RunConfig& cfg, Model<float>& model, const Vocabulary& vocab,
                                      const fs::path& train_path, const Prep* prep, FinetuneResult* result_out) {
  LabeledDataset train = load_dataset(cfg, train_path, cfg.data.classes);
  if (prep) prepare_dataset(train, *prep);
  if (cfg.finetune.max_len > model.config.max_position) {
    throw ConfigError("finetune.max_len exceeds model.max_position");
  }
  const auto examples = tokenize_labeled(train, vocab, cfg.finetune.max_len);
  auto result = finetune(examples, train.classes.size(), model, cfg.finetune);
  if (result_out) *result_out = std::move(result);
  return train.classes;
}

EvalReport run_evaluate(const RunConfig& cfg, const Model<float>& model, const Vocabulary& vocab,
                        const std::vector<std::string>& classes, const fs::path& test_path, const Prep* prep,
                        const std::string& dataset, const std::string& model_name,
                        std::vector<PredictionRow>* rows_out) {
  LabeledDataset test = load_dataset(cfg, test_path, classes);
  if (prep) prepare_dataset(test, *prep);
  const auto examples = tokenize_labeled(test, vocab, cfg.finetune.max_len);
  const auto preds = predict(model, examples, cfg.finetune.batch_size);
  std::vector<std::int32_t> gold;
  for (const auto& ex : examples) gold.push_back(ex.label);
  if (rows_out) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      rows_out->push_back(PredictionRow{test.instances[i].id, test.instances[i].label,
                                        classes[static_cast<std::size_t>(preds[i])]});
    }
  }
  return make_report(confusion(preds, gold, classes), dataset, model_name, config_hash(to_json(cfg)));
}

std::string format_extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return "json";
    case ReportFormat::markdown: return "md";
    case ReportFormat::tsv: return "tsv";
  }
  return "txt";
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string input, output;
  std::optional<double> lo, hi;
};

int cmd_select(const Common& common, const SelectArgs& a) {
  RunConfig cfg = load_config(common);
  if (a.lo) cfg.select.lo = *a.lo;
  if (a.hi) cfg.select.hi = *a.hi;
  if (cfg.select.lo > cfg.select.hi) {
    throw ConfigError("select: --lo (" + std::to_string(cfg.select.lo) + ") must not exceed --hi (" +
                      std::to_string(cfg.select.hi) + ")\nusage: adaptlm select --input FILE --lo X --hi Y --output FILE");
  }
  validate_unseeded(cfg);
  const auto all = load_scored(a.input, cfg.data.scored_columns);
  const auto kept = select_by_threshold(all, cfg.select.lo, cfg.select.hi);
  ensure_parent(a.output);
  save_scored(kept, a.output, cfg.data.scored_columns);

  std::cout << "| Threshold | Instances |\n|---|---|\n";
  nlohmann::json bins = nlohmann::json::array();
  for (int k = 0;; ++k) {
    const double lo = std::round((cfg.select.lo + 0.1 * k) * 10.0) / 10.0;
    if (lo > cfg.select.hi - 1e-9 && k > 0) break;
    const auto n = select_by_threshold(all, lo, cfg.select.hi).size();
    std::cout << "| " << bin_label(lo, cfg.select.hi) << " | " << n << " |\n";
    bins.push_back({{"lo", lo}, {"hi", cfg.select.hi}, {"instances", n}});
  }
  std::cout << "selected " << kept.size() << " of " << all.size() << " instances\n";

  RunManifest m;
  m.command = "select";
  m.config = to_json(cfg);
  m.inputs.push_back(digest_file("input", a.input));
  m.outputs.push_back(digest_file("output", a.output));
  m.results = {{"selected", kept.size()}, {"total", all.size()}, {"bins", bins}};
  write_run_manifest(m, manifest_beside(a.output));
  return 0;
}

struct PreprocessArgs {
  std::string input, output;
  std::string text_column = "text";
  std::optional<std::string> emoji_map, lexicon, url_placeholder, user_placeholder;
  std::optional<std::size_t> min_words, min_chars;
  std::optional<double> unknown_word_base;
  bool no_demojize = false, no_segment = false, no_filter = false;
};

int cmd_preprocess(const Common& common, const PreprocessArgs& a) {
  RunConfig cfg = load_config(common);
  auto& p = cfg.preprocess;
  if (a.emoji_map) p.emoji_map_path = fs::path(*a.emoji_map);
  if (a.lexicon) p.lexicon_path = fs::path(*a.lexicon);
  if (a.url_placeholder) p.url_placeholder = *a.url_placeholder;
  if (a.user_placeholder) p.user_placeholder = *a.user_placeholder;
  if (a.min_words) p.min_words = *a.min_words;
  if (a.min_chars) p.min_chars = *a.min_chars;
  if (a.unknown_word_base) p.unknown_word_base = *a.unknown_word_base;
  if (a.no_demojize) p.demojize = false;
  if (a.no_segment) p.segment_hashtags = false;
  const Prep prep(p);
  validate_unseeded(cfg);

  Table t = read_table(a.input);
  std::size_t dropped = 0;
  if (!t.header.empty()) {
    const std::size_t c = t.column(a.text_column, a.input);
    std::vector<std::vector<std::string>> kept;
    for (auto& row : t.rows) {
      if (a.no_filter || keep_instance(row[c], p)) {
        row[c] = prep(row[c]);
        kept.push_back(std::move(row));
      } else {
        ++dropped;
      }
    }
    t.rows = std::move(kept);
  }
  ensure_parent(a.output);
  write_table(t, a.output);
  std::cerr << "kept " << t.rows.size() << " rows, dropped " << dropped << "\n";

  RunManifest m;
  m.command = "preprocess";
  m.config = to_json(cfg);
  m.inputs.push_back(digest_file("input", a.input));
  if (p.lexicon_path && prep.lexicon) m.inputs.push_back(digest_file("lexicon", *p.lexicon_path));
  if (p.emoji_map_path && prep.emoji) m.inputs.push_back(digest_file("emoji_map", *p.emoji_map_path));
  m.outputs.push_back(digest_file("output", a.output));
  m.results = {{"kept", t.rows.size()}, {"dropped", dropped}};
  write_run_manifest(m, manifest_beside(a.output));
  return 0;
}

struct BuildVocabArgs {
  std::vector<std::string> inputs;
  std::string output;
  std::string text_column = "text";
  std::optional<std::size_t> target_size, min_frequency;
};

int cmd_build_vocab(const Common& common, const BuildVocabArgs& a) {
  RunConfig cfg = load_config(common);
  if (a.target_size) cfg.vocab.target_size = *a.target_size;
  if (a.min_frequency) cfg.vocab.min_frequency = *a.min_frequency;
  validate_unseeded(cfg);
  std::vector<std::string> texts;
  for (const auto& in : a.inputs) {
    auto part = text_column(in, a.text_column);
    texts.insert(texts.end(), part.begin(), part.end());
  }
  const Vocabulary vocab = build_vocab(texts, cfg.vocab);
  ensure_parent(a.output);
  save_vocab(vocab, a.output);
  std::cerr << "vocabulary: " << vocab.size() << " tokens\n";

  RunManifest m;
  m.command = "build-vocab";
  m.config = to_json(cfg);
  for (const auto& in : a.inputs) m.inputs.push_back(digest_file("input", in));
  m.outputs.push_back(digest_file("vocab", a.output));
  m.results = {{"vocab_size", vocab.size()}};
  write_run_manifest(m, manifest_beside(a.output));
  return 0;
}

struct PretrainArgs {
  std::optional<std::string> corpus, vocab, init;
  std::optional<std::size_t> epochs, batch_size, max_steps, max_len, checkpoint_every;
  std::optional<double> lr;
};

int cmd_pretrain(const Common& common, const PretrainArgs& a) {
  RunConfig cfg = load_config(common);
  if (a.corpus) cfg.data.corpus = fs::path(*a.corpus);
  if (a.vocab) cfg.data.vocab = fs::path(*a.vocab);
  if (a.epochs) cfg.pretrain.epochs = *a.epochs;
  if (a.batch_size) cfg.pretrain.batch_size = *a.batch_size;
  if (a.max_steps) cfg.pretrain.max_steps = *a.max_steps;
  if (a.max_len) cfg.pretrain.max_len = *a.max_len;
  if (a.checkpoint_every) cfg.pretrain.checkpoint_every = *a.checkpoint_every;
  if (a.lr) cfg.pretrain.lr = *a.lr;
  validate_seeded(cfg);
  const fs::path out = require_output_dir(cfg);
  const fs::path corpus = require_path(cfg.data.corpus, "data.corpus");

  std::vector<std::string> texts = text_column(corpus, cfg.data.scored_columns.text);
  std::unique_ptr<Prep> prep;
  if (cfg.preprocess_train) {
    prep = std::make_unique<Prep>(cfg.preprocess);
    prepare_texts(texts, *prep);
  }

  std::optional<LoadedModel> loaded;
  if (a.init) {
    loaded = load_model_dir(*a.init, cfg.data.vocab);
  } else {
    Vocabulary v = load_vocab(require_path(cfg.data.vocab, "data.vocab"));
    Model<float> fresh = fresh_model(cfg, v);
    loaded = LoadedModel{std::move(fresh), std::move(v), {}};
  }
  const Vocabulary& vocab = loaded->vocab;
  Model<float>& model = loaded->model;

  PretrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t step, const Model<float>& m) {
    save_model_dir(m, vocab, CheckpointInfo{*cfg.seed, {}}, out / ("checkpoint-step-" + std::to_string(step)));
  };
  const TrainLog log = pretrain(texts, vocab, model, cfg.pretrain, hooks);
  save_model_dir(model, vocab, CheckpointInfo{*cfg.seed, {}}, out / "checkpoint");
  write_step_log(log, out / "train_log.jsonl");
  if (!log.steps.empty()) std::cerr << "final step " << log.steps.back().step << " loss " << log.steps.back().loss << "\n";

  RunManifest m;
  m.command = "pretrain";
  m.config = to_json(cfg);
  m.seed = *cfg.seed;
  m.inputs.push_back(digest_file("corpus", corpus));
  if (cfg.data.vocab) m.inputs.push_back(digest_file("vocab", *cfg.data.vocab));
  if (a.init) m.inputs.push_back(digest_file("init_checkpoint", *a.init));
  m.outputs.push_back(digest_file("checkpoint", out / "checkpoint"));
  m.outputs.push_back(digest_file("train_log", out / "train_log.jsonl"));
  m.stop_reason = log.stop_reason;
  m.results = {{"steps", log.steps.size()},
               {"lr_schedule", log.lr_schedule},
               {"final_loss", log.steps.empty() ? nlohmann::json(nullptr) : nlohmann::json(log.steps.back().loss)}};
  write_run_manifest(m, out / "run_manifest.json");
  return 0;
}

struct FinetuneArgs {
  std::optional<std::string> train, checkpoint, vocab;
  bool from_scratch = false;
  std::optional<std::size_t> epochs, batch_size, eval_patience, eval_every, grad_accum;
  std::optional<double> lr, eval_fraction;
};

int cmd_finetune(const Common& common, const FinetuneArgs& a) {
  RunConfig cfg = load_config(common);
  if (a.train) cfg.data.train = fs::path(*a.train);
  if (a.vocab) cfg.data.vocab = fs::path(*a.vocab);
  if (a.epochs) cfg.finetune.epochs = *a.epochs;
  if (a.batch_size) cfg.finetune.batch_size = *a.batch_size;
  if (a.eval_patience) cfg.finetune.eval_patience = *a.eval_patience;
  if (a.eval_every) cfg.finetune.eval_every = *a.eval_every;
  if (a.grad_accum) cfg.finetune.gradient_accumulation_steps = *a.grad_accum;
  if (a.lr) cfg.finetune.lr = *a.lr;
  if (a.eval_fraction) cfg.finetune.eval_fraction = *a.eval_fraction;
  validate_seeded(cfg);
  if (a.checkpoint.has_value() == a.from_scratch) {
    throw ConfigError("finetune: pass exactly one of --checkpoint DIR or --from-scratch");
  }
  const fs::path out = require_output_dir(cfg);
  const fs::path train_path = require_path(cfg.data.train, "data.train");

  std::optional<LoadedModel> loaded;
  if (a.checkpoint) {
    loaded = load_model_dir(*a.checkpoint, cfg.data.vocab);
  } else {
    Vocabulary vocab = load_vocab(require_path(cfg.data.vocab, "data.vocab"));
    Model<float> model = fresh_model(cfg, vocab);
    loaded = LoadedModel{std::move(model), std::move(vocab), {}};
  }
  std::unique_ptr<Prep> prep;
  if (cfg.preprocess_train) prep = std::make_unique<Prep>(cfg.preprocess);

  FinetuneResult result;
  const auto classes = run_finetune(cfg, loaded->model, loaded->vocab, train_path, prep.get(), &result);
  save_model_dir(loaded->model, loaded->vocab, CheckpointInfo{*cfg.seed, classes}, out / "checkpoint");
  write_step_log(result.log, out / "train_log.jsonl");
  write_eval_log(result.log, out / "eval_log.jsonl");
  std::cerr << "stop reason " << result.log.stop_reason << " after " << result.log.steps.size() << " steps\n";

  RunManifest m;
  m.command = "finetune";
  m.config = to_json(cfg);
  m.seed = *cfg.seed;
  m.inputs.push_back(digest_file("train", train_path));
  if (a.checkpoint) m.inputs.push_back(digest_file("checkpoint", *a.checkpoint));
  m.outputs.push_back(digest_file("checkpoint", out / "checkpoint"));
  m.outputs.push_back(digest_file("train_log", out / "train_log.jsonl"));
  m.outputs.push_back(digest_file("eval_log", out / "eval_log.jsonl"));
  m.stop_reason = result.log.stop_reason;
  m.results = {{"steps", result.log.steps.size()},
               {"lr_schedule", result.log.lr_schedule},
               {"evaluations", result.log.evaluations.size()},
               {"best_evaluation", result.log.best_evaluation},
               {"best_eval_loss", std::isnan(result.best_eval_loss) ? nlohmann::json(nullptr)
                                                                    : nlohmann::json(result.best_eval_loss)},
               {"train_examples", result.train_examples},
               {"eval_examples", result.eval_examples},
               {"classes", classes}};
  write_run_manifest(m, out / "run_manifest.json");
  return 0;
}

struct EvaluateArgs {
  std::optional<std::string> checkpoint, test, predictions, output, predictions_out, vocab;
  std::string format = "markdown";
  std::string dataset, model_name;
  std::vector<std::string> classes;
};

int cmd_evaluate(const Common& common, const EvaluateArgs& a) {
  RunConfig cfg = load_config(common);
  if (a.test) cfg.data.test = fs::path(*a.test);
  if (!a.classes.empty()) cfg.data.classes = a.classes;
  const ReportFormat format = parse_report_format(a.format);
  if (a.checkpoint.has_value() == a.predictions.has_value()) {
    throw ConfigError("evaluate: pass exactly one of --checkpoint DIR or --predictions FILE");
  }

  RunManifest m;
  m.command = "evaluate";
  EvalReport report;
  if (a.predictions) {
    validate_unseeded(cfg);
    const auto rows = load_predictions(*a.predictions);
    std::vector<std::string> preds, gold;
    for (const auto& r : rows) {
      preds.push_back(r.pred);
      gold.push_back(r.gold);
    }
    std::vector<std::string> classes = cfg.data.classes;
    if (classes.empty()) {
      std::set<std::string> seen(gold.begin(), gold.end());
      seen.insert(preds.begin(), preds.end());
      classes.assign(seen.begin(), seen.end());
      if (classes.empty()) throw DataError("evaluate: predictions file has no rows and no classes were declared");
    }
    report = make_report(confusion(preds, gold, classes), a.dataset.empty() ? fs::path(*a.predictions).stem().string() : a.dataset,
                         a.model_name.empty() ? "predictions" : a.model_name, config_hash(to_json(cfg)));
    m.inputs.push_back(digest_file("predictions", *a.predictions));
  } else {
    validate_unseeded(cfg);
    const fs::path test = require_path(cfg.data.test, "data.test");
    auto loaded = load_model_dir(*a.checkpoint, a.vocab ? std::optional<fs::path>(*a.vocab) : std::nullopt);
    if (loaded.info.classes.empty()) throw ConfigError("evaluate: checkpoint has no class list; fine-tune it first");
    std::unique_ptr<Prep> prep;
    if (cfg.preprocess_train) prep = std::make_unique<Prep>(cfg.preprocess);
    std::vector<PredictionRow> rows;
    report = run_evaluate(cfg, loaded.model, loaded.vocab, loaded.info.classes, test, prep.get(),
                          a.dataset.empty() ? test.stem().string() : a.dataset,
                          a.model_name.empty() ? fs::path(*a.checkpoint).lexically_normal().string() : a.model_name, &rows);
    if (a.predictions_out) {
      ensure_parent(*a.predictions_out);
      save_predictions(rows, *a.predictions_out);
      m.outputs.push_back(digest_file("predictions", *a.predictions_out));
    }
    m.inputs.push_back(digest_file("test", test));
    m.inputs.push_back(digest_file("checkpoint", *a.checkpoint));
  }
  const std::vector<EvalReport> reports{report};
  const std::string text = render(reports, format);
  m.config = to_json(cfg);
  m.seed = cfg.seed.value_or(0);
  m.results = report_to_json(report);
  if (a.output) {
    ensure_parent(*a.output);
    write_text(*a.output, text);
    m.outputs.push_back(digest_file("report", *a.output));
    write_run_manifest(m, manifest_beside(*a.output));
  } else {
    std::cout << text;
  }
  std::cerr << "macro F1 " << report.macro_f1 << "\n";
  return 0;
}

int cmd_sweep(const Common& common) {
  RunConfig cfg = load_config(common);
  validate_seeded(cfg);
  const fs::path out = require_output_dir(cfg);
  const fs::path scored_path = require_path(cfg.data.scored, "data.scored");
  if (cfg.sweep.bins.empty()) throw ConfigError("sweep.bins: at least one bin is required");
  std::vector<SweepDataset> datasets = cfg.sweep.datasets;
  if (datasets.empty()) {
    datasets.push_back(SweepDataset{"default", require_path(cfg.data.train, "data.train"),
                                    require_path(cfg.data.test, "data.test")});
  }
  std::unique_ptr<Prep> prep;
  if (cfg.preprocess_train) prep = std::make_unique<Prep>(cfg.preprocess);

  const auto scored = load_scored(scored_path, cfg.data.scored_columns);
  std::vector<std::string> vocab_texts;
  for (const auto& s : scored) vocab_texts.push_back(prep ? (*prep)(s.text) : s.text);
  for (const auto& d : datasets) {
    for (const auto& inst : load_dataset(cfg, d.train, cfg.data.classes).instances) {
      vocab_texts.push_back(prep ? (*prep)(inst.text) : inst.text);
    }
  }
  const Vocabulary vocab = vocab_from(cfg, vocab_texts);
  save_vocab(vocab, out / "vocab.txt");

  std::vector<std::string> dataset_names;
  for (const auto& d : datasets) dataset_names.push_back(d.name);
  std::vector<EvalReport> comparison;
  nlohmann::json runs = nlohmann::json::array();

  auto finetune_and_score = [&](const Model<float>& start, const SweepDataset& d, const std::string& model_name) {
    Model<float> model = start;
    FinetuneResult result;
    const auto classes = run_finetune(cfg, model, vocab, d.train, prep.get(), &result);
    EvalReport report = run_evaluate(cfg, model, vocab, classes, d.test, prep.get(), d.name, model_name, nullptr);
    runs.push_back({{"model", model_name},
                    {"dataset", d.name},
                    {"macro_f1", report.macro_f1},
                    {"stop_reason", result.log.stop_reason},
                    {"finetune_steps", result.log.steps.size()}});
    comparison.push_back(report);
    return report.macro_f1;
  };

  std::map<std::string, Model<float>> pretrained;
  const auto table = threshold_sweep(cfg.sweep.bins, dataset_names, [&](const ThresholdBin& bin, std::size_t di) {
    const std::string label = bin.name.empty() ? bin_label(bin.lo, bin.hi) : bin.name;
    auto it = pretrained.find(label);
    if (it == pretrained.end()) {
      std::vector<std::string> texts;
      for (const auto& s : select_by_threshold(scored, bin.lo, bin.hi)) texts.push_back(prep ? (*prep)(s.text) : s.text);
      if (texts.empty()) throw DataError("sweep: bin " + label + " selects no instances");
      Model<float> model = fresh_model(cfg, vocab);
      const TrainLog log = pretrain(texts, vocab, model, cfg.pretrain);
      std::cerr << "bin " << label << ": " << texts.size() << " texts, " << log.steps.size() << " pretraining steps\n";
      it = pretrained.emplace(label, std::move(model)).first;
    }
    return finetune_and_score(it->second, datasets[di], "adapted " + label);
  });

  if (cfg.sweep.include_baseline) {
    const Model<float> base = fresh_model(cfg, vocab);
    for (const auto& d : datasets) finetune_and_score(base, d, "baseline");
  }

  for (ReportFormat f : {ReportFormat::markdown, ReportFormat::tsv, ReportFormat::json}) {
    write_text(out / ("thresholds." + format_extension(f)), render_threshold_table(table, f));
    write_text(out / ("comparison." + format_extension(f)), render(comparison, f));
  }
  std::cout << render_threshold_table(table, ReportFormat::markdown) << '\n' << render(comparison, ReportFormat::markdown);

  RunManifest m;
  m.command = "sweep";
  m.config = to_json(cfg);
  m.seed = *cfg.seed;
  m.inputs.push_back(digest_file("scored", scored_path));
  for (const auto& d : datasets) {
    m.inputs.push_back(digest_file(d.name + ".train", d.train));
    m.inputs.push_back(digest_file(d.name + ".test", d.test));
  }
  for (const char* name : {"thresholds.md", "comparison.md", "vocab.txt"}) m.outputs.push_back(digest_file(name, out / name));
  m.results = {{"runs", runs}};
  write_run_manifest(m, out / "run_manifest.json");
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, std::string("JSON run config (default: $") + kConfigEnv + ")");
  sub->add_option("--seed", c.seed, "Run seed");
  sub->add_option("--output-dir", c.output_dir, "Output directory");
}

int run(int argc, char** argv) {
  CLI::App app{"Domain-adaptive masked-language-model pipeline"};
  app.require_subcommand(1);

  Common common;
  SelectArgs sel;
  auto* s = app.add_subcommand("select", "Keep scored instances with lo <= score <= hi");
  add_common(s, common);
  s->add_option("--input", sel.input, "Scored TSV")->required();
  s->add_option("--output", sel.output, "Filtered TSV")->required();
  s->add_option("--lo", sel.lo, "Lower score bound (inclusive)");
  s->add_option("--hi", sel.hi, "Upper score bound (inclusive)");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Normalize, demojize, segment hashtags and filter short rows");
  add_common(p, common);
  p->add_option("--input", pre.input, "TSV input")->required();
  p->add_option("--output", pre.output, "TSV output")->required();
  p->add_option("--text-column", pre.text_column, "Column to clean");
  p->add_option("--emoji-map", pre.emoji_map, "emoji<TAB>:name: file");
  p->add_option("--lexicon", pre.lexicon, "word<TAB>count file");
  p->add_option("--url-placeholder", pre.url_placeholder);
  p->add_option("--user-placeholder", pre.user_placeholder);
  p->add_option("--min-words", pre.min_words);
  p->add_option("--min-chars", pre.min_chars);
  p->add_option("--unknown-word-base", pre.unknown_word_base);
  p->add_flag("--no-demojize", pre.no_demojize);
  p->add_flag("--no-segment-hashtags", pre.no_segment);
  p->add_flag("--no-filter", pre.no_filter, "Keep rows that fail the length filter");

  BuildVocabArgs bv;
  auto* b = app.add_subcommand("build-vocab", "Train a WordPiece vocabulary");
  add_common(b, common);
  b->add_option("--input", bv.inputs, "TSV file(s) with a text column")->required();
  b->add_option("--output", bv.output, "Vocabulary file")->required();
  b->add_option("--text-column", bv.text_column);
  b->add_option("--target-size", bv.target_size);
  b->add_option("--min-frequency", bv.min_frequency);

  PretrainArgs pt;
  auto* r = app.add_subcommand("pretrain", "Masked-language-model training on a text corpus");
  add_common(r, common);
  r->add_option("--corpus", pt.corpus, "TSV corpus (text column)");
  r->add_option("--vocab", pt.vocab, "Vocabulary file");
  r->add_option("--init", pt.init, "Continue from a checkpoint directory");
  r->add_option("--epochs", pt.epochs);
  r->add_option("--batch-size", pt.batch_size);
  r->add_option("--max-steps", pt.max_steps);
  r->add_option("--max-len", pt.max_len);
  r->add_option("--checkpoint-every", pt.checkpoint_every);
  r->add_option("--lr", pt.lr);

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Train the classifier and encoder on labeled data");
  add_common(f, common);
  f->add_option("--train", ft.train, "Labeled TSV");
  f->add_option("--checkpoint", ft.checkpoint, "Pretrained checkpoint directory");
  f->add_flag("--from-scratch", ft.from_scratch, "Start from a fresh initialization (needs --vocab)");
  f->add_option("--vocab", ft.vocab, "Vocabulary file");
  f->add_option("--epochs", ft.epochs);
  f->add_option("--batch-size", ft.batch_size);
  f->add_option("--eval-patience", ft.eval_patience);
  f->add_option("--eval-every", ft.eval_every);
  f->add_option("--gradient-accumulation-steps", ft.grad_accum);
  f->add_option("--lr", ft.lr);
  f->add_option("--eval-fraction", ft.eval_fraction);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a fine-tuned checkpoint or a predictions file");
  add_common(e, common);
  e->add_option("--checkpoint", ev.checkpoint, "Fine-tuned checkpoint directory");
  e->add_option("--test", ev.test, "Labeled TSV");
  e->add_option("--predictions", ev.predictions, "TSV with id, gold, pred");
  e->add_option("--vocab", ev.vocab, "Vocabulary file (default: the checkpoint's)");
  e->add_option("--format", ev.format, "json, markdown or tsv");
  e->add_option("--output", ev.output, "Report file (default: stdout)");
  e->add_option("--predictions-out", ev.predictions_out, "Write per-example predictions");
  e->add_option("--dataset", ev.dataset, "Dataset name in the report");
  e->add_option("--model-name", ev.model_name, "Model name in the report");
  e->add_option("--classes", ev.classes, "Declared class list")->delimiter(',');

  auto* w = app.add_subcommand("sweep", "Threshold sweep: select, pretrain, fine-tune and evaluate per bin");
  add_common(w, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n" << app.help();
    return 2;
  }

  if (s->parsed()) return cmd_select(common, sel);
  if (p->parsed()) return cmd_preprocess(common, pre);
  if (b->parsed()) return cmd_build_vocab(common, bv);
  if (r->parsed()) return cmd_pretrain(common, pt);
  if (f->parsed()) return cmd_finetune(common, ft);
  if (e->parsed()) return cmd_evaluate(common, ev);
  if (w->parsed()) return cmd_sweep(common);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
