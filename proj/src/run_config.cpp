#include "adaptlm/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>
#include <zlib.h>

#include "adaptlm/errors.hpp"

namespace adaptlm {

using nlohmann::json;

namespace {

std::string join_key(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

// Reads fields out of one JSON object and reports keys it never consumed.
class Reader {
 public:
  Reader(const json& j, std::string where, std::filesystem::path base = {})
      : j_(j), where_(std::move(where)), base_(std::move(base)) {
    if (!j_.is_object()) throw ConfigError((where_.empty() ? std::string("config") : where_) + ": expected an object");
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join_key(where_, key) + ": unknown key");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::string key(const std::string& k) const { return join_key(where_, k); }

  void get(const std::string& k, bool& out) {
    if (const json* v = find(k)) {
      if (!v->is_boolean()) throw ConfigError(key(k) + ": expected a boolean");
      out = v->get<bool>();
    }
  }

  void get(const std::string& k, double& out) {
    if (const json* v = find(k)) {
      if (!v->is_number()) throw ConfigError(key(k) + ": expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(key(k) + ": expected a finite number");
    }
  }

  void get(const std::string& k, std::size_t& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        throw ConfigError(key(k) + ": expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void get(const std::string& k, std::string& out) {
    if (const json* v = find(k)) {
      if (!v->is_string()) throw ConfigError(key(k) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& k, std::optional<std::filesystem::path>& out) {
    if (const json* v = find(k)) out = path_value(k, *v);
  }

  void get(const std::string& k, std::filesystem::path& out) {
    if (const json* v = find(k)) out = path_value(k, *v);
  }

  void get(const std::string& k, std::vector<std::string>& out) {
    if (const json* v = find(k)) {
      if (!v->is_array()) throw ConfigError(key(k) + ": expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError(key(k) + ": expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  const std::filesystem::path& base() const { return base_; }

 private:
  std::filesystem::path path_value(const std::string& k, const json& v) const {
    if (!v.is_string()) throw ConfigError(key(k) + ": expected a path string");
    std::filesystem::path p = v.get<std::string>();
    if (p.empty()) throw ConfigError(key(k) + ": path is empty");
    if (p.is_relative() && !base_.empty()) p = base_ / p;
    return p;
  }

  const json& j_;
  std::string where_;
  std::filesystem::path base_;
  std::set<std::string> seen_;
};

void read_masking(Reader& r, MaskingConfig& m) {
  r.get("mask_prob", m.mask_prob);
  r.get("replace_mask_frac", m.replace_mask_frac);
  r.get("replace_random_frac", m.replace_random_frac);
  r.get("keep_frac", m.keep_frac);
}

void read_model(Reader& r, ModelConfig& m) {
  r.get("num_layers", m.num_layers);
  r.get("hidden_size", m.hidden_size);
  r.get("num_heads", m.num_heads);
  r.get("intermediate_size", m.intermediate_size);
  r.get("vocab_size", m.vocab_size);
  r.get("max_position", m.max_position);
  r.get("num_labels", m.num_labels);
  r.get("dropout_rate", m.dropout_rate);
  r.get("layer_norm_epsilon", m.layer_norm_epsilon);
  r.get("tie_mlm_weights", m.tie_mlm_weights);
}

void read_scored_columns(Reader& r, ScoredColumns& c) {
  r.get("id", c.id);
  r.get("text", c.text);
  r.get("score", c.score);
}

void read_labeled_columns(Reader& r, LabeledColumns& c) {
  r.get("id", c.id);
  r.get("text", c.text);
  r.get("label", c.label);
}

json optional_path(const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); }

void require_exists(const std::optional<std::filesystem::path>& p, const std::string& key) {
  if (p && !std::filesystem::exists(*p)) throw ConfigError(key + ": file not found: " + p->string());
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& m) {
  return json{{"num_layers", m.num_layers},
              {"hidden_size", m.hidden_size},
              {"num_heads", m.num_heads},
              {"intermediate_size", m.intermediate_size},
              {"vocab_size", m.vocab_size},
              {"max_position", m.max_position},
              {"num_labels", m.num_labels},
              {"dropout_rate", m.dropout_rate},
              {"layer_norm_epsilon", m.layer_norm_epsilon},
              {"tie_mlm_weights", m.tie_mlm_weights}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where) {
  ModelConfig m;
  Reader r(j, where);
  read_model(r, m);
  return m;
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  Reader root(j, "", base_dir);
  if (const json* v = root.find("seed")) {
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      throw ConfigError("seed: expected a non-negative integer");
    }
    c.seed = v->get<std::uint64_t>();
  }
  root.get("output_dir", c.output_dir);
  root.get("preprocess_train", c.preprocess_train);

  if (const json* v = root.find("data")) {
    Reader r(*v, "data", base_dir);
    r.get("scored", c.data.scored);
    r.get("corpus", c.data.corpus);
    r.get("train", c.data.train);
    r.get("test", c.data.test);
    r.get("vocab", c.data.vocab);
    r.get("classes", c.data.classes);
    if (const json* s = r.find("scored_columns")) {
      Reader sr(*s, "data.scored_columns");
      read_scored_columns(sr, c.data.scored_columns);
    }
    if (const json* s = r.find("labeled_columns")) {
      Reader sr(*s, "data.labeled_columns");
      read_labeled_columns(sr, c.data.labeled_columns);
    }
  }
  if (const json* v = root.find("select")) {
    Reader r(*v, "select");
    r.get("lo", c.select.lo);
    r.get("hi", c.select.hi);
  }
  if (const json* v = root.find("preprocess")) {
    Reader r(*v, "preprocess", base_dir);
    r.get("url_placeholder", c.preprocess.url_placeholder);
    r.get("user_placeholder", c.preprocess.user_placeholder);
    r.get("emoji_map", c.preprocess.emoji_map_path);
    r.get("lexicon", c.preprocess.lexicon_path);
    r.get("min_words", c.preprocess.min_words);
    r.get("min_chars", c.preprocess.min_chars);
    r.get("demojize", c.preprocess.demojize);
    r.get("segment_hashtags", c.preprocess.segment_hashtags);
    r.get("unknown_word_base", c.preprocess.unknown_word_base);
  }
  if (const json* v = root.find("vocab")) {
    Reader r(*v, "vocab");
    r.get("target_size", c.vocab.target_size);
    r.get("min_frequency", c.vocab.min_frequency);
  }
  if (const json* v = root.find("model")) {
    Reader r(*v, "model");
    read_model(r, c.model);
  }
  if (const json* v = root.find("pretrain")) {
    Reader r(*v, "pretrain");
    auto& p = c.pretrain;
    r.get("epochs", p.epochs);
    r.get("batch_size", p.batch_size);
    r.get("max_len", p.max_len);
    r.get("lr", p.lr);
    r.get("beta1", p.beta1);
    r.get("beta2", p.beta2);
    r.get("adam_epsilon", p.adam_epsilon);
    r.get("max_grad_norm", p.max_grad_norm);
    r.get("max_steps", p.max_steps);
    r.get("checkpoint_every", p.checkpoint_every);
    read_masking(r, p.masking);
  }
  if (const json* v = root.find("finetune")) {
    Reader r(*v, "finetune");
    auto& f = c.finetune;
    r.get("epochs", f.epochs);
    r.get("batch_size", f.batch_size);
    r.get("lr", f.lr);
    r.get("beta1", f.beta1);
    r.get("beta2", f.beta2);
    r.get("adam_epsilon", f.adam_epsilon);
    r.get("warmup_ratio", f.warmup_ratio);
    r.get("max_grad_norm", f.max_grad_norm);
    r.get("max_len", f.max_len);
    r.get("gradient_accumulation_steps", f.gradient_accumulation_steps);
    r.get("eval_patience", f.eval_patience);
    r.get("eval_fraction", f.eval_fraction);
    r.get("eval_every", f.eval_every);
    r.get("early_stopping", f.early_stopping);
  }
  if (const json* v = root.find("sweep")) {
    Reader r(*v, "sweep", base_dir);
    r.get("include_baseline", c.sweep.include_baseline);
    if (const json* bins = r.find("bins")) {
      if (!bins->is_array()) throw ConfigError("sweep.bins: expected an array");
      for (std::size_t i = 0; i < bins->size(); ++i) {
        Reader br((*bins)[i], "sweep.bins[" + std::to_string(i) + "]");
        SweepBin b;
        br.get("name", b.name);
        br.get("lo", b.lo);
        br.get("hi", b.hi);
        c.sweep.bins.push_back(b);
      }
    }
    if (const json* ds = r.find("datasets")) {
      if (!ds->is_array()) throw ConfigError("sweep.datasets: expected an array");
      for (std::size_t i = 0; i < ds->size(); ++i) {
        Reader dr((*ds)[i], "sweep.datasets[" + std::to_string(i) + "]", base_dir);
        SweepDataset d;
        dr.get("name", d.name);
        dr.get("train", d.train);
        dr.get("test", d.test);
        c.sweep.datasets.push_back(d);
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["output_dir"] = optional_path(c.output_dir);
  j["preprocess_train"] = c.preprocess_train;
  j["data"] = {{"scored", optional_path(c.data.scored)},
               {"corpus", optional_path(c.data.corpus)},
               {"train", optional_path(c.data.train)},
               {"test", optional_path(c.data.test)},
               {"vocab", optional_path(c.data.vocab)},
               {"classes", c.data.classes},
               {"scored_columns",
                {{"id", c.data.scored_columns.id}, {"text", c.data.scored_columns.text}, {"score", c.data.scored_columns.score}}},
               {"labeled_columns",
                {{"id", c.data.labeled_columns.id},
                 {"text", c.data.labeled_columns.text},
                 {"label", c.data.labeled_columns.label}}}};
  j["select"] = {{"lo", c.select.lo}, {"hi", c.select.hi}};
  const auto& p = c.preprocess;
  j["preprocess"] = {{"url_placeholder", p.url_placeholder},
                     {"user_placeholder", p.user_placeholder},
                     {"emoji_map", optional_path(p.emoji_map_path)},
                     {"lexicon", optional_path(p.lexicon_path)},
                     {"min_words", p.min_words},
                     {"min_chars", p.min_chars},
                     {"demojize", p.demojize},
                     {"segment_hashtags", p.segment_hashtags},
                     {"unknown_word_base", p.unknown_word_base}};
  j["vocab"] = {{"target_size", c.vocab.target_size}, {"min_frequency", c.vocab.min_frequency}};
  j["model"] = model_config_to_json(c.model);
  const auto& pt = c.pretrain;
  j["pretrain"] = {{"epochs", pt.epochs},
                   {"batch_size", pt.batch_size},
                   {"max_len", pt.max_len},
                   {"lr", pt.lr},
                   {"beta1", pt.beta1},
                   {"beta2", pt.beta2},
                   {"adam_epsilon", pt.adam_epsilon},
                   {"max_grad_norm", pt.max_grad_norm},
                   {"max_steps", pt.max_steps},
                   {"checkpoint_every", pt.checkpoint_every},
                   {"mask_prob", pt.masking.mask_prob},
                   {"replace_mask_frac", pt.masking.replace_mask_frac},
                   {"replace_random_frac", pt.masking.replace_random_frac},
                   {"keep_frac", pt.masking.keep_frac}};
  const auto& f = c.finetune;
  j["finetune"] = {{"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"lr", f.lr},
                   {"beta1", f.beta1},
                   {"beta2", f.beta2},
                   {"adam_epsilon", f.adam_epsilon},
                   {"warmup_ratio", f.warmup_ratio},
                   {"max_grad_norm", f.max_grad_norm},
                   {"max_len", f.max_len},
                   {"gradient_accumulation_steps", f.gradient_accumulation_steps},
                   {"eval_patience", f.eval_patience},
                   {"eval_fraction", f.eval_fraction},
                   {"eval_every", f.eval_every},
                   {"early_stopping", f.early_stopping}};
  json bins = json::array();
  for (const auto& b : c.sweep.bins) bins.push_back({{"name", b.name}, {"lo", b.lo}, {"hi", b.hi}});
  json datasets = json::array();
  for (const auto& d : c.sweep.datasets) {
    datasets.push_back({{"name", d.name}, {"train", d.train.string()}, {"test", d.test.string()}});
  }
  j["sweep"] = {{"include_baseline", c.sweep.include_baseline}, {"bins", bins}, {"datasets", datasets}};
  return j;
}

void propagate_seed(RunConfig& c) {
  if (!c.seed) return;
  c.pretrain.seed = *c.seed;
  c.finetune.seed = *c.seed;
}

void validate(const RunConfig& c) {
  if (!c.seed) throw ConfigError("seed: required");
  if (!(c.select.lo >= 0.0 && c.select.hi <= 1.0 && c.select.lo <= c.select.hi)) {
    throw ConfigError("select: need 0 <= lo <= hi <= 1");
  }
  validate(c.preprocess);
  if (c.vocab.target_size < 6) throw ConfigError("vocab.target_size must be at least 6");
  ModelConfig model = c.model;
  if (model.vocab_size == 0) model.vocab_size = 6;
  validate(model);
  validate(c.pretrain);
  validate(c.finetune);
  for (std::size_t i = 0; i < c.sweep.bins.size(); ++i) {
    const auto& b = c.sweep.bins[i];
    const std::string key = "sweep.bins[" + std::to_string(i) + "]";
    if (b.name.empty()) throw ConfigError(key + ".name: required");
    if (!(b.lo >= 0.0 && b.hi <= 1.0 && b.lo <= b.hi)) throw ConfigError(key + ": need 0 <= lo <= hi <= 1");
  }
  for (std::size_t i = 0; i < c.sweep.datasets.size(); ++i) {
    const auto& d = c.sweep.datasets[i];
    const std::string key = "sweep.datasets[" + std::to_string(i) + "]";
    if (d.name.empty()) throw ConfigError(key + ".name: required");
    require_exists(d.train, key + ".train");
    require_exists(d.test, key + ".test");
  }
  require_exists(c.data.scored, "data.scored");
  require_exists(c.data.corpus, "data.corpus");
  require_exists(c.data.train, "data.train");
  require_exists(c.data.test, "data.test");
  require_exists(c.data.vocab, "data.vocab");
  require_exists(c.preprocess.emoji_map_path, "preprocess.emoji_map");
  require_exists(c.preprocess.lexicon_path, "preprocess.lexicon");
}

std::string config_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace adaptlm
