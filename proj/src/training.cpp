#include "adaptlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <utility>

#include "adaptlm/errors.hpp"
#include "adaptlm/graph.hpp"
#include "adaptlm/optim.hpp"

namespace adaptlm {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool is_fraction(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

void mask_row(std::span<TokenId> ids, std::span<const std::uint8_t> attention, std::span<TokenId> targets,
              std::span<std::uint8_t> indicator, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng) {
  const auto& regular = vocab.regular_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    targets[i] = ids[i];
    indicator[i] = 0;
    if (!attention[i] || vocab.is_special(ids[i])) continue;
    if (uniform01(rng) >= cfg.mask_prob) continue;
    indicator[i] = 1;
    const double u = uniform01(rng);
    if (u < cfg.replace_mask_frac) {
      ids[i] = vocab.mask_id();
    } else if (u < cfg.replace_mask_frac + cfg.replace_random_frac) {
      if (regular.empty()) throw ContractError("mask_tokens: vocabulary has no regular tokens to sample");
      ids[i] = regular[uniform_index(rng, regular.size())];
    }
  }
}

EncoderInput encoder_input(const Batch& b) {
  return EncoderInput{b.batch_size, b.seq_len, b.ids, b.attention_mask};
}

std::vector<BasicTensor<float>> snapshot(const Model<float>& model) {
  std::vector<BasicTensor<float>> out;
  for (const auto& p : model.named_parameters()) {
    BasicTensor<float> copy(p.tensor->shape(), std::vector<float>(p.tensor->values()));
    out.push_back(std::move(copy));
  }
  return out;
}

void restore(Model<float>& model, const std::vector<BasicTensor<float>>& saved) {
  auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor->data();
    auto src = saved[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void check_grads(Model<float>& model, std::size_t step) {
  for (const auto& p : model.named_parameters()) {
    if (!p.tensor->has_grad()) continue;
    for (float g : std::as_const(*p.tensor).grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("step " + std::to_string(step) + ": non-finite gradient in '" + p.name + "'");
      }
    }
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------------------

void validate(const MaskingConfig& cfg) {
  require(is_fraction(cfg.mask_prob), "masking.mask_prob must be in [0, 1]");
  require(is_fraction(cfg.replace_mask_frac), "masking.replace_mask_frac must be in [0, 1]");
  require(is_fraction(cfg.replace_random_frac), "masking.replace_random_frac must be in [0, 1]");
  require(is_fraction(cfg.keep_frac), "masking.keep_frac must be in [0, 1]");
  const double total = cfg.replace_mask_frac + cfg.replace_random_frac + cfg.keep_frac;
  require(std::abs(total - 1.0) < 1e-9, "masking fractions must sum to 1");
}

MaskingOutcome mask_tokens(const TokenizedSequence& seq, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng) {
  if (seq.ids.size() != seq.attention_mask.size()) throw DimensionError("mask_tokens: ids and mask lengths differ");
  MaskingOutcome out;
  out.input_ids = seq.ids;
  out.target_ids.resize(seq.ids.size());
  out.mask_indicator.resize(seq.ids.size());
  mask_row(out.input_ids, seq.attention_mask, out.target_ids, out.mask_indicator, vocab, cfg, rng);
  return out;
}

void mask_batch(Batch& batch, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng) {
  const std::size_t n = batch.seq_len;
  batch.mlm_targets.assign(batch.ids.size(), vocab.pad_id());
  batch.mlm_mask.assign(batch.ids.size(), 0);
  for (std::size_t r = 0; r < batch.batch_size; ++r) {
    const std::size_t off = r * n;
    mask_row(std::span(batch.ids).subspan(off, n), std::span<const std::uint8_t>(batch.attention_mask).subspan(off, n),
             std::span(batch.mlm_targets).subspan(off, n), std::span(batch.mlm_mask).subspan(off, n), vocab, cfg, rng);
  }
}

// ---------------------------------------------------------------------------

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  if (!is_fraction(warmup_ratio)) throw ContractError("warmup_ratio must be in [0, 1]");
  const double w = warmup_ratio * static_cast<double>(total_steps);
  return static_cast<std::size_t>(std::ceil(w - 1e-9 * std::max(1.0, w)));
}

double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps == 0) throw ContractError("lr_at: total_steps must be positive");
  const std::size_t warm = warmup_steps(total_steps, warmup_ratio);
  if (step < warm) return peak_lr * (static_cast<double>(step) / static_cast<double>(warm));
  if (step >= total_steps) return 0.0;
  return peak_lr * (static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm));
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ContractError("early stopping patience must be positive");
}

bool EarlyStopping::observe(double loss) {
  ++evaluations_;
  if (loss < best_) {
    best_ = loss;
    best_evaluation_ = evaluations_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

// ---------------------------------------------------------------------------

void write_step_log(const TrainLog& log, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(log.steps.size());
  for (const auto& s : log.steps) {
    rows.push_back({{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}});
  }
  write_lines(path, rows);
}

void write_eval_log(const TrainLog& log, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(log.evaluations.size());
  for (const auto& e : log.evaluations) {
    rows.push_back({{"evaluation", e.evaluation}, {"step", e.step}, {"eval_loss", e.loss}});
  }
  write_lines(path, rows);
}

// ---------------------------------------------------------------------------

void validate(const PretrainConfig& cfg) {
  require(cfg.batch_size > 0, "pretrain.batch_size must be positive");
  require(cfg.max_len >= 3, "pretrain.max_len must be at least 3");
  require(std::isfinite(cfg.lr) && cfg.lr > 0.0, "pretrain.lr must be positive");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "pretrain.beta1 must be in [0, 1)");
  require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "pretrain.beta2 must be in [0, 1)");
  require(cfg.adam_epsilon > 0.0, "pretrain.adam_epsilon must be positive");
  require(cfg.max_grad_norm > 0.0, "pretrain.max_grad_norm must be positive");
  validate(cfg.masking);
  require(cfg.masking.mask_prob > 0.0 && cfg.masking.mask_prob < 1.0, "pretrain.mask_prob must be in (0, 1)");
}

std::vector<Example> tokenize_texts(std::span<const std::string> texts, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(Example{tokenize(t, vocab, max_len), -1});
  return out;
}

TrainLog pretrain(std::span<const std::string> texts, const Vocabulary& vocab, Model<float>& model,
                  const PretrainConfig& cfg, const PretrainHooks& hooks) {
  validate(cfg);
  if (texts.empty()) throw DataError("pretrain: corpus is empty");
  if (vocab.size() != model.config.vocab_size) {
    throw ConfigError("pretrain: vocabulary has " + std::to_string(vocab.size()) + " tokens but model.vocab_size is " +
                      std::to_string(model.config.vocab_size));
  }
  if (cfg.max_len > model.config.max_position) throw ConfigError("pretrain.max_len exceeds model.max_position");

  const auto examples = tokenize_texts(texts, vocab, cfg.max_len);
  Rng mask_rng = make_rng(cfg.seed, "masking");
  Rng dropout_rng = make_rng(cfg.seed, "dropout");

  auto params = model.encoder_and_mlm_parameters();
  AdamState<float> adam;
  const AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_epsilon};

  TrainLog log;
  log.lr_schedule = "constant";
  log.stop_reason = "epochs_exhausted";
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_batches(examples, cfg.batch_size, true, derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    while (batches.has_next()) {
      if (cfg.max_steps && step >= cfg.max_steps) {
        log.stop_reason = "max_steps";
        return log;
      }
      Batch batch = batches.next();
      mask_batch(batch, vocab, cfg.masking, mask_rng);
      const bool any = std::any_of(batch.mlm_mask.begin(), batch.mlm_mask.end(), [](auto m) { return m != 0; });

      model.zero_grad();
      StepRecord rec;
      rec.step = step + 1;
      rec.lr = cfg.lr;
      try {
        Graph<float> g;
        ForwardOptions fo;
        fo.train = true;
        fo.dropout_rng = &dropout_rng;
        auto h = encode(g, model, encoder_input(batch), fo);
        auto logits = mlm_logits(g, model, h);
        // No position selected: the loss is the (zero) masked sum.
        auto loss = any ? masked_cross_entropy_mean(logits, std::span<const std::int32_t>(batch.mlm_targets),
                                                    std::span<const std::uint8_t>(batch.mlm_mask))
                        : masked_cross_entropy(logits, std::span<const std::int32_t>(batch.mlm_targets),
                                               std::span<const std::uint8_t>(batch.mlm_mask));
        rec.loss = loss.value().item();
        if (any) g.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
      }
      check_grads(model, step + 1);
      rec.grad_norm = clip_grad_norm<float>(params, cfg.max_grad_norm).norm;
      adam_step<float>(params, adam, hyper);
      ++step;
      log.steps.push_back(rec);
      if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(step, model);
    }
  }
  return log;
}

double evaluate_mlm_loss(const Model<float>& model, std::span<const Example> examples, const Vocabulary& vocab,
                         const MaskingConfig& masking, std::uint64_t seed, std::size_t batch_size) {
  validate(masking);
  Rng rng = make_rng(seed, "eval-masking");
  double total = 0.0;
  std::size_t count = 0;
  auto batches = make_batches(examples, batch_size, false, seed);
  while (batches.has_next()) {
    Batch batch = batches.next();
    mask_batch(batch, vocab, masking, rng);
    const auto masked = static_cast<std::size_t>(std::count(batch.mlm_mask.begin(), batch.mlm_mask.end(), 1));
    if (masked == 0) continue;
    Graph<float> g;
    auto h = encode(g, model, encoder_input(batch));
    auto logits = mlm_logits(g, model, h);
    auto loss = masked_cross_entropy(logits, std::span<const std::int32_t>(batch.mlm_targets),
                                     std::span<const std::uint8_t>(batch.mlm_mask));
    total += loss.value().item();
    count += masked;
  }
  if (count == 0) throw DataError("evaluate_mlm_loss: no position was masked");
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

void validate(const FinetuneConfig& cfg) {
  require(cfg.epochs > 0, "finetune.epochs must be positive");
  require(cfg.batch_size > 0, "finetune.batch_size must be positive");
  require(std::isfinite(cfg.lr) && cfg.lr > 0.0, "finetune.lr must be positive");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "finetune.beta1 must be in [0, 1)");
  require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "finetune.beta2 must be in [0, 1)");
  require(cfg.adam_epsilon > 0.0, "finetune.adam_epsilon must be positive");
  require(is_fraction(cfg.warmup_ratio) && cfg.warmup_ratio < 1.0, "finetune.warmup_ratio must be in [0, 1)");
  require(cfg.max_grad_norm > 0.0, "finetune.max_grad_norm must be positive");
  require(cfg.max_len >= 3, "finetune.max_len must be at least 3");
  require(cfg.gradient_accumulation_steps > 0, "finetune.gradient_accumulation_steps must be positive");
  require(cfg.eval_patience > 0, "finetune.eval_patience must be positive");
  require(is_fraction(cfg.eval_fraction) && cfg.eval_fraction < 1.0, "finetune.eval_fraction must be in [0, 1)");
}

std::vector<Example> tokenize_labeled(const LabeledDataset& dataset, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(dataset.instances.size());
  for (const auto& inst : dataset.instances) {
    out.push_back(Example{tokenize(inst.text, vocab, max_len), static_cast<std::int32_t>(dataset.class_index(inst.label))});
  }
  return out;
}

double classification_loss(const Model<float>& model, std::span<const Example> examples, std::size_t batch_size) {
  if (examples.empty()) throw DataError("classification_loss: no examples");
  double total = 0.0;
  auto batches = make_batches(examples, batch_size, false, 0);
  while (batches.has_next()) {
    Batch batch = batches.next();
    Graph<float> g;
    auto h = encode(g, model, encoder_input(batch));
    auto logits = classify(g, model, h, batch.batch_size, batch.seq_len);
    std::vector<double> ones(batch.batch_size, 1.0);
    total += weighted_cross_entropy(logits, std::span<const std::int32_t>(batch.labels), std::span<const double>(ones))
                 .value()
                 .item();
  }
  return total / static_cast<double>(examples.size());
}

std::vector<std::int32_t> predict(const Model<float>& model, std::span<const Example> examples, std::size_t batch_size) {
  std::vector<std::int32_t> out(examples.size(), 0);
  auto batches = make_batches(examples, batch_size, false, 0);
  while (batches.has_next()) {
    Batch batch = batches.next();
    Graph<float> g;
    auto h = encode(g, model, encoder_input(batch));
    const auto& logits = classify(g, model, h, batch.batch_size, batch.seq_len).value();
    const std::size_t c = logits.shape()[1];
    for (std::size_t r = 0; r < batch.batch_size; ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits.at(r, j) > logits.at(r, best)) best = j;
      }
      out[batch.source_indices[r]] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

FinetuneResult finetune(std::span<const Example> examples, std::size_t num_classes, Model<float>& model,
                        const FinetuneConfig& cfg, const FinetuneHooks& hooks) {
  validate(cfg);
  if (num_classes < 2) throw DataError("finetune: at least two classes are required");
  if (examples.empty()) throw DataError("finetune: training set is empty");
  for (const auto& ex : examples) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) {
      throw DataError("finetune: label " + std::to_string(ex.label) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (ex.sequence.ids.size() > model.config.max_position) {
      throw ConfigError("finetune: sequence longer than model.max_position");
    }
  }

  model.config.num_labels = num_classes;
  model.classifier = init_classifier<float>(model.config, num_classes, derive_seed(cfg.seed, "init.classifier"));

  std::vector<Example> train;
  std::vector<Example> held_out;
  if (cfg.eval_fraction > 0.0) {
    const std::vector<double> ratios{1.0 - cfg.eval_fraction, cfg.eval_fraction};
    const auto parts = split_indices(examples.size(), SplitSpec{ratios, derive_seed(cfg.seed, "eval-split")});
    for (auto i : parts[0]) train.push_back(examples[i]);
    for (auto i : parts[1]) held_out.push_back(examples[i]);
  } else {
    train.assign(examples.begin(), examples.end());
  }
  if (train.empty()) throw DataError("finetune: no training examples remain after the evaluation split");
  {
    std::vector<bool> seen(num_classes, false);
    for (const auto& ex : train) seen[static_cast<std::size_t>(ex.label)] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("finetune: training data has a single class");
  }

  FinetuneResult result;
  result.train_examples = train.size();
  result.eval_examples = held_out.size();
  TrainLog& log = result.log;
  log.lr_schedule = "linear_warmup_decay";
  log.stop_reason = "epochs_exhausted";

  const std::size_t k = cfg.gradient_accumulation_steps;
  const std::size_t batches_per_epoch = ceil_div(train.size(), cfg.batch_size);
  const std::size_t steps_per_epoch = ceil_div(batches_per_epoch, k);
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t eval_every = cfg.eval_every ? cfg.eval_every : std::max<std::size_t>(1, ceil_div(steps_per_epoch, 5));

  auto params = model.parameters();
  AdamState<float> adam;
  Rng dropout_rng = make_rng(cfg.seed, "dropout");
  EarlyStopping stopper(cfg.eval_patience);
  std::vector<BasicTensor<float>> best;
  std::size_t step = 0;
  std::size_t last_eval_step = 0;

  auto evaluate = [&]() {
    double loss = classification_loss(model, held_out, cfg.batch_size);
    const std::size_t index = log.evaluations.size() + 1;
    if (hooks.eval_loss_override) loss = hooks.eval_loss_override(index, loss);
    log.evaluations.push_back(EvalRecord{index, step, loss});
    last_eval_step = step;
    if (stopper.observe(loss)) best = snapshot(model);
    if (hooks.on_evaluation) hooks.on_evaluation(index, model);
  };

  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    auto it = make_batches(train, cfg.batch_size, true, derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    std::vector<Batch> batches;
    while (it.has_next()) batches.push_back(it.next());

    for (std::size_t start = 0; start < batches.size() && !stop; start += k) {
      const std::size_t end = std::min(batches.size(), start + k);
      std::size_t group_examples = 0;
      for (std::size_t b = start; b < end; ++b) group_examples += batches[b].batch_size;
      const double weight = 1.0 / static_cast<double>(group_examples);

      model.zero_grad();
      StepRecord rec;
      rec.step = step + 1;
      rec.lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_ratio);
      try {
        for (std::size_t b = start; b < end; ++b) {
          const Batch& batch = batches[b];
          Graph<float> g;
          ForwardOptions fo;
          fo.train = true;
          fo.dropout_rng = &dropout_rng;
          auto h = encode(g, model, encoder_input(batch), fo);
          auto logits = classify(g, model, h, batch.batch_size, batch.seq_len, fo);
          std::vector<double> w(batch.batch_size, weight);
          auto loss = weighted_cross_entropy(logits, std::span<const std::int32_t>(batch.labels), std::span<const double>(w));
          rec.loss += loss.value().item();
          g.backward(loss);
        }
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
      }
      check_grads(model, step + 1);
      rec.grad_norm = clip_grad_norm<float>(params, cfg.max_grad_norm).norm;
      adam_step<float>(params, adam, AdamHyper{rec.lr, cfg.beta1, cfg.beta2, cfg.adam_epsilon});
      ++step;
      log.steps.push_back(rec);

      if (!held_out.empty() && step % eval_every == 0) {
        evaluate();
        if (cfg.early_stopping && stopper.should_stop()) {
          log.stop_reason = "early_stopping";
          stop = true;
        }
      }
    }
  }
  if (!held_out.empty() && last_eval_step != step) evaluate();

  if (!best.empty()) {
    restore(model, best);
    log.best_evaluation = stopper.best_evaluation();
    result.best_eval_loss = stopper.best_loss();
  }
  return result;
}

}  // namespace adaptlm
