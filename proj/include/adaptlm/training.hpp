#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/corpus.hpp"
#include "adaptlm/model.hpp"
#include "adaptlm/rng.hpp"
#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

// ---------------------------------------------------------------------------
// MLM collation

struct MaskingConfig {
  double mask_prob = 0.15;
  double replace_mask_frac = 0.8;
  double replace_random_frac = 0.1;
  double keep_frac = 0.1;
};

void validate(const MaskingConfig& cfg);

struct MaskingOutcome {
  std::vector<TokenId> input_ids;            // corrupted
  std::vector<TokenId> target_ids;           // originals
  std::vector<std::uint8_t> mask_indicator;  // 1 where the loss applies
};

// Each real, non-special position is selected with probability mask_prob.
// A selected position becomes [MASK], a uniformly drawn non-special token, or
// stays as is, with the three configured fractions.
MaskingOutcome mask_tokens(const TokenizedSequence& seq, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng);

// In-place version over a collated batch: fills mlm_targets and mlm_mask and
// corrupts ids.
void mask_batch(Batch& batch, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Schedule and early stopping

// ceil(warmup_ratio * total_steps)
std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);

// Linear 0 -> peak over the warm-up steps, then linear peak -> 0 at
// total_steps. The optimizer update that follows `step` completed updates
// uses lr_at(step, ...).
double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio);

// Counts consecutive evaluations without a strict improvement of the best
// loss; should_stop() once that count reaches patience.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  // Returns true when `loss` is a new best.
  bool observe(double loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t evaluations() const { return evaluations_; }
  std::size_t best_evaluation() const { return best_evaluation_; }  // 1-based, 0 before any
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t evaluations_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_evaluation_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Logs

struct StepRecord {
  std::size_t step = 0;  // 1-based optimizer update index
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
  std::size_t evaluation = 0;  // 1-based
  std::size_t step = 0;
  double loss = 0.0;
  bool operator==(const EvalRecord&) const = default;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evaluations;
  std::string lr_schedule;
  std::string stop_reason;
  std::size_t best_evaluation = 0;  // 0 when no evaluation ran
  bool operator==(const TrainLog&) const = default;
};

// One JSON object per line: {"step","loss","lr","grad_norm"}.
void write_step_log(const TrainLog& log, const std::filesystem::path& path);
// One JSON object per line: {"evaluation","step","eval_loss"}.
void write_eval_log(const TrainLog& log, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  std::size_t max_len = 512;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double max_grad_norm = 1.0;
  MaskingConfig masking;
  std::size_t max_steps = 0;         // 0: no cap
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;
};

void validate(const PretrainConfig& cfg);

struct PretrainHooks {
  std::function<void(std::size_t step, const Model<float>&)> on_checkpoint;
};

std::vector<Example> tokenize_texts(std::span<const std::string> texts, const Vocabulary& vocab, std::size_t max_len);

// Constant-lr MLM training; the optimized quantity is the masked mean.
TrainLog pretrain(std::span<const std::string> texts, const Vocabulary& vocab, Model<float>& model,
                  const PretrainConfig& cfg, const PretrainHooks& hooks = {});

// Mean masked cross-entropy over `examples` in eval mode, with masking drawn
// from `seed`.
double evaluate_mlm_loss(const Model<float>& model, std::span<const Example> examples, const Vocabulary& vocab,
                         const MaskingConfig& masking, std::uint64_t seed, std::size_t batch_size = 32);

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double warmup_ratio = 0.1;
  double max_grad_norm = 1.0;
  std::size_t max_len = 140;
  std::size_t gradient_accumulation_steps = 1;
  std::size_t eval_patience = 10;
  double eval_fraction = 0.2;
  std::size_t eval_every = 0;  // optimizer steps between evaluations; 0: a fifth of an epoch
  bool early_stopping = true;
  std::uint64_t seed = 0;
};

void validate(const FinetuneConfig& cfg);

struct FinetuneHooks {
  // Replaces the measured evaluation loss (scripted schedules in tests).
  std::function<double(std::size_t evaluation, double measured)> eval_loss_override;
  // Called after every evaluation with the parameters that were evaluated.
  std::function<void(std::size_t evaluation, const Model<float>&)> on_evaluation;
};

struct FinetuneResult {
  TrainLog log;
  std::size_t train_examples = 0;
  std::size_t eval_examples = 0;
  double best_eval_loss = std::numeric_limits<double>::quiet_NaN();
};

// Re-initializes the classifier for `num_classes`, carves eval_fraction of
// `examples` as the evaluation set, trains encoder and head together, and
// leaves `model` holding the parameters with the lowest evaluation loss.
FinetuneResult finetune(std::span<const Example> examples, std::size_t num_classes, Model<float>& model,
                        const FinetuneConfig& cfg, const FinetuneHooks& hooks = {});

// Mean cross-entropy of the class logits, eval mode.
double classification_loss(const Model<float>& model, std::span<const Example> examples, std::size_t batch_size = 32);

// Arg-max class per example (lowest index on ties).
std::vector<std::int32_t> predict(const Model<float>& model, std::span<const Example> examples,
                                  std::size_t batch_size = 32);

std::vector<Example> tokenize_labeled(const LabeledDataset& dataset, const Vocabulary& vocab, std::size_t max_len);

}  // namespace adaptlm
