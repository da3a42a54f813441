#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adaptlm/graph.hpp"
#include "adaptlm/tensor.hpp"

namespace adaptlm {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 2;
  std::size_t intermediate_size = 0;  // 0 means 4 * hidden_size
  std::size_t vocab_size = 0;
  std::size_t max_position = 512;
  std::size_t num_labels = 2;
  double dropout_rate = 0.1;
  double layer_norm_epsilon = 1e-12;
  bool tie_mlm_weights = true;

  std::size_t ffn_size() const { return intermediate_size ? intermediate_size : 4 * hidden_size; }
  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void validate(const ModelConfig& config);

// Closed-form count of every trainable scalar for `config`.
std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct EncoderLayer {
  BasicTensor<T> query_weight, query_bias;
  BasicTensor<T> key_weight, key_bias;
  BasicTensor<T> value_weight, value_bias;
  BasicTensor<T> attn_out_weight, attn_out_bias;
  BasicTensor<T> attn_norm_gain, attn_norm_bias;
  BasicTensor<T> ffn_in_weight, ffn_in_bias;
  BasicTensor<T> ffn_out_weight, ffn_out_bias;
  BasicTensor<T> ffn_norm_gain, ffn_norm_bias;
};

template <typename T>
struct EncoderParams {
  BasicTensor<T> token_embedding;     // [V x d]
  BasicTensor<T> position_embedding;  // [max_position x d]
  BasicTensor<T> embedding_norm_gain, embedding_norm_bias;
  std::vector<EncoderLayer<T>> layers;
};

// logits = h . W + b. With tied weights W is the transposed token embedding
// and `weight` stays empty.
template <typename T>
struct MlmHead {
  std::optional<BasicTensor<T>> weight;  // [d x V]
  BasicTensor<T> bias;                   // [V]
};

template <typename T>
struct ClassifierHead {
  BasicTensor<T> pooler_weight, pooler_bias;  // [d x d], [d]
  BasicTensor<T> weight, bias;                // [d x C], [C]
};

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T>* tensor;
};

template <typename T>
struct ConstNamedParameter {
  std::string name;
  const BasicTensor<T>* tensor;
};

template <typename T>
class Model {
 public:
  ModelConfig config;
  EncoderParams<T> encoder;
  MlmHead<T> mlm;
  ClassifierHead<T> classifier;

  // Stable order; this is also the checkpoint order.
  std::vector<NamedParameter<T>> named_parameters();
  std::vector<ConstNamedParameter<T>> named_parameters() const;
  std::vector<BasicTensor<T>*> parameters();
  std::vector<BasicTensor<T>*> encoder_and_mlm_parameters();

  void zero_grad();
  void set_requires_grad(bool on);

  template <typename U>
  Model<U> cast() const;
};

// Truncated normal (std 0.02, cut at 2 std), zero biases, unit norm gains.
template <typename T>
Model<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Fresh classifier head with `num_labels` classes.
template <typename T>
ClassifierHead<T> init_classifier(const ModelConfig& config, std::size_t num_labels, std::uint64_t seed);

struct EncoderInput {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::span<const std::int32_t> ids;
  std::span<const std::uint8_t> attention_mask;
};

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;  // required when train && dropout_rate > 0
  // Receives per-layer attention weights [batch x heads x n x n] when set.
  std::vector<BasicTensor<double>>* attention_probs = nullptr;
};

// Returns H as [batch*seq_len x d]. `ModelRef` is Model<T>& (parameters
// receive gradients) or const Model<T>& (inference only).
template <typename T, typename ModelRef>
Var<T> encode(Graph<T>& graph, ModelRef& model, const EncoderInput& input, const ForwardOptions& options = {});

// [batch*seq_len x V]
template <typename T, typename ModelRef>
Var<T> mlm_logits(Graph<T>& graph, ModelRef& model, Var<T> hidden);

// tanh-pooled position-0 state through the classifier: [batch x C].
template <typename T, typename ModelRef>
Var<T> classify(Graph<T>& graph, ModelRef& model, Var<T> hidden, std::size_t batch, std::size_t seq_len,
                const ForwardOptions& options = {});

}  // namespace adaptlm
