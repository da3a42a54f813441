#include "adaptlm/model.hpp"

#include <cmath>

#include "adaptlm/errors.hpp"
#include "adaptlm/rng.hpp"

namespace adaptlm {

void validate(const ModelConfig& c) {
  if (c.num_layers < 1) throw ConfigError("model.num_layers must be at least 1");
  if (c.hidden_size < 1) throw ConfigError("model.hidden_size must be at least 1");
  if (c.num_heads < 1) throw ConfigError("model.num_heads must be at least 1");
  if (c.hidden_size % c.num_heads != 0) {
    throw ConfigError("model.hidden_size (" + std::to_string(c.hidden_size) + ") must be divisible by model.num_heads (" +
                      std::to_string(c.num_heads) + ")");
  }
  if (c.vocab_size < 6) throw ConfigError("model.vocab_size must be at least 6");
  if (c.max_position < 3) throw ConfigError("model.max_position must be at least 3");
  if (c.num_labels < 2) throw ConfigError("model.num_labels must be at least 2");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw ConfigError("model.dropout_rate must be in [0, 1)");
  if (!(c.layer_norm_epsilon > 0.0)) throw ConfigError("model.layer_norm_epsilon must be positive");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden_size, V = c.vocab_size, P = c.max_position, I = c.ffn_size(), C = c.num_labels;
  const std::size_t embeddings = V * d + P * d + 2 * d;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * d + (d * I + I) + (I * d + d) + 2 * d;
  const std::size_t mlm = (c.tie_mlm_weights ? 0 : d * V) + V;
  const std::size_t classifier = (d * d + d) + (d * C + C);
  return embeddings + c.num_layers * per_layer + mlm + classifier;
}

namespace {

template <typename ModelT, typename Fn>
void visit_parameters(ModelT& m, Fn&& fn) {
  fn("embeddings.token", m.encoder.token_embedding);
  fn("embeddings.position", m.encoder.position_embedding);
  fn("embeddings.norm.gain", m.encoder.embedding_norm_gain);
  fn("embeddings.norm.bias", m.encoder.embedding_norm_bias);
  for (std::size_t i = 0; i < m.encoder.layers.size(); ++i) {
    auto& layer = m.encoder.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "attention.query.weight", layer.query_weight);
    fn(p + "attention.query.bias", layer.query_bias);
    fn(p + "attention.key.weight", layer.key_weight);
    fn(p + "attention.key.bias", layer.key_bias);
    fn(p + "attention.value.weight", layer.value_weight);
    fn(p + "attention.value.bias", layer.value_bias);
    fn(p + "attention.output.weight", layer.attn_out_weight);
    fn(p + "attention.output.bias", layer.attn_out_bias);
    fn(p + "attention.norm.gain", layer.attn_norm_gain);
    fn(p + "attention.norm.bias", layer.attn_norm_bias);
    fn(p + "ffn.in.weight", layer.ffn_in_weight);
    fn(p + "ffn.in.bias", layer.ffn_in_bias);
    fn(p + "ffn.out.weight", layer.ffn_out_weight);
    fn(p + "ffn.out.bias", layer.ffn_out_bias);
    fn(p + "ffn.norm.gain", layer.ffn_norm_gain);
    fn(p + "ffn.norm.bias", layer.ffn_norm_bias);
  }
  if (m.mlm.weight) fn("mlm.weight", *m.mlm.weight);
  fn("mlm.bias", m.mlm.bias);
  fn("classifier.pooler.weight", m.classifier.pooler_weight);
  fn("classifier.pooler.bias", m.classifier.pooler_bias);
  fn("classifier.weight", m.classifier.weight);
  fn("classifier.bias", m.classifier.bias);
}

template <typename T>
BasicTensor<T> truncated_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double z = standard_normal(rng);
    while (std::abs(z) > 2.0) z = standard_normal(rng);
    v = static_cast<T>(z * stddev);
  }
  return t;
}

template <typename T>
BasicTensor<T> zeros(std::size_t n) {
  return BasicTensor<T>(Shape{n}, T{0});
}

template <typename T>
BasicTensor<T> ones(std::size_t n) {
  return BasicTensor<T>(Shape{n}, T{1});
}

}  // namespace

template <typename T>
std::vector<NamedParameter<T>> Model<T>::named_parameters() {
  std::vector<NamedParameter<T>> out;
  visit_parameters(*this, [&](const std::string& name, BasicTensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::vector<ConstNamedParameter<T>> Model<T>::named_parameters() const {
  std::vector<ConstNamedParameter<T>> out;
  visit_parameters(*this, [&](const std::string& name, const BasicTensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> Model<T>::parameters() {
  std::vector<BasicTensor<T>*> out;
  visit_parameters(*this, [&](const std::string&, BasicTensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> Model<T>::encoder_and_mlm_parameters() {
  std::vector<BasicTensor<T>*> out;
  visit_parameters(*this, [&](const std::string& name, BasicTensor<T>& t) {
    if (!name.starts_with("classifier.")) out.push_back(&t);
  });
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void Model<T>::set_requires_grad(bool on) {
  for (auto* p : parameters()) p->set_requires_grad(on);
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.config = config;
  out.encoder.layers.resize(encoder.layers.size());
  if (mlm.weight) out.mlm.weight.emplace();
  auto src = named_parameters();
  auto dst = out.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
  return out;
}

template <typename T>
ClassifierHead<T> init_classifier(const ModelConfig& config, std::size_t num_labels, std::uint64_t seed) {
  if (num_labels < 2) throw ConfigError("classifier needs at least 2 labels");
  Rng rng = make_rng(seed, "init.classifier");
  const std::size_t d = config.hidden_size;
  ClassifierHead<T> head;
  head.pooler_weight = truncated_normal<T>(Shape{d, d}, rng);
  head.pooler_bias = zeros<T>(d);
  head.weight = truncated_normal<T>(Shape{d, num_labels}, rng);
  head.bias = zeros<T>(num_labels);
  return head;
}

template <typename T>
Model<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng = make_rng(seed, "init");
  const std::size_t d = config.hidden_size, V = config.vocab_size, I = config.ffn_size();
  Model<T> m;
  m.config = config;
  m.encoder.token_embedding = truncated_normal<T>(Shape{V, d}, rng);
  m.encoder.position_embedding = truncated_normal<T>(Shape{config.max_position, d}, rng);
  m.encoder.embedding_norm_gain = ones<T>(d);
  m.encoder.embedding_norm_bias = zeros<T>(d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    EncoderLayer<T> layer;
    layer.query_weight = truncated_normal<T>(Shape{d, d}, rng);
    layer.query_bias = zeros<T>(d);
    layer.key_weight = truncated_normal<T>(Shape{d, d}, rng);
    layer.key_bias = zeros<T>(d);
    layer.value_weight = truncated_normal<T>(Shape{d, d}, rng);
    layer.value_bias = zeros<T>(d);
    layer.attn_out_weight = truncated_normal<T>(Shape{d, d}, rng);
    layer.attn_out_bias = zeros<T>(d);
    layer.attn_norm_gain = ones<T>(d);
    layer.attn_norm_bias = zeros<T>(d);
    layer.ffn_in_weight = truncated_normal<T>(Shape{d, I}, rng);
    layer.ffn_in_bias = zeros<T>(I);
    layer.ffn_out_weight = truncated_normal<T>(Shape{I, d}, rng);
    layer.ffn_out_bias = zeros<T>(d);
    layer.ffn_norm_gain = ones<T>(d);
    layer.ffn_norm_bias = zeros<T>(d);
    m.encoder.layers.push_back(std::move(layer));
  }
  if (!config.tie_mlm_weights) m.mlm.weight = truncated_normal<T>(Shape{d, V}, rng);
  m.mlm.bias = zeros<T>(V);
  m.classifier = init_classifier<T>(config, config.num_labels, seed);
  m.set_requires_grad(true);
  return m;
}

template <typename T, typename ModelRef>
Var<T> encode(Graph<T>& g, ModelRef& model, const EncoderInput& in, const ForwardOptions& options) {
  const auto& cfg = model.config;
  const std::size_t B = in.batch, n = in.seq_len;
  if (B == 0 || n == 0) throw ContractError("encode: empty batch");
  if (in.ids.size() != B * n || in.attention_mask.size() != B * n) {
    throw DimensionError("encode: expected " + std::to_string(B * n) + " ids and mask entries");
  }
  if (n > cfg.max_position) {
    throw ContractError("encode: sequence length " + std::to_string(n) + " exceeds max_position " +
                        std::to_string(cfg.max_position));
  }
  for (auto id : in.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw ContractError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg.vocab_size));
    }
  }
  const bool use_dropout = options.train && cfg.dropout_rate > 0.0;
  if (use_dropout && !options.dropout_rng) throw ContractError("encode: training with dropout needs an rng");
  const double rate = use_dropout ? cfg.dropout_rate : 0.0;
  auto drop = [&](Var<T> x) { return use_dropout ? dropout(x, rate, *options.dropout_rng) : x; };

  auto& enc = model.encoder;
  std::vector<std::int32_t> positions(B * n);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < n; ++t) positions[b * n + t] = static_cast<std::int32_t>(t);

  Var<T> x = add(embedding(g.bind(enc.token_embedding), in.ids),
                 embedding(g.bind(enc.position_embedding), std::span<const std::int32_t>(positions)));
  x = drop(layer_norm(x, g.bind(enc.embedding_norm_gain), g.bind(enc.embedding_norm_bias), cfg.layer_norm_epsilon));

  const AttentionShape shape{B, n, cfg.num_heads};
  for (auto& layer : enc.layers) {
    auto q = add_bias(matmul(x, g.bind(layer.query_weight)), g.bind(layer.query_bias));
    auto k = add_bias(matmul(x, g.bind(layer.key_weight)), g.bind(layer.key_bias));
    auto v = add_bias(matmul(x, g.bind(layer.value_weight)), g.bind(layer.value_bias));
    BasicTensor<T> probs;
    auto ctx = attention(q, k, v, in.attention_mask, shape, rate, options.dropout_rng,
                         options.attention_probs ? &probs : nullptr);
    if (options.attention_probs) options.attention_probs->push_back(probs.template cast<double>());
    auto attn = drop(add_bias(matmul(ctx, g.bind(layer.attn_out_weight)), g.bind(layer.attn_out_bias)));
    x = layer_norm(add(x, attn), g.bind(layer.attn_norm_gain), g.bind(layer.attn_norm_bias), cfg.layer_norm_epsilon);
    auto hidden = gelu(add_bias(matmul(x, g.bind(layer.ffn_in_weight)), g.bind(layer.ffn_in_bias)));
    auto ffn = drop(add_bias(matmul(hidden, g.bind(layer.ffn_out_weight)), g.bind(layer.ffn_out_bias)));
    x = layer_norm(add(x, ffn), g.bind(layer.ffn_norm_gain), g.bind(layer.ffn_norm_bias), cfg.layer_norm_epsilon);
  }
  return x;
}

template <typename T, typename ModelRef>
Var<T> mlm_logits(Graph<T>& g, ModelRef& model, Var<T> hidden) {
  if (hidden.value().rank() != 2 || hidden.value().dim(1) != model.config.hidden_size) {
    throw DimensionError("mlm_logits: hidden states must be [N x " + std::to_string(model.config.hidden_size) + "], got " +
                         shape_string(hidden.shape()));
  }
  Var<T> weight = model.mlm.weight ? g.bind(*model.mlm.weight) : transpose(g.bind(model.encoder.token_embedding));
  return add_bias(matmul(hidden, weight), g.bind(model.mlm.bias));
}

template <typename T, typename ModelRef>
Var<T> classify(Graph<T>& g, ModelRef& model, Var<T> hidden, std::size_t batch, std::size_t seq_len,
                const ForwardOptions& options) {
  if (hidden.value().rank() != 2 || hidden.value().dim(0) != batch * seq_len) {
    throw DimensionError("classify: hidden states " + shape_string(hidden.shape()) + " do not match batch " +
                         std::to_string(batch) + " x " + std::to_string(seq_len));
  }
  std::vector<std::size_t> first_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) first_rows[b] = b * seq_len;
  auto& head = model.classifier;
  auto pooled = tanh(add_bias(matmul(select_rows(hidden, std::span<const std::size_t>(first_rows)), g.bind(head.pooler_weight)),
                              g.bind(head.pooler_bias)));
  const bool use_dropout = options.train && model.config.dropout_rate > 0.0;
  if (use_dropout) {
    if (!options.dropout_rng) throw ContractError("classify: training with dropout needs an rng");
    pooled = dropout(pooled, model.config.dropout_rate, *options.dropout_rng);
  }
  return add_bias(matmul(pooled, g.bind(head.weight)), g.bind(head.bias));
}

#define ADAPTLM_INSTANTIATE(T)                                                                                \
  template class Model<T>;                                                                                    \
  template Model<T> init_params<T>(const ModelConfig&, std::uint64_t);                                        \
  template ClassifierHead<T> init_classifier<T>(const ModelConfig&, std::size_t, std::uint64_t);              \
  template Var<T> encode<T, Model<T>>(Graph<T>&, Model<T>&, const EncoderInput&, const ForwardOptions&);      \
  template Var<T> encode<T, const Model<T>>(Graph<T>&, const Model<T>&, const EncoderInput&,                  \
                                            const ForwardOptions&);                                           \
  template Var<T> mlm_logits<T, Model<T>>(Graph<T>&, Model<T>&, Var<T>);                                      \
  template Var<T> mlm_logits<T, const Model<T>>(Graph<T>&, const Model<T>&, Var<T>);                          \
  template Var<T> classify<T, Model<T>>(Graph<T>&, Model<T>&, Var<T>, std::size_t, std::size_t,               \
                                        const ForwardOptions&);                                               \
  template Var<T> classify<T, const Model<T>>(Graph<T>&, const Model<T>&, Var<T>, std::size_t, std::size_t,   \
                                              const ForwardOptions&);

ADAPTLM_INSTANTIATE(float)
ADAPTLM_INSTANTIATE(double)
#undef ADAPTLM_INSTANTIATE

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace adaptlm
