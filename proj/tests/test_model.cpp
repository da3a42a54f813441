#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "adaptlm/checkpoint.hpp"
#include "adaptlm/errors.hpp"
#include "adaptlm/model.hpp"
#include "test_support.hpp"

using namespace adaptlm;
using namespace adaptlm::testing;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_size = 16;
  c.num_heads = 2;
  c.vocab_size = 20;
  c.max_position = 16;
  c.num_labels = 3;
  return c;
}

struct Inputs {
  std::size_t batch, seq_len;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  EncoderInput view() const { return {batch, seq_len, ids, mask}; }
};

Inputs random_inputs(std::size_t batch, std::size_t seq_len, std::size_t vocab, std::uint64_t seed) {
  Rng rng = make_rng(seed, "test.inputs");
  Inputs in{batch, seq_len, {}, {}};
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t real = 1 + uniform_index(rng, seq_len);
    for (std::size_t t = 0; t < seq_len; ++t) {
      in.ids.push_back(t < real ? static_cast<std::int32_t>(5 + uniform_index(rng, vocab - 5)) : 0);
      in.mask.push_back(t < real);
    }
  }
  return in;
}

Tensor run_encode(const Model<float>& m, const Inputs& in) {
  Graph<float> g(false);
  return encode(g, m, in.view()).value();
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(validate(c));
  c.num_heads = 3;
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_THROW(init_params<float>(c, 1), ConfigError);
  c = small_config();
  c.vocab_size = 5;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.num_labels = 1;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(validate(c), ConfigError);
}

// Closed form: embeddings V*d + P*d + 2d; per layer 4(d*d + d) + 2d +
// d*F + F + F*d + d + 2d; MLM bias V (+ d*V untied); pooler d*d + d;
// classifier d*C + C.
TEST(Model, ParameterCountMatchesClosedForm) {
  for (bool tied : {true, false}) {
    ModelConfig c;
    c.num_layers = 1;
    c.hidden_size = 8;
    c.num_heads = 2;
    c.vocab_size = 16;
    c.max_position = 8;
    c.num_labels = 2;
    c.tie_mlm_weights = tied;
    const std::size_t d = 8, V = 16, P = 8, F = 32, C = 2;
    std::size_t expected = V * d + P * d + 2 * d + 4 * (d * d + d) + 2 * d + d * F + F + F * d + d + 2 * d + V +
                           d * d + d + d * C + C;
    if (!tied) expected += d * V;
    EXPECT_EQ(parameter_count(c), expected);
    Model<float> m = init_params<float>(c, 3);
    std::size_t counted = 0;
    for (const auto& p : m.named_parameters()) counted += p.tensor->numel();
    EXPECT_EQ(counted, expected);
  }
}

TEST(Model, InitDeterministicAndDistribution) {
  const ModelConfig c = small_config();
  const Model<float> a = init_params<float>(c, 7), b = init_params<float>(c, 7), other = init_params<float>(c, 8);
  const auto pa = a.named_parameters(), pb = b.named_parameters(), po = other.named_parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i].tensor, *pb[i].tensor) << pa[i].name;
    differs = differs || !(*pa[i].tensor == *po[i].tensor);
  }
  EXPECT_TRUE(differs);
  for (const auto& p : pa) {
    const bool gain = p.name.ends_with(".gain");
    const bool bias = p.name.ends_with(".bias");
    for (float x : p.tensor->data()) {
      if (gain) {
        EXPECT_EQ(x, 1.0f) << p.name;
      } else if (bias) {
        EXPECT_EQ(x, 0.0f) << p.name;
      } else {
        EXPECT_LE(std::abs(x), 0.04f + 1e-7f) << p.name;
      }
    }
  }
  const auto& emb = a.encoder.token_embedding.data();
  double mean = 0, sq = 0;
  for (float x : emb) mean += x;
  mean /= static_cast<double>(emb.size());
  for (float x : emb) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / static_cast<double>(emb.size()));
  EXPECT_NEAR(sd, 0.02 * 0.88, 0.004);  // std of N(0, 0.02) truncated at 2 std
}

TEST(Encode, ShapeAndDeterminism) {
  ModelConfig c = small_config();
  c.hidden_size = 64;
  c.num_heads = 2;
  const Model<float> m = init_params<float>(c, 1);
  const Inputs in = random_inputs(2, 16, c.vocab_size, 1);
  const Tensor h = run_encode(m, in);
  EXPECT_EQ(h.shape(), (Shape{32, 64}));
  EXPECT_EQ(h, run_encode(m, in));
}

TEST(Encode, PaddingPerturbationLeavesRealPositionsUnchanged) {
  const ModelConfig c = small_config();
  const Model<float> m = init_params<float>(c, 2);
  Rng rng = make_rng(2, "pad");
  for (int trial = 0; trial < 20; ++trial) {
    const Inputs in = random_inputs(3, 10, c.vocab_size, 100 + trial);
    Inputs changed = in;
    for (std::size_t i = 0; i < changed.ids.size(); ++i) {
      if (!changed.mask[i]) changed.ids[i] = static_cast<std::int32_t>(uniform_index(rng, c.vocab_size));
    }
    const Tensor a = run_encode(m, in), b = run_encode(m, changed);
    for (std::size_t r = 0; r < in.mask.size(); ++r) {
      if (!in.mask[r]) continue;
      for (std::size_t j = 0; j < c.hidden_size; ++j) EXPECT_NEAR(a.at(r, j), b.at(r, j), 1e-5);
    }
  }
}

TEST(Encode, OutputRowsAreLayerNormalized) {
  const ModelConfig c = small_config();
  const Model<float> m = init_params<float>(c, 3);
  const Tensor h = run_encode(m, random_inputs(2, 8, c.vocab_size, 3));
  for (std::size_t r = 0; r < h.dim(0); ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < c.hidden_size; ++j) mean += h.at(r, j);
    mean /= static_cast<double>(c.hidden_size);
    for (std::size_t j = 0; j < c.hidden_size; ++j) var += (h.at(r, j) - mean) * (h.at(r, j) - mean);
    var /= static_cast<double>(c.hidden_size);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(Encode, AttentionProbabilitiesExposed) {
  const ModelConfig c = small_config();
  const Model<float> m = init_params<float>(c, 4);
  const Inputs in = random_inputs(2, 6, c.vocab_size, 4);
  std::vector<Tensor64> probs;
  ForwardOptions fo;
  fo.attention_probs = &probs;
  Graph<float> g(false);
  encode(g, m, in.view(), fo);
  ASSERT_EQ(probs.size(), c.num_layers);
  EXPECT_EQ(probs[0].shape(), (Shape{2, 2, 6, 6}));
  for (std::size_t row = 0; row < 2 * 2 * 6; ++row) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += probs[0][row * 6 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Encode, Contracts) {
  const ModelConfig c = small_config();
  Model<float> m = init_params<float>(c, 5);
  Inputs in = random_inputs(1, 4, c.vocab_size, 5);
  in.ids[0] = static_cast<std::int32_t>(c.vocab_size);
  Graph<float> g;
  EXPECT_THROW(encode(g, m, in.view()), ContractError);
  const Inputs longer = random_inputs(1, c.max_position + 1, c.vocab_size, 5);
  EXPECT_THROW(encode(g, m, longer.view()), ContractError);
  ForwardOptions train;
  train.train = true;
  EXPECT_THROW(encode(g, m, random_inputs(1, 4, c.vocab_size, 6).view(), train), ContractError);
}

TEST(Encode, DropoutOnlyInTrainMode) {
  const ModelConfig c = small_config();
  const Model<float> m = init_params<float>(c, 6);
  const Inputs in = random_inputs(2, 5, c.vocab_size, 6);
  Rng r1 = make_rng(1, "d"), r2 = make_rng(2, "d");
  ForwardOptions t1{true, &r1, nullptr}, t2{true, &r2, nullptr};
  Graph<float> g(false);
  const Tensor a = encode(g, m, in.view(), t1).value();
  const Tensor b = encode(g, m, in.view(), t2).value();
  EXPECT_FALSE(a == b);
  EXPECT_EQ(run_encode(m, in), run_encode(m, in));
}

TEST(MlmLogits, ZeroHiddenAndTying) {
  ModelConfig c = small_config();
  Model<float> tied = init_params<float>(c, 7);
  c.tie_mlm_weights = false;
  Model<float> untied = init_params<float>(c, 7);
  EXPECT_FALSE(tied.mlm.weight.has_value());
  ASSERT_TRUE(untied.mlm.weight.has_value());
  EXPECT_EQ(untied.mlm.weight->shape(), (Shape{16, 20}));

  const Tensor zero({3, 16});
  Graph<float> g(false);
  const Model<float>& ct = tied;
  const Model<float>& cu = untied;
  const Tensor z = mlm_logits(g, ct, g.bind(zero)).value();
  EXPECT_EQ(z.shape(), (Shape{3, 20}));
  for (float x : z.data()) EXPECT_EQ(x, 0.0f);

  Tensor h({3, 16});
  Rng rng = make_rng(7, "h");
  for (auto& x : h.data()) x = static_cast<float>(standard_normal(rng));
  const Tensor lt = mlm_logits(g, ct, g.bind(std::as_const(h))).value();
  EXPECT_FALSE(lt == mlm_logits(g, cu, g.bind(std::as_const(h))).value());
  *untied.mlm.weight = transpose(tied.encoder.token_embedding);
  EXPECT_EQ(lt, mlm_logits(g, cu, g.bind(std::as_const(h))).value());

  // Tied logits follow the embedding table.
  tied.encoder.token_embedding.at(5, 0) += 1.0f;
  const Tensor moved = mlm_logits(g, ct, g.bind(std::as_const(h))).value();
  EXPECT_NE(moved.at(0, 5), lt.at(0, 5));
  EXPECT_EQ(moved.at(0, 6), lt.at(0, 6));
}

TEST(Classify, ShapeUniformAndPoolingReadsPositionZero) {
  const ModelConfig c = small_config();
  Model<float> m = init_params<float>(c, 8);
  const std::size_t B = 2, n = 5;
  Tensor h({B * n, 16});
  Rng rng = make_rng(8, "h");
  for (auto& x : h.data()) x = static_cast<float>(standard_normal(rng));
  Graph<float> g(false);
  const Model<float>& cm = m;
  const Tensor logits = classify(g, cm, g.bind(std::as_const(h)), B, n).value();
  EXPECT_EQ(logits.shape(), (Shape{2, 3}));

  Tensor permuted = h;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < 16; ++j) std::swap(permuted.at(b * n + 1, j), permuted.at(b * n + 4, j));
  }
  EXPECT_EQ(logits, classify(g, cm, g.bind(std::as_const(permuted)), B, n).value());

  for (auto& x : m.classifier.weight.data()) x = 0.0f;
  const Tensor flat = classify(g, cm, g.bind(std::as_const(h)), B, n).value();
  const Tensor p = softmax(flat, 1);
  for (float x : p.data()) EXPECT_FLOAT_EQ(x, 1.0f / 3.0f);
  EXPECT_THROW(classify(g, cm, g.bind(std::as_const(h)), 3, n), DimensionError);
}

TEST(Model, EncoderAndMlmParametersExcludeClassifier) {
  Model<float> m = init_params<float>(small_config(), 9);
  EXPECT_EQ(m.encoder_and_mlm_parameters().size() + 4, m.parameters().size());
}

TEST(Model, ReinitClassifierChangesOnlyHead) {
  Model<float> m = init_params<float>(small_config(), 10);
  const auto head = init_classifier<float>(m.config, 4, 11);
  EXPECT_EQ(head.weight.shape(), (Shape{16, 4}));
  EXPECT_EQ(head.bias.shape(), (Shape{4}));
  EXPECT_THROW(init_classifier<float>(m.config, 1, 11), ConfigError);
}

TEST(Gradients, TinyModelSingleHead) {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 8;
  c.num_heads = 1;
  c.vocab_size = 16;
  c.max_position = 8;
  c.num_labels = 2;
  const auto r = check_model_gradients(c, 11);
  EXPECT_LE(r.worst_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
  EXPECT_EQ(r.scalars_checked, parameter_count(c));
}

TEST(Gradients, TwoLayersUntiedNoDropout) {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_size = 8;
  c.num_heads = 2;
  c.vocab_size = 12;
  c.max_position = 8;
  c.num_labels = 3;
  c.dropout_rate = 0.0;
  c.tie_mlm_weights = false;
  // Some second-layer query gradients are ~1e-7, where the roundoff of a
  // central difference at h = 1e-5 (~1e-11) alone exceeds 1e-4 relative.
  const auto r = check_model_gradients(c, 12, 1e-5, 1e-6);
  EXPECT_LE(r.worst_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir("ckpt");
  ModelConfig c = small_config();
  c.tie_mlm_weights = false;
  const Model<float> m = init_params<float>(c, 12);
  save_checkpoint(m, dir / "ck", {12, {"a", "b", "c"}});
  const auto loaded = load_checkpoint(dir / "ck");
  EXPECT_EQ(loaded.model.config, c);
  EXPECT_EQ(loaded.info.seed, 12u);
  EXPECT_EQ(loaded.info.classes, (std::vector<std::string>{"a", "b", "c"}));
  const auto pa = m.named_parameters();
  const auto pb = loaded.model.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].tensor, *pb[i].tensor) << pa[i].name;
  const Inputs in = random_inputs(2, 7, c.vocab_size, 12);
  EXPECT_EQ(run_encode(m, in), run_encode(loaded.model, in));

  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "ck" / "manifest.json"));
  EXPECT_EQ(manifest["format"], "adaptlm-checkpoint");
  EXPECT_EQ(manifest["format_version"], kCheckpointFormatVersion);
  EXPECT_EQ(manifest["dtype"], "float32-le");
  EXPECT_EQ(manifest["parameters"][0]["name"], "embeddings.token");
  EXPECT_EQ(manifest["parameters"][0]["byte_length"], 20 * 16 * 4);
  EXPECT_EQ(manifest["parameters"][0]["crc32"], file_crc32(dir / "ck" / "params" / "embeddings.token.f32"));
}

TEST(Checkpoint, TruncatedFileIsChecksumError) {
  TempDir dir("ckpt-trunc");
  save_checkpoint(init_params<float>(small_config(), 13), dir / "ck", {});
  const auto file = dir / "ck" / "params" / "layers.0.ffn.in.weight.f32";
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 4);
  EXPECT_THROW(load_checkpoint(dir / "ck"), ChecksumError);
}

TEST(Checkpoint, CorruptedByteIsChecksumError) {
  TempDir dir("ckpt-crc");
  save_checkpoint(init_params<float>(small_config(), 14), dir / "ck", {});
  const auto file = dir / "ck" / "params" / "mlm.bias.f32";
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(3);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(load_checkpoint(dir / "ck"), ChecksumError);
}

TEST(Checkpoint, MismatchedConfigNamesTensor) {
  TempDir dir("ckpt-shape");
  save_checkpoint(init_params<float>(small_config(), 15), dir / "ck", {});
  ModelConfig other = small_config();
  other.vocab_size = 21;
  Model<float> target = init_params<float>(other, 15);
  try {
    load_checkpoint_into(dir / "ck", target);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("embeddings.token"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionMismatchIsFormatError) {
  TempDir dir("ckpt-version");
  save_checkpoint(init_params<float>(small_config(), 16), dir / "ck", {});
  auto manifest = nlohmann::json::parse(std::ifstream(dir / "ck" / "manifest.json"));
  manifest["format_version"] = 2;
  std::ofstream(dir / "ck" / "manifest.json") << manifest.dump();
  EXPECT_THROW(load_checkpoint(dir / "ck"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), DataError);
}

TEST(Crc32, KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_hex(s.data(), s.size()), "cbf43926");
}
