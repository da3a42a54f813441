#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "adaptlm/errors.hpp"
#include "adaptlm/graph.hpp"
#include "adaptlm/optim.hpp"
#include "adaptlm/rng.hpp"
#include "adaptlm/tensor.hpp"

using namespace adaptlm;

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& x : t.data()) x = scale * standard_normal(rng);
  t.set_requires_grad();
  return t;
}

// Central-difference gradient of f at every element of x.
template <typename F>
std::vector<double> numeric_grad(Tensor64& x, F f, double h = 1e-6) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

void expect_close(std::span<const double> a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], tol * std::max(1.0, std::abs(b[i]))) << "element " << i;
  }
}

}  // namespace

TEST(Tensor, ConstructionAndShape) {
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 1.5f);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
  EXPECT_EQ(Tensor::scalar(4.0f).item(), 4.0f);
  EXPECT_EQ(shape_string({2, 3}), "[2x3]");
}

TEST(Tensor, GradBufferOnDemand) {
  Tensor t({3});
  EXPECT_FALSE(t.has_grad());
  t.grad()[1] = 2.0f;
  EXPECT_TRUE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad()[1], 0.0f);
  Tensor copy = t;
  copy.grad()[0] = 5.0f;
  EXPECT_EQ(t.grad()[0], 0.0f);
}

TEST(Tensor, FirstNonFinite) {
  Tensor t({3}, std::vector<float>{1.0f, NAN, 2.0f});
  EXPECT_EQ(t.first_non_finite(), 1u);
  EXPECT_THROW(require_finite(t, "x"), NumericError);
  EXPECT_NO_THROW(require_finite(Tensor({2}), "y"));
}

TEST(Matmul, IdentityAndScalar) {
  Tensor64 eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor64 m({2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, m), m);
  EXPECT_EQ(matmul(Tensor64({1, 1}, std::vector<double>{2}), Tensor64({1, 1}, std::vector<double>{3})).item(), 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng = make_rng(1, "matmul");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + uniform_index(rng, 6), k = 1 + uniform_index(rng, 6), n = 1 + uniform_index(rng, 6);
    Tensor a({m, k}), b({k, n});
    for (auto& x : a.data()) x = static_cast<float>(standard_normal(rng));
    for (auto& x : b.data()) x = static_cast<float>(standard_normal(rng));
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0;
        for (std::size_t t = 0; t < k; ++t) ref += static_cast<double>(a.at(i, t)) * b.at(t, j);
        EXPECT_NEAR(c.at(i, j), ref, 1e-5);
      }
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(Softmax, Examples) {
  const auto u = softmax(Tensor64({3}, std::vector<double>{0, 0, 0}), 0);
  for (double p : u.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
  const auto s = softmax(Tensor64({3}, std::vector<double>{1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], std::exp(i + 1.0) / z, 1e-7);
  EXPECT_THROW(softmax(Tensor64({3}), 1), ContractError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng = make_rng(2, "softmax");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + uniform_index(rng, 5), c = 1 + uniform_index(rng, 9);
    Tensor x({r, c});
    for (auto& v : x.data()) v = static_cast<float>(5 * standard_normal(rng));
    const std::size_t axis = uniform_index(rng, 2);
    Tensor shifted = x;
    const float shift = static_cast<float>(20 * standard_normal(rng));
    for (auto& v : shifted.data()) v += shift;
    const Tensor p = softmax(x, axis), q = softmax(shifted, axis);
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
    if (axis == 1) {
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += p.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    } else {
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < r; ++i) s += p.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto p = softmax(Tensor({2}, std::vector<float>{1000.0f, 999.0f}), 0);
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
}

TEST(MaskedCrossEntropy, Examples) {
  std::vector<std::int32_t> targets{0, 1, 2};
  std::vector<std::uint8_t> mask{1, 1, 1};
  Tensor64 certain({3, 3}, -1e4);
  for (std::size_t t = 0; t < 3; ++t) certain.at(t, t) = 1e4;
  EXPECT_NEAR(masked_cross_entropy(certain, targets, mask).item(), 0.0, 1e-12);

  std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_EQ(masked_cross_entropy(Tensor64({3, 3}), targets, none).item(), 0.0);
  EXPECT_THROW(masked_cross_entropy_mean(Tensor64({3, 3}), targets, none), NumericError);

  std::vector<std::int32_t> t8{1, 5, 7, 0};
  std::vector<std::uint8_t> m8{1, 0, 1, 1};
  EXPECT_NEAR(masked_cross_entropy(Tensor64({4, 8}, 0.25), t8, m8).item(), 3 * std::log(8.0), 1e-12);
  EXPECT_NEAR(3 * std::log(8.0), 6.2383, 1e-4);
  EXPECT_NEAR(masked_cross_entropy_mean(Tensor64({4, 8}), t8, m8).item(), std::log(8.0), 1e-12);
}

TEST(MaskedCrossEntropy, Contracts) {
  std::vector<std::int32_t> bad{0, 3};
  std::vector<std::uint8_t> mask{1, 1};
  EXPECT_THROW(masked_cross_entropy(Tensor64({2, 3}), bad, mask), ContractError);
  std::vector<std::int32_t> ok{0, 1};
  std::vector<std::uint8_t> two{1, 2};
  EXPECT_THROW(masked_cross_entropy(Tensor64({2, 3}), ok, two), ContractError);
  std::vector<std::uint8_t> short_mask{1};
  EXPECT_THROW(masked_cross_entropy(Tensor64({2, 3}), ok, short_mask), DimensionError);
}

TEST(MaskedCrossEntropy, NonNegative) {
  Rng rng = make_rng(4, "ce");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8), v = 2 + uniform_index(rng, 8);
    Tensor64 logits = random_tensor({n, v}, rng, 4.0);
    std::vector<std::int32_t> t(n);
    std::vector<std::uint8_t> m(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<std::int32_t>(uniform_index(rng, v));
      m[i] = uniform_index(rng, 2);
    }
    EXPECT_GE(masked_cross_entropy(logits, t, m).item(), 0.0);
  }
}

TEST(Backward, SumAndSquare) {
  Tensor64 x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad();
  {
    Graph<double> g;
    g.backward(sum(g.parameter(x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));
  }
  Tensor64 y({2}, std::vector<double>{1, 2});
  y.set_requires_grad();
  Graph<double> g;
  auto v = g.parameter(y);
  g.backward(sum(mul(v, v)));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor64 x({2}, std::vector<double>{1, 1});
  x.set_requires_grad();
  for (int i = 0; i < 3; ++i) {
    Graph<double> g;
    g.backward(sum(g.parameter(x)));
  }
  EXPECT_EQ(x.grad()[0], 3.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor64 x({2});
  x.set_requires_grad();
  Graph<double> g;
  EXPECT_THROW(g.backward(g.parameter(x)), ContractError);
}

TEST(Backward, InputsReceiveNoParameterGradient) {
  const Tensor64 c({2}, std::vector<double>{1, 2});
  Tensor64 w({2}, std::vector<double>{3, 4});
  w.set_requires_grad();
  Graph<double> g;
  auto in = g.bind(c);
  auto p = g.bind(w);
  g.backward(sum(mul(in, p)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(w.grad()[0], 1.0);
  EXPECT_EQ(w.grad()[1], 2.0);
}

TEST(Backward, SharedNodeVisitedOnce) {
  // y = x*x used twice: d/dx sum(y + y) = 4x.
  Tensor64 x({1}, std::vector<double>{3});
  x.set_requires_grad();
  Graph<double> g;
  auto v = g.parameter(x);
  auto y = mul(v, v);
  g.backward(sum(add(y, y)));
  EXPECT_EQ(x.grad()[0], 12.0);
}

// Every differentiable op against central differences.
TEST(Backward, OpsMatchFiniteDifferences) {
  Rng rng = make_rng(5, "ops");
  Tensor64 a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), bias = random_tensor({4}, rng);
  Tensor64 gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng), table = random_tensor({5, 4}, rng);
  Tensor64 proj = random_tensor({3, 4}, rng);  // fixed weights that turn outputs into a scalar
  const Tensor64& cproj = proj;
  std::vector<std::int32_t> ids{4, 0, 4};
  std::vector<std::size_t> rows{2, 0};
  std::vector<std::int32_t> targets{1, 0, 1};
  std::vector<double> weights{0.5, 1.0, 2.0};

  using Build = std::function<Var<double>(Graph<double>&)>;
  const std::vector<std::pair<std::string, Build>> cases{
      {"matmul", [&](Graph<double>& g) { return sum(matmul(g.bind(a), g.bind(b))); }},
      {"transpose", [&](Graph<double>& g) { return sum(mul(transpose(transpose(g.bind(a))), g.bind(cproj))); }},
      {"add_bias", [&](Graph<double>& g) { return sum(mul(add_bias(g.bind(a), g.bind(bias)), g.bind(cproj))); }},
      {"scale", [&](Graph<double>& g) { return sum(mul(scale(g.bind(a), -2.5), g.bind(cproj))); }},
      {"softmax1", [&](Graph<double>& g) { return sum(mul(softmax(g.bind(a), 1), g.bind(cproj))); }},
      {"softmax0", [&](Graph<double>& g) { return sum(mul(softmax(g.bind(a), 0), g.bind(cproj))); }},
      {"gelu", [&](Graph<double>& g) { return sum(mul(gelu(g.bind(a)), g.bind(cproj))); }},
      {"tanh", [&](Graph<double>& g) { return sum(mul(tanh(g.bind(a)), g.bind(cproj))); }},
      {"layer_norm",
       [&](Graph<double>& g) {
         return sum(mul(layer_norm(g.bind(a), g.bind(gamma), g.bind(beta), 1e-12), g.bind(cproj)));
       }},
      {"embedding", [&](Graph<double>& g) { return sum(mul(embedding(g.bind(table), ids), g.bind(cproj))); }},
      {"select_rows",
       [&](Graph<double>& g) { return sum(mul(select_rows(g.bind(a), rows), select_rows(g.bind(cproj), rows))); }},
      {"weighted_ce",
       [&](Graph<double>& g) { return weighted_cross_entropy(matmul(g.bind(a), g.bind(b)), targets, weights); }},
  };
  for (const auto& [name, build] : cases) {
    for (Tensor64* t : {&a, &b, &bias, &gamma, &beta, &table}) t->clear_grad();
    {
      Graph<double> g;
      g.backward(build(g));
    }
    auto f = [&]() {
      Graph<double> g(false);
      return build(g).value().item();
    };
    for (Tensor64* t : {&a, &b, &bias, &gamma, &beta, &table}) {
      if (!t->has_grad()) continue;
      const std::vector<double> analytic(t->grad().begin(), t->grad().end());
      const auto numeric = numeric_grad(*t, f);
      SCOPED_TRACE(name);
      expect_close(analytic, numeric, 1e-6);
    }
  }
}

TEST(Attention, MaskedKeysGetZeroWeightAndRowsSumToOne) {
  Rng rng = make_rng(6, "attn");
  const AttentionShape shape{2, 3, 2};
  Tensor64 q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0};
  Graph<double> g;
  Tensor64 probs;
  attention(g.bind(std::as_const(q)), g.bind(std::as_const(k)), g.bind(std::as_const(v)), mask, shape, 0.0, nullptr,
            &probs);
  ASSERT_EQ(probs.shape(), (Shape{2, 2, 3, 3}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) {
          const double p = probs[((b * 2 + h) * 3 + i) * 3 + j];
          if (!mask[b * 3 + j]) {
            EXPECT_EQ(p, 0.0);
          }
          s += p;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  Rng rng = make_rng(7, "attn-grad");
  const AttentionShape shape{2, 3, 2};
  Tensor64 q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
  Tensor64 w = random_tensor({6, 4}, rng);
  const Tensor64& cw = w;
  std::vector<std::uint8_t> mask{1, 1, 1, 1, 1, 0};
  auto build = [&](Graph<double>& g) {
    return sum(mul(attention(g.bind(q), g.bind(k), g.bind(v), mask, shape, 0.0, nullptr), g.bind(cw)));
  };
  {
    Graph<double> g;
    g.backward(build(g));
  }
  auto f = [&]() {
    Graph<double> g(false);
    return build(g).value().item();
  };
  for (Tensor64* t : {&q, &k, &v}) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    expect_close(analytic, numeric_grad(*t, f), 1e-6);
  }
}

TEST(Dropout, IdentityAtZeroAndInvertedScaling) {
  Rng rng = make_rng(8, "dropout");
  const Tensor64 x({1000}, 1.0);
  Graph<double> g;
  EXPECT_EQ(dropout(g.bind(x), 0.0, rng).value(), x);
  const auto y = dropout(g.bind(x), 0.25, rng).value();
  std::size_t kept = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 690u);
  EXPECT_LT(kept, 810u);
}

TEST(ClipGlobalNorm, Examples) {
  std::vector<float> zero{0, 0};
  std::vector<std::span<float>> bufs{zero};
  auto r = clip_global_norm<float>(bufs, 1.0);
  EXPECT_EQ(r.factor, 1.0);

  std::vector<float> g{3, 4};
  std::vector<std::span<float>> one{g};
  r = clip_global_norm<float>(one, 10.0);
  EXPECT_EQ(r.factor, 1.0);
  EXPECT_EQ(r.norm, 5.0);
  EXPECT_EQ(g, (std::vector<float>{3, 4}));
  r = clip_global_norm<float>(one, 1.0);
  EXPECT_NEAR(g[0], 0.6f, 1e-7);
  EXPECT_NEAR(g[1], 0.8f, 1e-7);
  EXPECT_THROW(clip_global_norm<float>(one, 0.0), ContractError);
}

TEST(ClipGlobalNorm, IdempotentAndBounded) {
  Rng rng = make_rng(9, "clip");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> data(1 + uniform_index(rng, 4));
    for (auto& d : data) {
      d.resize(1 + uniform_index(rng, 6));
      for (auto& x : d) x = 3 * standard_normal(rng);
    }
    std::vector<std::span<double>> bufs(data.begin(), data.end());
    const double max_norm = 0.5 + 5 * uniform01(rng);
    clip_global_norm<double>(bufs, max_norm);
    const auto once = data;
    const auto second = clip_global_norm<double>(bufs, max_norm);
    EXPECT_LE(second.norm, max_norm * (1 + 1e-12));
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t j = 0; j < data[i].size(); ++j) EXPECT_NEAR(data[i][j], once[i][j], 1e-12);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor64 p({3}, std::vector<double>{1, -2, 3});
  p.grad();
  AdamState<double> state;
  std::vector<Tensor64*> params{&p};
  adam_step<double>(params, state, AdamHyper{0.1});
  EXPECT_EQ(p, Tensor64({3}, std::vector<double>{1, -2, 3}));
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  Tensor64 p({1}, std::vector<double>{0.0});
  p.grad()[0] = 0.5;
  AdamState<double> state;
  std::vector<Tensor64*> params{&p};
  adam_step<double>(params, state, AdamHyper{0.1});
  EXPECT_NEAR(p[0], -0.1, 1e-3);
  EXPECT_LT(p[0], 0.0);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor64 w({1}, std::vector<double>{1.0});
  AdamState<double> state;
  std::vector<Tensor64*> params{&w};
  for (int i = 0; i < 100; ++i) {
    w.grad()[0] = 2 * w[0];
    adam_step<double>(params, state, AdamHyper{0.05});
  }
  EXPECT_LT(std::abs(w[0]), 0.1);
}

TEST(Adam, BitwiseDeterministic) {
  auto run = [] {
    Rng rng = make_rng(10, "adam");
    Tensor a({5}), b({2, 2});
    std::vector<Tensor*> params{&a, &b};
    AdamState<float> state;
    for (int s = 0; s < 20; ++s) {
      for (auto* p : params) {
        for (auto& g : p->grad()) g = static_cast<float>(standard_normal(rng));
      }
      adam_step<float>(params, state, AdamHyper{});
    }
    return std::make_pair(a, b);
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, StateShapeMismatch) {
  Tensor64 a({2}), b({3});
  a.grad();
  AdamState<double> state;
  std::vector<Tensor64*> one{&a};
  adam_step<double>(one, state, AdamHyper{});
  std::vector<Tensor64*> two{&a, &b};
  EXPECT_THROW(adam_step<double>(two, state, AdamHyper{}), DimensionError);
  std::vector<Tensor64*> other{&b};
  EXPECT_THROW(adam_step<double>(other, state, AdamHyper{}), DimensionError);
}

TEST(Rng, DerivedStreamsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "masking"), derive_seed(1, "masking"));
  EXPECT_NE(derive_seed(1, "masking"), derive_seed(1, "dropout"));
  EXPECT_NE(derive_seed(1, "masking"), derive_seed(2, "masking"));
  Rng a = make_rng(3, "x"), b = make_rng(3, "x");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, UniformIndexInRangeAndCoversAll) {
  Rng rng = make_rng(11, "idx");
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = uniform_index(rng, 7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}
