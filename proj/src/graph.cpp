#include "adaptlm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "adaptlm/errors.hpp"
#include "kernels.hpp"

namespace adaptlm {

template <typename T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(BasicTensor<T> value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::parameter(BasicTensor<T>& param) {
  Node node;
  node.borrowed = &param;
  node.requires_grad = grad_enabled_ && param.requires_grad();
  if (node.requires_grad) node.param = &param;
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::input(const BasicTensor<T>& tensor) {
  Node node;
  node.borrowed = &tensor;
  return push(std::move(node));
}

template <typename T>
Var<T> Graph<T>::record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op) {
  if (auto bad = value.first_non_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value at flat index " + std::to_string(*bad) +
                       " (output shape " + shape_string(value.shape()) + ")");
  }
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_) {
    node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  }
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  return push(std::move(node));
}

template <typename T>
const BasicTensor<T>& Graph<T>::value_of(std::size_t node) const {
  const Node& n = nodes_.at(node);
  return n.owned ? *n.owned : *n.borrowed;
}

template <typename T>
std::span<const T> Graph<T>::grad_of(std::size_t node) const {
  return nodes_.at(node).grad;
}

template <typename T>
std::span<T> Graph<T>::grad_buffer(std::size_t node) {
  Node& n = nodes_.at(node);
  if (n.grad.empty()) n.grad.assign(value_of(node).numel(), T{0});
  return n.grad;
}

template <typename T>
std::span<const T> Graph<T>::grad(Var<T> v) const {
  return grad_of(v.index());
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to a different graph");
  if (value_of(loss.index()).numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(value_of(loss.index()).shape()));
  }
  if (!nodes_[loss.index()].requires_grad) {
    throw ContractError("backward: loss is not connected to any tensor that requires a gradient");
  }
  for (auto& node : nodes_) node.grad.clear();
  grad_buffer(loss.index())[0] = T{1};
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, i);
  }
  for (auto& node : nodes_) {
    if (!node.param || node.grad.empty()) continue;
    auto dst = node.param->grad();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
  }
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (&a.graph() != &b.graph()) throw ContractError(std::string(op) + ": operands live on different graphs");
}

template <typename T>
void require_rank2(const BasicTensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

template <typename T>
void accumulate(Graph<T>& g, std::size_t node, std::span<const T> delta) {
  if (!g.needs_grad(node)) return;
  auto dst = g.grad_buffer(node);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta[i];
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) + " differ");
  }
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  const auto ai = a.index(), bi = b.index();
  return a.graph().record(std::move(out), {ai, bi},
                          [ai, bi](Graph<T>& g, std::size_t self) {
                            const auto grad = g.grad_of(self);
                            accumulate(g, ai, grad);
                            accumulate(g, bi, grad);
                          },
                          "add");
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_graph(x, bias, "add_bias");
  const auto& xv = x.value();
  const auto& bv = bias.value();
  const std::size_t cols = xv.rank() == 0 ? 1 : xv.shape().back();
  if (bv.numel() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match rows of " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.numel() / cols;
  BasicTensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  const auto xi = x.index(), bi = bias.index();
  return x.graph().record(std::move(out), {xi, bi},
                          [xi, bi, rows, cols](Graph<T>& g, std::size_t self) {
                            const auto grad = g.grad_of(self);
                            accumulate(g, xi, grad);
                            if (g.needs_grad(bi)) {
                              auto gb = g.grad_buffer(bi);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < cols; ++c) gb[c] += grad[r * cols + c];
                            }
                          },
                          "add_bias");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) + " differ");
  }
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  const auto ai = a.index(), bi = b.index();
  return a.graph().record(std::move(out), {ai, bi},
                          [ai, bi](Graph<T>& g, std::size_t self) {
                            const auto grad = g.grad_of(self);
                            const auto& av = g.value_of(ai);
                            const auto& bv = g.value_of(bi);
                            if (g.needs_grad(ai)) {
                              auto ga = g.grad_buffer(ai);
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += grad[i] * bv[i];
                            }
                            if (g.needs_grad(bi)) {
                              auto gb = g.grad_buffer(bi);
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += grad[i] * av[i];
                            }
                          },
                          "mul");
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape());
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * f;
  const auto ai = a.index();
  return a.graph().record(std::move(out), {ai},
                          [ai, f](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(ai)) return;
                            const auto grad = g.grad_of(self);
                            auto ga = g.grad_buffer(ai);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += grad[i] * f;
                          },
                          "scale");
}

template <typename T>
Var<T> sum(Var<T> a) {
  const auto& av = a.value();
  double total = 0.0;
  for (auto v : av.data()) total += v;
  const auto ai = a.index();
  return a.graph().record(BasicTensor<T>::scalar(static_cast<T>(total)), {ai},
                          [ai](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(ai)) return;
                            const T up = g.grad_of(self)[0];
                            for (auto& v : g.grad_buffer(ai)) v += up;
                          },
                          "sum");
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "matmul");
  auto out = matmul(a.value(), b.value());
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  const auto ai = a.index(), bi = b.index();
  return a.graph().record(std::move(out), {ai, bi},
                          [ai, bi, m, k, n](Graph<T>& g, std::size_t self) {
                            const T* grad = g.grad_of(self).data();
                            if (g.needs_grad(ai)) {
                              detail::gemm_nt_acc(m, n, k, grad, g.value_of(bi).data().data(), g.grad_buffer(ai).data());
                            }
                            if (g.needs_grad(bi)) {
                              detail::gemm_tn_acc(m, k, n, g.value_of(ai).data().data(), grad, g.grad_buffer(bi).data());
                            }
                          },
                          "matmul");
}

template <typename T>
Var<T> transpose(Var<T> a) {
  auto out = transpose(a.value());
  const std::size_t m = a.value().dim(0), n = a.value().dim(1);
  const auto ai = a.index();
  return a.graph().record(std::move(out), {ai},
                          [ai, m, n](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(ai)) return;
                            const auto grad = g.grad_of(self);
                            auto ga = g.grad_buffer(ai);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += grad[j * m + i];
                          },
                          "transpose");
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  auto out = softmax(x.value(), axis);
  const auto& shape = x.value().shape();
  const std::size_t extent = shape[axis];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t outer = x.value().numel() / (extent * inner);
  const auto xi = x.index();
  return x.graph().record(std::move(out), {xi},
                  [extent, inner, outer, xi](Graph<T>& g, std::size_t self) {
                    const auto grad = g.grad_of(self);
                    const auto& y = g.value_of(self);
                    if (!g.needs_grad(xi)) return;
                    auto gx = g.grad_buffer(xi);
                    for (std::size_t a = 0; a < outer; ++a) {
                      for (std::size_t c = 0; c < inner; ++c) {
                        const std::size_t base = a * extent * inner + c;
                        T dot{0};
                        for (std::size_t e = 0; e < extent; ++e) dot += grad[base + e * inner] * y[base + e * inner];
                        for (std::size_t e = 0; e < extent; ++e) {
                          const std::size_t idx = base + e * inner;
                          gx[idx] += y[idx] * (grad[idx] - dot);
                        }
                      }
                    }
                  },
                  "softmax");
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
  }
  const auto xi = x.index();
  return x.graph().record(std::move(out), {xi},
                          [xi](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(xi)) return;
                            const auto grad = g.grad_of(self);
                            const auto& xv = g.value_of(xi);
                            auto gx = g.grad_buffer(xi);
                            const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                            for (std::size_t i = 0; i < gx.size(); ++i) {
                              const double v = xv[i];
                              const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                              const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                              gx[i] += static_cast<T>(grad[i] * (cdf + v * pdf));
                            }
                          },
                          "gelu");
}

template <typename T>
Var<T> tanh(Var<T> x) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);
  const auto xi = x.index();
  return x.graph().record(std::move(out), {xi},
                  [xi](Graph<T>& g, std::size_t self) {
                    if (!g.needs_grad(xi)) return;
                    const auto grad = g.grad_of(self);
                    const auto& y = g.value_of(self);
                    auto gx = g.grad_buffer(xi);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[i] * (T{1} - y[i] * y[i]);
                  },
                  "tanh");
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const auto& xv = x.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> keep(xv.numel());
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    keep[i] = uniform01(rng) < rate ? T{0} : keep_scale;
    out[i] = xv[i] * keep[i];
  }
  const auto xi = x.index();
  return x.graph().record(std::move(out), {xi},
                          [xi, keep = std::move(keep)](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(xi)) return;
                            const auto grad = g.grad_of(self);
                            auto gx = g.grad_buffer(xi);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[i] * keep[i];
                          },
                          "dropout");
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  require_rank2(tv, "embedding");
  const std::size_t rows = tv.dim(0), width = tv.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  BasicTensor<T> out(Shape{ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw ContractError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(ids[r]) * width, width, out.data().data() + r * width);
  }
  const auto ti = table.index();
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return table.graph().record(std::move(out), {ti},
                              [ti, width, saved = std::move(saved)](Graph<T>& g, std::size_t self) {
                                if (!g.needs_grad(ti)) return;
                                const auto grad = g.grad_of(self);
                                auto gt = g.grad_buffer(ti);
                                for (std::size_t r = 0; r < saved.size(); ++r) {
                                  T* dst = gt.data() + static_cast<std::size_t>(saved[r]) * width;
                                  const T* src = grad.data() + r * width;
                                  for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                                }
                              },
                              "embedding");
}

template <typename T>
Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows) {
  const auto& xv = x.value();
  require_rank2(xv, "select_rows");
  const std::size_t width = xv.dim(1);
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  BasicTensor<T> out(Shape{rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.dim(0)) throw DimensionError("select_rows: row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(xv.data().data() + rows[r] * width, width, out.data().data() + r * width);
  }
  const auto xi = x.index();
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return x.graph().record(std::move(out), {xi},
                          [xi, width, saved = std::move(saved)](Graph<T>& g, std::size_t self) {
                            if (!g.needs_grad(xi)) return;
                            const auto grad = g.grad_of(self);
                            auto gx = g.grad_buffer(xi);
                            for (std::size_t r = 0; r < saved.size(); ++r)
                              for (std::size_t c = 0; c < width; ++c) gx[saved[r] * width + c] += grad[r * width + c];
                          },
                          "select_rows");
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  require_same_graph(x, gamma, "layer_norm");
  require_same_graph(x, beta, "layer_norm");
  const auto& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t rows = xv.dim(0), width = xv.dim(1);
  if (gamma.value().numel() != width || beta.value().numel() != width) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(width) + " entries");
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> normalized(xv.numel());
  std::vector<T> inv_std(rows);
  BasicTensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data().data() + r * width;
    double mean = 0.0;
    for (std::size_t c = 0; c < width; ++c) mean += row[c];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(width);
    const double rstd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(rstd);
    for (std::size_t c = 0; c < width; ++c) {
      const T xhat = static_cast<T>((row[c] - mean) * rstd);
      normalized[r * width + c] = xhat;
      out[r * width + c] = xhat * gv[c] + bv[c];
    }
  }
  const auto xi = x.index(), gi = gamma.index(), bi = beta.index();
  return x.graph().record(
      std::move(out), {xi, gi, bi},
      [xi, gi, bi, rows, width, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph<T>& g,
                                                                                                  std::size_t self) {
        const auto grad = g.grad_of(self);
        const auto& gv = g.value_of(gi);
        if (g.needs_grad(gi)) {
          auto gg = g.grad_buffer(gi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) gg[c] += grad[r * width + c] * normalized[r * width + c];
        }
        if (g.needs_grad(bi)) {
          auto gb = g.grad_buffer(bi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) gb[c] += grad[r * width + c];
        }
        if (g.needs_grad(xi)) {
          auto gx = g.grad_buffer(xi);
          const double inv_width = 1.0 / static_cast<double>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < width; ++c) {
              const double d = static_cast<double>(grad[r * width + c]) * gv[c];
              mean_d += d;
              mean_dx += d * normalized[r * width + c];
            }
            mean_d *= inv_width;
            mean_dx *= inv_width;
            for (std::size_t c = 0; c < width; ++c) {
              const double d = static_cast<double>(grad[r * width + c]) * gv[c];
              gx[r * width + c] += static_cast<T>(inv_std[r] * (d - mean_d - normalized[r * width + c] * mean_dx));
            }
          }
        }
      },
      "layer_norm");
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_mask, AttentionShape shape,
                 double dropout_rate, Rng* rng, BasicTensor<T>* probs_out) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  require_rank2(qv, "attention");
  const std::size_t B = shape.batch, n = shape.seq_len, A = shape.heads;
  const std::size_t d = qv.dim(1);
  if (A == 0 || d % A != 0) throw DimensionError("attention: width " + std::to_string(d) + " not divisible into heads");
  if (qv.dim(0) != B * n || kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw DimensionError("attention: q/k/v must all be [" + std::to_string(B * n) + "x" + std::to_string(d) + "]");
  }
  if (key_mask.size() != B * n) throw DimensionError("attention: key mask length mismatch");
  if (dropout_rate > 0.0 && rng == nullptr) throw ContractError("attention: dropout requires an rng");
  const std::size_t dh = d / A;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const T keep_scale = static_cast<T>(dropout_rate > 0.0 ? 1.0 / (1.0 - dropout_rate) : 1.0);

  // probs[(b*A + h)*n*n + i*n + j]; `dropped` is probs after dropout (aliases when rate == 0).
  std::vector<T> probs(B * A * n * n, T{0});
  std::vector<T> dropped;
  if (dropout_rate > 0.0) dropped.resize(probs.size());
  BasicTensor<T> out(qv.shape());
  std::vector<double> scores(n);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < A; ++h) {
      T* p = probs.data() + (b * A + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = qv.data().data() + (b * n + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!key_mask[b * n + j]) continue;
          const T* kj = kv.data().data() + (b * n + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += static_cast<double>(qi[c]) * kj[c];
          scores[j] = s * scale_factor;
          mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!key_mask[b * n + j]) continue;
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          p[i * n + j] = key_mask[b * n + j] ? static_cast<T>(scores[j] / denom) : T{0};
        }
        const T* weights = p + i * n;
        if (dropout_rate > 0.0) {
          T* dp = dropped.data() + (b * A + h) * n * n + i * n;
          for (std::size_t j = 0; j < n; ++j) dp[j] = uniform01(*rng) < dropout_rate ? T{0} : p[i * n + j] * keep_scale;
          weights = dp;
        }
        T* oi = out.data().data() + (b * n + i) * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          if (weights[j] == T{0}) continue;
          const T* vj = vv.data().data() + (b * n + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += weights[j] * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = BasicTensor<T>(Shape{B, A, n, n}, probs);

  const auto qi = q.index(), ki = k.index(), vi = v.index();
  return q.graph().record(
      std::move(out), {qi, ki, vi},
      [qi, ki, vi, B, n, A, d, dh, scale_factor, keep_scale, probs = std::move(probs), dropped = std::move(dropped)](
          Graph<T>& g, std::size_t self) {
        const auto grad = g.grad_of(self);
        const T* qd = g.value_of(qi).data().data();
        const T* kd = g.value_of(ki).data().data();
        const T* vd = g.value_of(vi).data().data();
        const bool has_dropout = !dropped.empty();
        std::span<T> gq = g.needs_grad(qi) ? g.grad_buffer(qi) : std::span<T>{};
        std::span<T> gk = g.needs_grad(ki) ? g.grad_buffer(ki) : std::span<T>{};
        std::span<T> gv = g.needs_grad(vi) ? g.grad_buffer(vi) : std::span<T>{};
        std::vector<double> dprob(n);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < A; ++h) {
            const T* p = probs.data() + (b * A + h) * n * n;
            const T* pd = has_dropout ? dropped.data() + (b * A + h) * n * n : p;
            for (std::size_t i = 0; i < n; ++i) {
              const T* go = grad.data() + (b * n + i) * d + h * dh;
              double weighted = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const T* vj = vd + (b * n + j) * d + h * dh;
                if (!gv.empty() && pd[i * n + j] != T{0}) {
                  T* gvj = gv.data() + (b * n + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += pd[i * n + j] * go[c];
                }
                double dp = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dp += static_cast<double>(go[c]) * vj[c];
                if (has_dropout) dp = pd[i * n + j] == T{0} ? 0.0 : dp * keep_scale;
                dprob[j] = dp;
                weighted += dp * p[i * n + j];
              }
              const T* qrow = qd + (b * n + i) * d + h * dh;
              for (std::size_t j = 0; j < n; ++j) {
                if (p[i * n + j] == T{0}) continue;
                const double ds = p[i * n + j] * (dprob[j] - weighted) * scale_factor;
                const T* krow = kd + (b * n + j) * d + h * dh;
                if (!gq.empty()) {
                  T* gqi = gq.data() + (b * n + i) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += static_cast<T>(ds * krow[c]);
                }
                if (!gk.empty()) {
                  T* gkj = gk.data() + (b * n + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += static_cast<T>(ds * qrow[c]);
                }
              }
            }
          }
        }
      },
      "attention");
}

template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const double> weights) {
  const auto& lv = logits.value();
  require_rank2(lv, "cross_entropy");
  const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != rows || weights.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " logit rows but " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(weights.size()) + " weights");
  }
  for (std::size_t t = 0; t < rows; ++t) {
    if (weights[t] != 0.0 && (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab)) {
      throw ContractError("cross_entropy: target id " + std::to_string(targets[t]) + " outside [0, " +
                          std::to_string(vocab) + ")");
    }
  }
  std::vector<T> probs;
  const auto nll = detail::row_nll(lv, targets, &probs);
  double total = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (weights[t] != 0.0) total += weights[t] * nll[t];
  }
  const auto li = logits.index();
  std::vector<std::int32_t> saved_targets(targets.begin(), targets.end());
  std::vector<double> saved_weights(weights.begin(), weights.end());
  return logits.graph().record(
      BasicTensor<T>::scalar(static_cast<T>(total)), {li},
      [li, vocab, probs = std::move(probs), saved_targets = std::move(saved_targets),
       saved_weights = std::move(saved_weights)](Graph<T>& g, std::size_t self) {
        if (!g.needs_grad(li)) return;
        const double up = g.grad_of(self)[0];
        auto gl = g.grad_buffer(li);
        for (std::size_t t = 0; t < saved_weights.size(); ++t) {
          if (saved_weights[t] == 0.0) continue;
          const double w = up * saved_weights[t];
          for (std::size_t v = 0; v < vocab; ++v) gl[t * vocab + v] += static_cast<T>(w * probs[t * vocab + v]);
          gl[t * vocab + static_cast<std::size_t>(saved_targets[t])] -= static_cast<T>(w);
        }
      },
      "cross_entropy");
}

template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  detail::check_targets(logits.value().dim(0), logits.value().dim(1), targets, mask);
  std::vector<double> weights(mask.begin(), mask.end());
  return weighted_cross_entropy(logits, targets, std::span<const double>(weights));
}

template <typename T>
Var<T> masked_cross_entropy_mean(Var<T> logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> mask) {
  detail::check_targets(logits.value().dim(0), logits.value().dim(1), targets, mask);
  const auto count = std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  if (count == 0) throw NumericError("masked_cross_entropy_mean: no masked positions in batch");
  std::vector<double> weights(mask.size());
  for (std::size_t t = 0; t < mask.size(); ++t) weights[t] = mask[t] ? 1.0 / static_cast<double>(count) : 0.0;
  return weighted_cross_entropy(logits, targets, std::span<const double>(weights));
}

#define ADAPTLM_INSTANTIATE(T)                                                                                     \
  template Var<T> add(Var<T>, Var<T>);                                                                             \
  template Var<T> add_bias(Var<T>, Var<T>);                                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                                             \
  template Var<T> scale(Var<T>, double);                                                                           \
  template Var<T> sum(Var<T>);                                                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                                                          \
  template Var<T> transpose(Var<T>);                                                                               \
  template Var<T> softmax(Var<T>, std::size_t);                                                                    \
  template Var<T> gelu(Var<T>);                                                                                    \
  template Var<T> tanh(Var<T>);                                                                                    \
  template Var<T> dropout(Var<T>, double, Rng&);                                                                   \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                                                \
  template Var<T> select_rows(Var<T>, std::span<const std::size_t>);                                               \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                                      \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>, AttentionShape, double, Rng*,    \
                            BasicTensor<T>*);                                                                      \
  template Var<T> weighted_cross_entropy(Var<T>, std::span<const std::int32_t>, std::span<const double>);          \
  template Var<T> masked_cross_entropy(Var<T>, std::span<const std::int32_t>, std::span<const std::uint8_t>);      \
  template Var<T> masked_cross_entropy_mean(Var<T>, std::span<const std::int32_t>, std::span<const std::uint8_t>);

ADAPTLM_INSTANTIATE(float)
ADAPTLM_INSTANTIATE(double)
#undef ADAPTLM_INSTANTIATE

}  // namespace adaptlm
