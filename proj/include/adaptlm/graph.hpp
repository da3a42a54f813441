#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/rng.hpp"
#include "adaptlm/tensor.hpp"

namespace adaptlm {

template <typename T>
class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; only valid while the
// graph that produced it is alive.
template <typename T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph<T>& graph() const { return *graph_; }
  std::size_t index() const { return index_; }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t index) : graph_(graph), index_(index) {}

  Graph<T>* graph_ = nullptr;
  std::size_t index_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
// inputs precede it and a reverse sweep over the tape is a topological order.
//
// Leaves bound with parameter() borrow the caller's tensor; backward() adds
// the leaf gradient into that tensor's grad buffer (accumulating across
// calls until the caller zeroes it).
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(BasicTensor<T> value);
  Var<T> parameter(BasicTensor<T>& param);
  Var<T> input(const BasicTensor<T>& tensor);

  Var<T> bind(BasicTensor<T>& param) { return parameter(param); }
  Var<T> bind(const BasicTensor<T>& tensor) { return input(tensor); }

  void backward(Var<T> loss);

  // Gradient reaching `v` during the most recent backward().
  std::span<const T> grad(Var<T> v) const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op);
  const BasicTensor<T>& value_of(std::size_t node) const;
  bool needs_grad(std::size_t node) const { return nodes_[node].requires_grad; }
  std::span<const T> grad_of(std::size_t node) const;
  std::span<T> grad_buffer(std::size_t node);

 private:
  struct Node {
    std::optional<BasicTensor<T>> owned;
    const BasicTensor<T>* borrowed = nullptr;
    BasicTensor<T>* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Var<T> push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return graph_->value_of(index_);
}

template <typename T>
void backward(Var<T> loss) {
  loss.graph().backward(loss);
}

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes follow row-major [rows x cols] conventions.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
// x[N x M] + bias[M] broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double factor);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
// Inverted dropout; identity when rate == 0.
template <typename T> Var<T> dropout(Var<T> x, double rate, Rng& rng);
// Rows of table[V x d] selected by ids -> [ids.size() x d].
template <typename T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);
template <typename T> Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows);
// Per-row normalization over the last axis of x[N x d].
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps);

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
};

// Multi-head scaled dot-product attention over q, k, v of shape
// [batch*seq_len x d]. Head h reads columns [h*d/heads, (h+1)*d/heads).
// Keys with key_mask == 0 receive zero weight. When `probs_out` is non-null
// it receives the pre-dropout weights as [batch x heads x seq_len x seq_len].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_mask, AttentionShape shape,
                 double dropout_rate, Rng* rng, BasicTensor<T>* probs_out = nullptr);

// sum_t weight_t * -log softmax(logits_t)[target_t]
template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const double> weights);

template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask);

template <typename T>
Var<T> masked_cross_entropy_mean(Var<T> logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> mask);

}  // namespace adaptlm
