#include "adaptlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adaptlm/errors.hpp"
#include "kernels.hpp"

namespace adaptlm {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto extent : shape_) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto extent : shape_) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
  if (!grad_) grad_.emplace(data_.size(), T{0});
  return *grad_;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!grad_) throw ContractError("tensor has no gradient buffer");
  return *grad_;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
std::optional<std::size_t> BasicTensor<T>::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i;
  }
  return std::nullopt;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

namespace detail {

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void check_targets(std::size_t rows, std::size_t vocab, std::span<const std::int32_t> targets,
                   std::span<const std::uint8_t> mask) {
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross entropy: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  for (std::size_t t = 0; t < rows; ++t) {
    if (mask[t] > 1) throw ContractError("cross entropy: mask entries must be 0 or 1");
    if (mask[t] && (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab)) {
      throw ContractError("cross entropy: target id " + std::to_string(targets[t]) + " outside [0, " +
                          std::to_string(vocab) + ")");
    }
  }
}

template <typename T>
std::vector<double> row_nll(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                            std::vector<T>* probs) {
  const std::size_t rows = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  std::vector<double> nll(rows, 0.0);
  if (probs) probs->assign(rows * vocab, T{0});
  const T* x = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double denom = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(row[v]) - mx);
    const double log_denom = std::log(denom);
    const auto target = targets[r];
    if (target >= 0 && static_cast<std::size_t>(target) < vocab) {
      nll[r] = -(static_cast<double>(row[target]) - mx - log_denom);
    }
    if (probs) {
      T* prow = probs->data() + r * vocab;
      for (std::size_t v = 0; v < vocab; ++v) prow[v] = static_cast<T>(std::exp(static_cast<double>(row[v]) - mx) / denom);
    }
  }
  return nll;
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt_acc<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nt_acc<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void gemm_tn_acc<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_tn_acc<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template std::vector<double> row_nll<float>(const BasicTensor<float>&, std::span<const std::int32_t>, std::vector<float>*);
template std::vector<double> row_nll<double>(const BasicTensor<double>&, std::span<const std::int32_t>,
                                             std::vector<double>*);

}  // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out(Shape{m, n});
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data(), false);
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const std::size_t extent = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t outer = x.numel() / (extent * inner);
  BasicTensor<T> out(x.shape());
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * extent * inner + c;
      T mx = in[base];
      for (std::size_t e = 1; e < extent; ++e) mx = std::max(mx, in[base + e * inner]);
      T denom{0};
      for (std::size_t e = 0; e < extent; ++e) {
        const T v = std::exp(in[base + e * inner] - mx);
        o[base + e * inner] = v;
        denom += v;
      }
      for (std::size_t e = 0; e < extent; ++e) o[base + e * inner] /= denom;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> masked_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                                    std::span<const std::uint8_t> mask) {
  if (logits.rank() != 2) throw DimensionError("masked_cross_entropy: logits must be [n x V], got " + shape_string(logits.shape()));
  detail::check_targets(logits.dim(0), logits.dim(1), targets, mask);
  const auto nll = detail::row_nll<T>(logits, targets, nullptr);
  double total = 0.0;
  for (std::size_t t = 0; t < nll.size(); ++t) {
    if (mask[t]) total += nll[t];
  }
  return BasicTensor<T>::scalar(static_cast<T>(total));
}

template <typename T>
BasicTensor<T> masked_cross_entropy_mean(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                                         std::span<const std::uint8_t> mask) {
  const auto count = std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  if (count == 0) throw NumericError("masked_cross_entropy_mean: no masked positions in batch");
  const auto sum = masked_cross_entropy(logits, targets, mask);
  return BasicTensor<T>::scalar(static_cast<T>(static_cast<double>(sum.item()) / static_cast<double>(count)));
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  if (auto bad = t.first_non_finite()) {
    throw NumericError("non-finite value in " + what + " at flat index " + std::to_string(*bad) + " (shape " +
                       shape_string(t.shape()) + ")");
  }
}

#define ADAPTLM_INSTANTIATE(T)                                                                                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                          \
  template BasicTensor<T> masked_cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>,            \
                                               std::span<const std::uint8_t>);                                  \
  template BasicTensor<T> masked_cross_entropy_mean(const BasicTensor<T>&, std::span<const std::int32_t>,       \
                                                    std::span<const std::uint8_t>);                             \
  template void require_finite(const BasicTensor<T>&, const std::string&);

ADAPTLM_INSTANTIATE(float)
ADAPTLM_INSTANTIATE(double)
#undef ADAPTLM_INSTANTIATE

}  // namespace adaptlm
