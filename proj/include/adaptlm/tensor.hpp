#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adaptlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array. Value semantics: copies are deep. The gradient
// buffer is allocated on demand and always has the same shape as the data.
//
// Training runs in float; double exists for gradient verification.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{}) {}
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D access.
  T& at(std::size_t row, std::size_t col) { return data_[row * shape_.back() + col]; }
  const T& at(std::size_t row, std::size_t col) const { return data_[row * shape_.back() + col]; }

  // Scalar value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return requires_grad_; }
  BasicTensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    return *this;
  }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero buffer on first use.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  BasicTensor reshaped(Shape shape) const;

  // First non-finite element index, if any.
  std::optional<std::size_t> first_non_finite() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    BasicTensor<U> t(shape_, std::move(out));
    t.set_requires_grad(requires_grad_);
    return t;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// ---------------------------------------------------------------------------
// Eager kernels. The graph ops in graph.hpp call these for their forward pass.

// [m x k] . [k x n] -> [m x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

// Loss over rows of [n x V] logits: -sum_t mask_t * log softmax(logits_t)[target_t].
template <typename T>
BasicTensor<T> masked_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                                    std::span<const std::uint8_t> mask);

// Sum form divided by the number of masked positions. Throws NumericError
// when the mask is all zero (degenerate batch).
template <typename T>
BasicTensor<T> masked_cross_entropy_mean(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                                         std::span<const std::uint8_t> mask);

// Throws NumericError naming `what` if any element is NaN or Inf.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what);

}  // namespace adaptlm
