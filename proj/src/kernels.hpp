#pragma once

// Internal kernel helpers shared by tensor.cpp and graph.cpp.

#include <cstdint>
#include <span>
#include <vector>

#include "adaptlm/tensor.hpp"

namespace adaptlm::detail {

// C[m x n] (+)= A[m x k] . B[k x n], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);

// C[m x n] += A[m x k] . B[n x k]^T
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

// C[k x n] += A[m x k]^T . B[m x n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

// Per-row negative log-likelihood of `targets` under softmax(logits); fills
// `probs` with the row softmax when non-null. Rows with weight 0 still get
// probabilities but their loss is irrelevant to callers.
template <typename T>
std::vector<double> row_nll(const BasicTensor<T>& logits, std::span<const std::int32_t> targets, std::vector<T>* probs);

void check_targets(std::size_t rows, std::size_t vocab, std::span<const std::int32_t> targets,
                   std::span<const std::uint8_t> mask);

}  // namespace adaptlm::detail
