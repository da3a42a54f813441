#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adaptlm/tensor.hpp"

namespace adaptlm {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment buffers are laid out in the order of the parameter list passed to
// adam_step, and stay all-zero until the first step. Plain Adam: no weight
// decay.
template <typename T>
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One bias-corrected Adam update using each parameter's grad buffer.
// Parameters without a grad buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, AdamState<T>& state, const AdamHyper& hyper);

struct ClipResult {
  double norm = 0.0;    // global L2 norm before clipping
  double factor = 1.0;  // scale applied to every buffer
};

// Scales every buffer by max_norm / norm when the global L2 norm exceeds
// max_norm; otherwise leaves them untouched (factor 1).
template <typename T>
ClipResult clip_global_norm(std::span<const std::span<T>> buffers, double max_norm);

template <typename T>
ClipResult clip_global_norm(std::span<BasicTensor<T>> tensors, double max_norm);

// Clips the grad buffers of `params`.
template <typename T>
ClipResult clip_grad_norm(std::span<BasicTensor<T>* const> params, double max_norm);

}  // namespace adaptlm
