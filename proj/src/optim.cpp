#include "adaptlm/optim.hpp"

#include <cmath>

#include "adaptlm/errors.hpp"

namespace adaptlm {

template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, AdamState<T>& state, const AdamHyper& hyper) {
  if (state.step_count == 0 && state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->numel(), T{0});
      state.second_moment.emplace_back(p->numel(), T{0});
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i]->numel() || state.second_moment[i].size() != params[i]->numel()) {
      throw DimensionError("adam_step: moment buffer " + std::to_string(i) + " does not match parameter shape " +
                           shape_string(params[i]->shape()));
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(hyper.beta1, t);
  const double bias2 = 1.0 - std::pow(hyper.beta2, t);
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  const T one_minus_b1 = static_cast<T>(1.0 - hyper.beta1), one_minus_b2 = static_cast<T>(1.0 - hyper.beta2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto data = p.data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool has_grad = p.has_grad();
    std::span<const T> grad = has_grad ? std::as_const(p).grad() : std::span<const T>{};
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T g = has_grad ? grad[j] : T{0};
      m[j] = b1 * m[j] + one_minus_b1 * g;
      v[j] = b2 * v[j] + one_minus_b2 * g * g;
      const double m_hat = static_cast<double>(m[j]) / bias1;
      const double v_hat = static_cast<double>(v[j]) / bias2;
      data[j] -= static_cast<T>(hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
    }
  }
}

template <typename T>
ClipResult clip_global_norm(std::span<const std::span<T>> buffers, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& buf : buffers)
    for (auto g : buf) sq += static_cast<double>(g) * static_cast<double>(g);
  ClipResult result;
  result.norm = std::sqrt(sq);
  if (result.norm <= max_norm) return result;
  result.factor = max_norm / result.norm;
  const T f = static_cast<T>(result.factor);
  for (const auto& buf : buffers)
    for (auto& g : buf) g *= f;
  return result;
}

template <typename T>
ClipResult clip_global_norm(std::span<BasicTensor<T>> tensors, double max_norm) {
  std::vector<std::span<T>> buffers;
  buffers.reserve(tensors.size());
  for (auto& t : tensors) buffers.push_back(t.data());
  return clip_global_norm<T>(std::span<const std::span<T>>(buffers), max_norm);
}

template <typename T>
ClipResult clip_grad_norm(std::span<BasicTensor<T>* const> params, double max_norm) {
  std::vector<std::span<T>> buffers;
  buffers.reserve(params.size());
  for (auto* p : params) {
    if (p->has_grad()) buffers.push_back(p->grad());
  }
  return clip_global_norm<T>(std::span<const std::span<T>>(buffers), max_norm);
}

template void adam_step<float>(std::span<BasicTensor<float>* const>, AdamState<float>&, const AdamHyper&);
template void adam_step<double>(std::span<BasicTensor<double>* const>, AdamState<double>&, const AdamHyper&);
template ClipResult clip_global_norm<float>(std::span<const std::span<float>>, double);
template ClipResult clip_global_norm<double>(std::span<const std::span<double>>, double);
template ClipResult clip_global_norm<float>(std::span<BasicTensor<float>>, double);
template ClipResult clip_global_norm<double>(std::span<BasicTensor<double>>, double);
template ClipResult clip_grad_norm<float>(std::span<BasicTensor<float>* const>, double);
template ClipResult clip_grad_norm<double>(std::span<BasicTensor<double>* const>, double);

}  // namespace adaptlm
