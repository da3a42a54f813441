#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace adaptlm {

// All stochastic steps draw from mt19937_64. Each concern (init, masking,
// shuffling, dropout, splitting) gets its own stream derived from the run
// seed, so changing how much one concern consumes never perturbs another.
using Rng = std::mt19937_64;

inline constexpr std::string_view kRngAlgorithm = "mt19937_64";

std::uint64_t derive_seed(std::uint64_t seed, std::string_view concern);
Rng make_rng(std::uint64_t seed, std::string_view concern);

// Uniform in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

// Uniform integer in [0, n) by rejection; n > 0. Independent of the standard
// library's distribution implementations.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Standard normal via Box-Muller (two uniform draws per call).
double standard_normal(Rng& rng);

template <typename Vec>
void shuffle_in_place(Vec& items, Rng& rng) {
  using std::swap;
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    swap(items[i - 1], items[j]);
  }
}

}  // namespace adaptlm
