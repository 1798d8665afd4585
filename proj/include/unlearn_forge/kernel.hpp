#pragma once

#include <cstdint>

#include "unlearn_forge/gaussian.hpp"

namespace uf {

/// Conditional law W | W_l = N(A·W_l + c, L·Lᵀ). Every unlearning
/// mechanism in the library reduces to one of these once the erased set and
/// statistic are fixed, which makes marginals and averaged KLs exact.
struct LinearGaussianKernel {
  Matrix transform;
  Vector offset;
  Matrix noise_factor;

  /// W independent of W_l.
  static LinearGaussianKernel constant(const GaussianDist& out);

  std::size_t dim() const { return static_cast<std::size_t>(offset.size()); }

  GaussianDist apply(const Vector& w_l) const;
  /// Exact law of W when W_l ~ input.
  GaussianDist marginal(const GaussianDist& input) const;
  /// K-component equal-weight mixture over seeded draws W_l ~ input.
  GaussianMixture mixture_from_samples(const GaussianDist& input, std::size_t count,
                                       std::uint64_t seed) const;
  /// E_{W_l~input} KL(apply(W_l) || target), closed form.
  double expected_kl(const GaussianDist& input, const GaussianDist& target) const;
};

}  // namespace uf
