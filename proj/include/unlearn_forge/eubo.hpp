#pragma once

#include "unlearn_forge/bayes.hpp"
#include "unlearn_forge/optimize.hpp"

namespace uf {

/// E_q[log P(D_e|W)] + KL(q || learned). Requires a non-empty erased set.
double eubo(const GaussianDist& q, const GaussianDist& learned, const Dataset& erased,
            const ConjugateModel& model);

/// EUBO as a GaussianObjective with analytic gradients in (μ, Σ).
GaussianObjective eubo_objective(const GaussianDist& learned, const Dataset& erased,
                                 const ConjugateModel& model);

/// Minimizes the EUBO from `init`. With the full Gaussian family the
/// minimizer is the posterior on the remaining data.
VariationalState minimize_eubo(const GaussianDist& init, const GaussianDist& learned,
                               const Dataset& erased, const ConjugateModel& model,
                               const OptimOptions& opts);

/// KL(q || p) with its gradients in the mean and covariance of q:
/// ∂/∂μ = Σ_p⁻¹(μ − μ_p), ∂/∂Σ = ½(Σ_p⁻¹ − Σ⁻¹).
double kl_gaussian_with_gradient(const GaussianDist& q, const GaussianDist& p, Vector* grad_mean,
                                 Matrix* grad_cov);

}  // namespace uf
