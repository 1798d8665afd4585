#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearn_forge/bayes.hpp"
#include "unlearn_forge/kernel.hpp"
#include "unlearn_forge/optimize.hpp"

namespace uf {

/// W = W_l + G·∇log P(D_e|W_l) + L·ε.
struct ScrubMechanism {
  Matrix shift_gain;
  Matrix cov_factor;

  std::size_t dim() const { return static_cast<std::size_t>(cov_factor.rows()); }
  void validate() const;
};

/// Reference law W = W_l + L₀·ε applied to retrained weights.
struct ScrubReference {
  Matrix noise_cov_factor;
};

ScrubReference isotropic_reference(std::size_t d, double noise_std);
/// G = 0 with the reference's noise: what the reference does to W_l.
ScrubMechanism identity_scrub(const ScrubReference& reference);

enum class MarginalMode { mc, moment_match };

std::string to_string(MarginalMode mode);
MarginalMode parse_marginal_mode(const std::string& name);

LinearGaussianKernel scrub_kernel(const ScrubMechanism& scrub, const Dataset& erased,
                                  const ConjugateModel& model);

/// Everything the forgetting Lagrangian depends on besides the scrub and λ.
struct ForgettingContext {
  ConjugateModel model;
  GaussianDist learned;
  GaussianDist retrained;
  Dataset erased;
  Dataset remaining;
  ScrubReference reference;
  Loss loss;
  /// Number of W_l draws forming each marginal.
  std::size_t components = 64;
  /// Draws for the Monte Carlo KL (mc mode only).
  std::size_t n_mc = 1000;
  std::uint64_t seed = 0;
  MarginalMode mode = MarginalMode::moment_match;

  void validate() const;
};

/// Mixture over K draws W_l ~ P(W|D) of the scrubbed law.
GaussianMixture scrubbed_mixture(const ScrubMechanism& scrub, const ForgettingContext& ctx);
/// Mixture over K draws W_l ~ P(W|D_r) of the reference law. The draws
/// share their standard-normal innovations with scrubbed_mixture.
GaussianMixture reference_mixture(const ForgettingContext& ctx);
/// N(μ_r, Σ_r + L₀L₀ᵀ): the reference marginal without sampling.
GaussianDist reference_marginal_exact(const GaussianDist& retrained,
                                      const ScrubReference& reference);

struct ForgettingTerms {
  /// E[L̂(W|D_r)] under the scrubbed marginal.
  double loss_term = 0.0;
  /// KL between the scrubbed and reference marginals.
  double kl_term = 0.0;
  double kl_std_error = 0.0;

  double value(double lambda) const { return loss_term + lambda * kl_term; }
};

ForgettingTerms forgetting_terms(const ScrubMechanism& scrub, const ForgettingContext& ctx);
double forgetting_lagrangian(const ScrubMechanism& scrub, const ForgettingContext& ctx,
                             double lambda);

struct ScrubFit {
  ScrubMechanism mechanism;
  ForgettingTerms terms;
  std::vector<double> objective_trace;
  std::size_t steps = 0;
  bool converged = false;
};

/// Gradient descent on the forgetting Lagrangian. Moment-match mode uses
/// analytic gradients; mc mode differentiates the common-random-number
/// objective by central differences.
ScrubFit minimize_forgetting_lagrangian(const ScrubMechanism& init, const ForgettingContext& ctx,
                                        double lambda, const OptimOptions& opts);

}  // namespace uf
