#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "unlearn_forge/amortized.hpp"
#include "unlearn_forge/certify.hpp"
#include "unlearn_forge/eubo.hpp"
#include "unlearn_forge/scrub.hpp"

namespace uf {

/// retrain: exact downdate. eubo: per-request variational fit. avu: trained
/// amortized map. scrub: forgetting-Lagrangian fit. noop: keep W_l.
enum class Method { retrain, eubo, avu, scrub, noop };

std::string to_string(Method method);
Method parse_method(const std::string& name);

struct UnlearnSettings {
  Method method = Method::eubo;
  OptimOptions opts;
  /// Required for Method::avu.
  std::optional<AmortizedMechanism> amortized;
  ScrubReference reference;
  double lambda = 1.0;
  std::size_t components = 64;
  MarginalMode marginal_mode = MarginalMode::moment_match;
  std::size_t fl_n_mc = 1000;
  double noop_scale = 1e-3;
};

struct UnlearnOutcome {
  LinearGaussianKernel kernel;
  std::optional<VariationalState> variational;
  std::optional<ScrubFit> scrub;
};

/// Forgetting-Lagrangian inputs for one trial, using squared error on D_r.
ForgettingContext forgetting_context(const Trial& trial, const ConjugateModel& model,
                                     const UnlearnSettings& settings, std::uint64_t seed);

/// Runs the configured mechanism on one trial and returns it as a kernel.
UnlearnOutcome unlearn(const UnlearnSettings& settings, const Trial& trial,
                       const ConjugateModel& model, std::uint64_t seed);

/// Output law fed to certify_epsilon: the exact marginal as a single
/// component for the marginal mode, K sampled conditionals otherwise.
GaussianMixture certificate_mixture(const LinearGaussianKernel& kernel,
                                    const GaussianDist& learned, CertMode mode,
                                    std::size_t components, std::uint64_t seed);

}  // namespace uf
