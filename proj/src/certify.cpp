#include "unlearn_forge/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unlearn_forge/error.hpp"

namespace uf {

std::string to_string(CertMode mode) {
  switch (mode) {
    case CertMode::marginal: return "marginal";
    case CertMode::conditional_worst: return "conditional-worst";
    case CertMode::conditional_avg: return "conditional-avg";
  }
  return "marginal";
}

CertMode parse_cert_mode(const std::string& name) {
  if (name == "marginal") return CertMode::marginal;
  if (name == "conditional-worst") return CertMode::conditional_worst;
  if (name == "conditional-avg") return CertMode::conditional_avg;
  throw ConfigError("unknown certificate mode '" + name + "'");
}

CertResult certify_epsilon(const GaussianMixture& output, const GaussianDist& retrained,
                           CertMode mode, std::size_t n_mc, std::uint64_t seed,
                           std::optional<double> threshold) {
  if (output.dim() != retrained.dim()) throw ShapeError("certify: dimension mismatch");
  CertResult r;
  r.mode = mode;
  r.threshold = threshold;
  if (mode == CertMode::marginal) {
    const MonteCarloEstimate kl =
        kl_mixture_mc(output, GaussianMixture::single(retrained), n_mc, seed);
    r.infinite = kl.infinite;
    r.epsilon_estimate = kl.infinite ? std::numeric_limits<double>::infinity() : kl.estimate;
    r.std_error = kl.std_error;
  } else {
    const auto& w = output.weights();
    const auto& comps = output.components();
    double mean = 0.0;
    double worst = 0.0;
    std::vector<double> kls(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      kls[k] = kl_gaussian(comps[k], retrained);
      mean += w[k] * kls[k];
      if (w[k] > 0.0) worst = std::max(worst, kls[k]);
    }
    if (mode == CertMode::conditional_avg) {
      // Standard error of the weighted mean, treating components as draws.
      double var = 0.0;
      double w2 = 0.0;
      for (std::size_t k = 0; k < comps.size(); ++k) {
        var += w[k] * (kls[k] - mean) * (kls[k] - mean);
        w2 += w[k] * w[k];
      }
      const double n_eff = w2 > 0.0 ? 1.0 / w2 : 1.0;
      r.epsilon_estimate = mean;
      r.std_error = n_eff > 1.0 ? std::sqrt(var * n_eff / (n_eff - 1.0) / n_eff) : 0.0;
    } else {
      r.epsilon_estimate = worst;
      r.std_error = 0.0;
    }
  }
  if (threshold && !r.infinite && r.epsilon_estimate + 3.0 * r.std_error <= *threshold) {
    r.passed_at = *threshold;
  }
  return r;
}

}  // namespace uf
