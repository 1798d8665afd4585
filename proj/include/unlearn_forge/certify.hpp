#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "unlearn_forge/gaussian.hpp"

namespace uf {

enum class CertMode { marginal, conditional_worst, conditional_avg };

std::string to_string(CertMode mode);
CertMode parse_cert_mode(const std::string& name);

struct CertResult {
  double epsilon_estimate = 0.0;
  double std_error = 0.0;
  CertMode mode = CertMode::marginal;
  /// The threshold, when one was given and estimate + 3·stderr stays below it.
  std::optional<double> passed_at;
  /// Threshold requested, whether or not it passed.
  std::optional<double> threshold;
  bool infinite = false;

  bool passed() const { return passed_at.has_value(); }
};

/// KL certificate for an unlearning mechanism whose output law (mixed over
/// the learned weights) is `output`.
///   marginal           KL(output || retrained) by Monte Carlo.
///   conditional-avg    weighted mean of KL(component || retrained).
///   conditional-worst  maximum of KL(component || retrained).
CertResult certify_epsilon(const GaussianMixture& output, const GaussianDist& retrained,
                           CertMode mode, std::size_t n_mc, std::uint64_t seed,
                           std::optional<double> threshold);

}  // namespace uf
