#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "unlearn_forge/pacbayes.hpp"
#include "unlearn_forge/pipeline.hpp"

namespace uf {

/// Runs fn(0..count-1) on `jobs` threads. Exceptions are collected and the
/// one from the lowest index is rethrown, so failures are reproducible.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct ValidityConfig {
  ConjugateModel model;
  PopulationSpec spec;
  std::size_t n = 8;
  std::size_t m = 1;
  BoundInstantiation inst;
  UnlearnSettings unlearn;
  XiSettings xi;
  std::size_t n_trials = 2000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct TrialRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  BoundReport report;
};

struct ValidityReport {
  std::size_t n_trials = 0;
  std::size_t n_violations = 0;
  double delta = 0.0;
  double violation_rate = 0.0;
  /// Exact (Clopper-Pearson) 95% interval for the violation probability.
  double ci_low = 0.0;
  double ci_high = 1.0;
  /// δ + 3·sqrt(δ(1−δ)/n).
  double tolerance = 0.0;
  bool passed = false;
  /// Set when n·δ is too small for the rate to resolve δ.
  bool low_resolution = false;
  XiEstimate xi;
  std::vector<TrialRecord> trials;
};

/// Clopper-Pearson interval at the given confidence level.
std::pair<double, double> binomial_interval(std::size_t trials, std::size_t successes,
                                            double confidence = 0.95);

/// One trial of the experiment. Replaying with the recorded seed reproduces
/// the report bit for bit.
BoundReport run_bound_trial(const ValidityConfig& cfg, const XiEstimate& xi,
                            std::uint64_t trial_seed);

/// Estimates ξ once, then counts trials whose bound fails. Trial i uses seed
/// cfg.seed + i. A failing trial aborts with its index and seed.
ValidityReport run_validity_experiment(const ValidityConfig& cfg);

}  // namespace uf
