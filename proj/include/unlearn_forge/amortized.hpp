#pragma once

#include <cstdint>
#include <vector>

#include "unlearn_forge/bayes.hpp"
#include "unlearn_forge/kernel.hpp"
#include "unlearn_forge/optimize.hpp"

namespace uf {

/// Affine-in-gradient Gaussian unlearning map:
///   W ~ N(a + M·∇log P(D_e|a) + b, L·Lᵀ)
/// where the anchor a is W_l for summary statistics and the posterior mean
/// carried by T(D) for full-posterior statistics.
struct AmortizedMechanism {
  Matrix gain;
  Vector bias;
  Matrix cov_factor;
  StatisticLevel statistic_level = StatisticLevel::summary;

  std::size_t dim() const { return static_cast<std::size_t>(bias.size()); }
  void validate() const;
};

/// M = 0, b = 0, L = scale·I: keep W_l and add a little noise.
AmortizedMechanism noop_mechanism(std::size_t d, StatisticLevel level, double scale = 1e-3);

GaussianDist apply_amortized(const AmortizedMechanism& mech, const Vector& w_l,
                             const Statistic& stat, const Dataset& erased,
                             const ConjugateModel& model);

/// The mechanism as a conditional law of W given W_l for one request.
LinearGaussianKernel amortized_kernel(const AmortizedMechanism& mech, const Statistic& stat,
                                      const Dataset& erased, const ConjugateModel& model);

/// One sampled unlearning request with its exact learned and retrained laws.
struct UnlearningTask {
  Dataset erased;
  GaussianDist learned;
  GaussianDist retrained;
  Statistic stat;
};

std::vector<UnlearningTask> sample_tasks(const ConjugateModel& model, const PopulationSpec& spec,
                                         std::size_t n, std::size_t m, StatisticLevel level,
                                         std::size_t count, std::uint64_t seed);

/// E_{W_l~P(W|D)} EUBO(mechanism(W_l), P(W|D)) averaged over tasks.
double average_eubo(const AmortizedMechanism& mech, const std::vector<UnlearningTask>& tasks,
                    const ConjugateModel& model);

/// Mean and standard error over tasks of E_{W_l} KL(mechanism(W_l) || P(W|D_r)).
Estimate average_kl_to_retrained(const AmortizedMechanism& mech,
                                 const std::vector<UnlearningTask>& tasks,
                                 const ConjugateModel& model);
/// Per-task values of the above, for paired comparisons.
std::vector<double> kl_to_retrained(const AmortizedMechanism& mech,
                                    const std::vector<UnlearningTask>& tasks,
                                    const ConjugateModel& model);

struct AmortizedTrainingOptions {
  std::size_t n_tasks = 64;
  /// 0 selects max(8, n_tasks / 4).
  std::size_t n_heldout = 0;
  /// Descent steps between held-out evaluations.
  std::size_t check_every = 50;
  /// Held-out evaluations without improvement before stopping.
  std::size_t patience = 20;
};

struct AmortizedTraining {
  AmortizedMechanism mechanism;
  std::vector<double> train_trace;
  std::vector<double> heldout_trace;
  std::size_t steps = 0;
  bool converged = false;
  /// Set when a single training task makes over-fitting likely.
  bool overfit_warning = false;
};

/// Full-batch descent on the task-averaged EUBO with held-out early
/// stopping. The returned mechanism is the best held-out checkpoint, init
/// included, so it is never worse than init on the held-out tasks.
AmortizedTraining train_amortized(const AmortizedMechanism& init, const ConjugateModel& model,
                                  const PopulationSpec& spec, std::size_t n, std::size_t m,
                                  const AmortizedTrainingOptions& training,
                                  const OptimOptions& opts);

}  // namespace uf
