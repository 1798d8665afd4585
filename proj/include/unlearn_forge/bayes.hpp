#pragma once

#include <variant>

#include "unlearn_forge/core.hpp"
#include "unlearn_forge/gaussian.hpp"

namespace uf {

/// Gaussian prior over W with a Gaussian likelihood of known variance.
struct ConjugateModel {
  GaussianDist prior{Vector::Zero(1), Matrix::Identity(1, 1)};
  double noise_variance = 1.0;
  Task task = Task::gaussian_mean;

  std::size_t parameter_dim() const { return prior.dim(); }
  std::size_t data_dim() const { return uf::data_dim(task, parameter_dim()); }
  /// Log-loss ℓ(w,z) = −log P(z|w) of this model.
  Loss log_loss() const { return Loss::gaussian_nll(task, noise_variance); }
  void validate() const;
};

/// Information form: precision Λ = Σ⁻¹ and shift η = Λμ.
struct NaturalParams {
  Matrix precision;
  Vector shift;
};

NaturalParams to_natural(const GaussianDist& dist);
/// Throws DowndateError if the precision is not positive definite.
GaussianDist from_natural(const NaturalParams& nat);

/// Sufficient statistics of a dataset under the model:
/// log P(D|w) = −½ wᵀ·info·w + scoreᵀ·w + constant.
struct DataInformation {
  Matrix info;
  Vector score;
  double constant = 0.0;
};

DataInformation data_information(const ConjugateModel& model, const Dataset& data);

/// Exact conjugate posterior P(W|D); requires n >= 1.
GaussianDist exact_posterior(const ConjugateModel& model, const Dataset& data);
NaturalParams exact_posterior_natural(const ConjugateModel& model, const Dataset& data);

/// Removes the contribution of `erased` from a posterior in natural
/// parameters. Equals the posterior on D_r without touching D_r.
NaturalParams downdate_natural(const NaturalParams& post, const ConjugateModel& model,
                               const Dataset& erased);
GaussianDist downdate_posterior(const NaturalParams& post, const ConjugateModel& model,
                                const Dataset& erased);

/// log P(D_e | w) = Σ_{z∈D_e} log P(z|w).
double log_lik_subset(const Vector& w, const Dataset& erased, const ConjugateModel& model);
/// ∇_w log P(D_e | w).
Vector log_lik_gradient(const Vector& w, const Dataset& erased, const ConjugateModel& model);
/// E_{W~q} log P(D_e | W) in closed form.
double expected_log_lik(const GaussianDist& q, const Dataset& erased, const ConjugateModel& model);

enum class StatisticLevel { full_posterior, summary };

std::string to_string(StatisticLevel level);
StatisticLevel parse_statistic_level(const std::string& name);

struct PosteriorSummary {
  Vector mean;
  double trace_cov = 0.0;
};

/// T(D). The full-posterior level carries everything needed to retrain;
/// the summary level only a location and a scalar spread.
struct Statistic {
  StatisticLevel level = StatisticLevel::summary;
  std::variant<NaturalParams, PosteriorSummary> payload;

  Vector posterior_mean() const;
};

Statistic make_statistic(const ConjugateModel& model, const Dataset& data, StatisticLevel level);

/// One learn-then-delete episode with exact learned and retrained laws.
struct Trial {
  Dataset data;
  DeleteRequest request;
  Dataset remaining;
  Dataset erased;
  NaturalParams learned_natural;
  GaussianDist learned;
  GaussianDist retrained;
};

/// Draws D ~ P_Z^n and a uniform m-subset D_e, then computes P(W|D) and,
/// by downdating, P(W|D_r). Seeds for each stage derive from `seed`.
Trial draw_trial(const ConjugateModel& model, const PopulationSpec& spec, std::size_t n,
                 std::size_t m, std::uint64_t seed);

}  // namespace uf
