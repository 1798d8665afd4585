#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unlearn_forge/bayes.hpp"
#include "unlearn_forge/kernel.hpp"
#include "unlearn_forge/optimize.hpp"
#include "unlearn_forge/scrub.hpp"

namespace uf {

/// E_q[L̂(W|D)] + KL(q || prior)/β.
double free_energy_irm(const GaussianDist& q, const GaussianDist& prior, const Dataset& data,
                       const Loss& loss, double beta);
GaussianObjective free_energy_objective(const GaussianDist& prior, const Dataset& data,
                                        const Loss& loss, double beta);
/// Exact minimizer of free_energy_irm: prior · exp(−β·L̂(W|D)), which for
/// quadratic losses is a conjugate posterior with a tempered noise variance.
GaussianDist gibbs_posterior(const GaussianDist& prior, const Dataset& data, const Loss& loss,
                             double beta);

/// generic: A = [βL, βL̂(·|D)] against the model prior.
/// avu:     A = [m·L_log, log P(D_e|·)] against P(W|D).
/// fl:      A = [βL, βL̂(·|D_r)] against the noisy-retrained reference.
enum class BoundKind { generic, avu, fl };

std::string to_string(BoundKind kind);
BoundKind parse_bound_kind(const std::string& name);

struct BoundInstantiation {
  BoundKind kind = BoundKind::avu;
  /// β for generic and fl; m for avu.
  double scale = 1.0;
  double delta = 0.1;
  /// Loss inside L and L̂ (generic only; avu uses the log-loss, fl squared error).
  LossKind loss = LossKind::squared_error;

  void validate() const;
  Loss loss_for(const ConjugateModel& model) const;
};

/// Where the data-dependent prior and exponent of ξ come from.
struct XiSettings {
  std::size_t n_outer = 200;
  std::size_t n_inner = 200;
  std::uint64_t seed = 0;
  /// Per-sample losses are clamped to [−clamp, clamp].
  double clamp = 50.0;
  /// Reference noise for the fl prior.
  std::optional<ScrubReference> reference;
};

struct XiEstimate {
  double log_xi = 0.0;
  double stderr_log = 0.0;
  std::size_t n_outer = 0;
  std::size_t n_inner = 0;
  BoundKind kind = BoundKind::avu;
  bool overflow = false;
  std::size_t clamp_hits = 0;
};

/// f(D, W) split into per-sample losses so that clamping acts per sample:
/// f = population_coef·L(W) + point_coef·Σ_i ℓ(W, z_i).
struct XiExponent {
  QuadraticForm population;
  double population_coef = 0.0;
  std::vector<QuadraticForm> points;
  double point_coef = 0.0;

  double operator()(const Vector& w, double clamp, std::size_t* hits) const;
  /// Unclamped f as a single quadratic form.
  QuadraticForm total() const;
};

XiExponent xi_exponent(const BoundInstantiation& inst, const ConjugateModel& model,
                       const PopulationSpec& spec, const Trial& trial);
GaussianDist xi_prior(const BoundInstantiation& inst, const ConjugateModel& model,
                      const Trial& trial, const std::optional<ScrubReference>& reference);

struct LogMeanExp {
  double log_mean = 0.0;
  double stderr_log = 0.0;
  bool overflow = false;
};

/// log of (1/(N·M)) Σ_i Σ_j exp(x_ij) where rows are independent outer draws.
/// The log-domain standard error comes from the delta method on the outer
/// means. Sums use compensated accumulation, so row order does not matter
/// beyond rounding.
LogMeanExp log_mean_exp_nested(const std::vector<std::vector<double>>& rows);

/// Nested Monte Carlo: outer (D, D_e) from the data law, inner W from the
/// data-dependent prior. Deterministic per seed.
XiEstimate estimate_xi(const BoundInstantiation& inst, const ConjugateModel& model,
                       const PopulationSpec& spec, std::size_t n, std::size_t m,
                       const XiSettings& settings);

/// log E_{W~q} exp(f(W)) for quadratic f, +inf when the integral diverges.
double log_exp_quadratic_moment(const GaussianDist& q, const QuadraticForm& f);

/// (1/m)·eubo_expected + (1/m)·(log ξ − log δ). δ ∈ (0, 1].
double bound_rhs_avu(double eubo_expected, std::size_t m, const XiEstimate& xi, double delta);
/// fl_value + (1/β)(log ξ − log δ); fl_value must have been computed with λ = 1/β.
double bound_rhs_fl(double fl_value, double beta, double lambda, const XiEstimate& xi,
                    double delta);

/// E_{W~mixture} E_{Z~P_Z}[−log P(Z|W)]. Closed form when `mc` is empty.
Estimate test_log_loss(const GaussianMixture& q, const PopulationSpec& spec,
                       const ConjugateModel& model,
                       std::optional<MonteCarloMode> mc = std::nullopt);

struct BoundReport {
  double lhs = 0.0;
  double lhs_stderr = 0.0;
  double training_term = 0.0;
  double kl_term = 0.0;
  double slack_term = 0.0;
  double rhs = 0.0;
  bool holds = false;
  bool low_confidence = false;
  BoundInstantiation inst;
};

/// Assembles the report: rhs = training + kl + slack, and the bound holds
/// when lhs ≤ rhs + 3·lhs_stderr.
BoundReport make_bound_report(const BoundInstantiation& inst, double lhs, double lhs_stderr,
                              double training_term, double kl_term, const XiEstimate& xi);

/// Generic bound for the learning mechanism P(W|D) itself.
BoundReport generic_bound_report(const BoundInstantiation& inst, const Trial& trial,
                                 const ConjugateModel& model, const PopulationSpec& spec,
                                 const XiEstimate& xi);
/// AVU bound for the unlearning kernel applied to W_l ~ P(W|D). All terms exact.
BoundReport avu_bound_report(const BoundInstantiation& inst, const LinearGaussianKernel& kernel,
                             const Trial& trial, const ConjugateModel& model,
                             const PopulationSpec& spec, const XiEstimate& xi);
/// FL bound for the scrub kernel; KL against the exact reference marginal.
BoundReport fl_bound_report(const BoundInstantiation& inst, const LinearGaussianKernel& kernel,
                            const Trial& trial, const ConjugateModel& model,
                            const PopulationSpec& spec, const ScrubReference& reference,
                            const XiEstimate& xi);

}  // namespace uf
