#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "unlearn_forge/gaussian.hpp"

namespace uf {

struct OptimOptions {
  double step_size = 0.5;
  std::size_t max_steps = 100000;
  double grad_tolerance = 1e-9;
  std::uint64_t seed = 0;

  void validate() const;
};

/// f(x), writing ∇f(x) into `grad` when it is non-null.
using Objective = std::function<double(const Vector& x, Vector* grad)>;

struct DescentResult {
  Vector x;
  /// Objective after every accepted step, starting with f(x0).
  std::vector<double> trace;
  std::size_t steps = 0;
  bool converged = false;
  double grad_norm = 0.0;
};

/// Steepest descent with Armijo backtracking. Each step halves the trial
/// step up to 30 times; a trial that does not strictly improve keeps the
/// incumbent. After an accepted move the next trial step is the
/// Barzilai-Borwein step sᵀs / sᵀy, or double the last one when sᵀy <= 0.
/// Stops when
/// ‖∇f‖ < grad_tolerance, after max_steps, or when no halving helps.
/// Throws DivergenceError when f or ∇f is non-finite at the incumbent or
/// at every trial point of a step.
DescentResult gradient_descent(Vector x0, const Objective& f, const OptimOptions& opts);

/// Diagonal map for covariance factors: L_ii = softplus(r_i) = log(1 + e^r).
double softplus(double r);
double softplus_inverse(double y);
double sigmoid(double r);

std::size_t factor_param_count(std::size_t d);
/// Row-major lower triangle; diagonal entries stored as softplus⁻¹(L_ii).
Vector pack_factor(const Matrix& lower);
Matrix unpack_factor(const Eigen::Ref<const Vector>& raw, std::size_t d);
/// Chain rule from ∂f/∂L (lower part used) to the packed parameters.
Vector pack_factor_gradient(const Eigen::Ref<const Vector>& raw, const Matrix& grad_lower,
                            std::size_t d);

/// [mean ; packed factor]
Vector pack_gaussian(const GaussianDist& q);
GaussianDist unpack_gaussian(const Eigen::Ref<const Vector>& theta, std::size_t d);

/// f(μ, Σ) with ∂f/∂μ and the symmetric ∂f/∂Σ written when non-null.
using GaussianObjective =
    std::function<double(const GaussianDist& q, Vector* grad_mean, Matrix* grad_cov)>;

/// Composes a GaussianObjective with the (mean, factor) parameterization.
Objective gaussian_objective(GaussianObjective f, std::size_t d);

struct VariationalState {
  GaussianDist q;
  std::size_t step_count = 0;
  std::vector<double> objective_trace;
  bool converged = false;
  double grad_norm = 0.0;
};

VariationalState minimize_gaussian(const GaussianDist& init, const GaussianObjective& f,
                                   const OptimOptions& opts);

/// Central finite-difference gradient (test and fallback use).
Vector finite_difference_gradient(const Objective& f, const Vector& x, double h);

}  // namespace uf
