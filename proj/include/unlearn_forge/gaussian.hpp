#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "unlearn_forge/random.hpp"

namespace uf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Multivariate normal N(mean, L Lᵀ) carried by its lower-triangular
/// Cholesky factor L. The diagonal of L is strictly positive, so the
/// covariance is positive definite by construction.
class GaussianDist {
 public:
  /// Throws ShapeError on mismatched sizes and FactorizationError if the
  /// factor is not lower triangular with a strictly positive diagonal.
  GaussianDist(Vector mean, Matrix cov_factor);

  /// Factorizes `cov`; throws FactorizationError if it is not PD.
  static GaussianDist from_covariance(Vector mean, const Matrix& cov);
  static GaussianDist isotropic(Vector mean, double variance);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov_factor() const { return factor_; }

  Matrix covariance() const;
  Matrix precision() const;
  double log_det_cov() const;
  double trace_cov() const;

  /// L⁻¹ v by forward substitution.
  Vector whiten(const Vector& v) const;
  /// L⁻¹ M column-wise.
  Matrix whiten_columns(const Matrix& m) const;

  friend bool operator==(const GaussianDist& a, const GaussianDist& b) {
    return a.dim() == b.dim() && a.mean_ == b.mean_ && a.factor_ == b.factor_;
  }

 private:
  Vector mean_;
  Matrix factor_;
};

double log_pdf(const GaussianDist& dist, const Vector& w);

/// Closed-form KL(p || q). Clamped at zero against rounding.
double kl_gaussian(const GaussianDist& p, const GaussianDist& q);

Vector draw(const GaussianDist& dist, Rng& rng);
std::vector<Vector> sample(const GaussianDist& dist, std::size_t count, std::uint64_t seed);

/// Finite mixture of Gaussians sharing one dimension.
class GaussianMixture {
 public:
  /// Weights must be non-negative and sum to one within 1e-12.
  GaussianMixture(std::vector<double> weights, std::vector<GaussianDist> components);
  /// Equal-weight mixture.
  explicit GaussianMixture(std::vector<GaussianDist> components);
  static GaussianMixture single(GaussianDist component);

  std::size_t dim() const { return components_.front().dim(); }
  std::size_t size() const { return components_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<GaussianDist>& components() const { return components_; }

  /// log Σ_k w_k N(w; μ_k, Σ_k), evaluated by log-sum-exp.
  double log_pdf(const Vector& w) const;
  Vector draw(Rng& rng) const;

  Vector mean() const;
  Matrix covariance() const;

 private:
  void check_invariants() const;

  std::vector<double> weights_;
  std::vector<GaussianDist> components_;
};

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  /// Set when q assigns zero density to a draw from p.
  bool infinite = false;
};

/// E_{w~p}[log p(w) - log q(w)] from n_mc seeded draws (n_mc >= 100).
MonteCarloEstimate kl_mixture_mc(const GaussianMixture& p, const GaussianMixture& q,
                                 std::size_t n_mc, std::uint64_t seed);

/// Gaussian with the mixture's exact first two moments.
GaussianDist moment_match(const GaussianMixture& mix);

/// f(w) = wᵀ·quad·w − 2·linᵀ·w + constant. Every loss and log-likelihood in
/// the two supported tasks takes this form in the parameter w.
struct QuadraticForm {
  Matrix quad;
  Vector lin;
  double constant = 0.0;

  static QuadraticForm zero(std::size_t d);

  std::size_t dim() const { return static_cast<std::size_t>(lin.size()); }
  double operator()(const Vector& w) const;
  Vector gradient(const Vector& w) const;
  /// E_{w~q} f(w) = f(μ) + tr(quad·Σ).
  double expectation(const GaussianDist& q) const;
  /// Mixture expectation; exact since f is quadratic.
  double expectation(const GaussianMixture& q) const;

  QuadraticForm& operator+=(const QuadraticForm& other);
  QuadraticForm& operator*=(double s);
  friend QuadraticForm operator*(double s, QuadraticForm f) { return f *= s; }
  friend QuadraticForm operator+(QuadraticForm a, const QuadraticForm& b) { return a += b; }
};

/// log(Σ exp(x_i)) with the max shifted out; −inf for empty or all −inf.
double log_sum_exp(const std::vector<double>& x);

/// Cholesky factor of a symmetric PD matrix; throws FactorizationError.
Matrix cholesky_factor(const Matrix& spd);

}  // namespace uf
