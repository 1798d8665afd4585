#include "unlearn_forge/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>

#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

}  // namespace

Matrix cholesky_factor(const Matrix& spd) {
  if (spd.rows() != spd.cols() || spd.rows() == 0) {
    throw ShapeError("cholesky_factor: matrix must be square and non-empty");
  }
  if (!spd.allFinite()) throw FactorizationError("cholesky_factor: non-finite entries");
  Matrix sym = 0.5 * (spd + spd.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("cholesky_factor: matrix is not positive definite");
  }
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) throw FactorizationError("cholesky_factor: zero pivot");
  }
  return l;
}

GaussianDist::GaussianDist(Vector mean, Matrix cov_factor)
    : mean_(std::move(mean)), factor_(std::move(cov_factor)) {
  if (mean_.size() == 0) throw ShapeError("GaussianDist: dimension must be >= 1");
  if (factor_.rows() != mean_.size() || factor_.cols() != mean_.size()) {
    throw ShapeError("GaussianDist: covariance factor must be d x d");
  }
  if (!mean_.allFinite() || !factor_.allFinite()) {
    throw FactorizationError("GaussianDist: non-finite parameters");
  }
  for (Eigen::Index i = 0; i < factor_.rows(); ++i) {
    if (!(factor_(i, i) > 0.0)) {
      throw FactorizationError("GaussianDist: factor diagonal must be strictly positive");
    }
    for (Eigen::Index j = i + 1; j < factor_.cols(); ++j) {
      if (factor_(i, j) != 0.0) {
        throw FactorizationError("GaussianDist: factor must be lower triangular");
      }
    }
  }
}

GaussianDist GaussianDist::from_covariance(Vector mean, const Matrix& cov) {
  return GaussianDist(std::move(mean), cholesky_factor(cov));
}

GaussianDist GaussianDist::isotropic(Vector mean, double variance) {
  if (!(variance > 0.0)) throw FactorizationError("GaussianDist: variance must be > 0");
  const auto d = mean.size();
  return GaussianDist(std::move(mean), std::sqrt(variance) * Matrix::Identity(d, d));
}

Matrix GaussianDist::covariance() const { return factor_ * factor_.transpose(); }

Matrix GaussianDist::precision() const {
  Matrix inv_l = factor_.triangularView<Eigen::Lower>().solve(
      Matrix::Identity(factor_.rows(), factor_.cols()));
  return inv_l.transpose() * inv_l;
}

double GaussianDist::log_det_cov() const {
  return 2.0 * factor_.diagonal().array().log().sum();
}

double GaussianDist::trace_cov() const { return factor_.squaredNorm(); }

Vector GaussianDist::whiten(const Vector& v) const {
  require_same_dim(static_cast<std::size_t>(v.size()), dim(), "whiten");
  return factor_.triangularView<Eigen::Lower>().solve(v);
}

Matrix GaussianDist::whiten_columns(const Matrix& m) const {
  require_same_dim(static_cast<std::size_t>(m.rows()), dim(), "whiten");
  return factor_.triangularView<Eigen::Lower>().solve(m);
}

double log_pdf(const GaussianDist& dist, const Vector& w) {
  require_same_dim(static_cast<std::size_t>(w.size()), dist.dim(), "log_pdf");
  const double quad = dist.whiten(w - dist.mean()).squaredNorm();
  return -0.5 * (static_cast<double>(dist.dim()) * kLog2Pi + dist.log_det_cov() + quad);
}

double kl_gaussian(const GaussianDist& p, const GaussianDist& q) {
  require_same_dim(p.dim(), q.dim(), "kl_gaussian");
  // tr(Σq⁻¹Σp) = ‖Lq⁻¹Lp‖²_F ; Mahalanobis term via Lq⁻¹(μq − μp).
  const double trace_term = q.whiten_columns(p.cov_factor()).squaredNorm();
  const double maha = q.whiten(q.mean() - p.mean()).squaredNorm();
  const double kl = 0.5 * (trace_term + maha - static_cast<double>(p.dim()) + q.log_det_cov() -
                           p.log_det_cov());
  return std::max(kl, 0.0);
}

Vector draw(const GaussianDist& dist, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector eps(dist.dim());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
  return dist.mean() + dist.cov_factor().triangularView<Eigen::Lower>() * eps;
}

std::vector<Vector> sample(const GaussianDist& dist, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ConfigError("sample: count must be >= 1");
  Rng rng = make_rng(seed);
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw(dist, rng));
  return out;
}

double log_sum_exp(const std::vector<double>& x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  // Kahan-compensated sum of the shifted exponentials.
  double sum = 0.0;
  double comp = 0.0;
  for (double v : x) {
    const double y = std::exp(v - hi) - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return hi + std::log(sum);
}

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<GaussianDist> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  check_invariants();
}

GaussianMixture::GaussianMixture(std::vector<GaussianDist> components)
    : weights_(components.size(), components.empty() ? 0.0 : 1.0 / components.size()),
      components_(std::move(components)) {
  check_invariants();
}

void GaussianMixture::check_invariants() const {
  if (components_.empty()) throw ConfigError("GaussianMixture: needs at least one component");
  if (weights_.size() != components_.size()) {
    throw ShapeError("GaussianMixture: weights and components differ in length");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("GaussianMixture: weights must be finite and non-negative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GaussianMixture: weights must sum to 1");
  for (const auto& c : components_) {
    require_same_dim(c.dim(), components_.front().dim(), "GaussianMixture");
  }
}

GaussianMixture GaussianMixture::single(GaussianDist component) {
  return GaussianMixture({1.0}, {std::move(component)});
}

double GaussianMixture::log_pdf(const Vector& w) const {
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (weights_[k] == 0.0) continue;
    terms.push_back(std::log(weights_[k]) + uf::log_pdf(components_[k], w));
  }
  return log_sum_exp(terms);
}

Vector GaussianMixture::draw(Rng& rng) const {
  std::size_t k = 0;
  if (components_.size() > 1) {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    k = pick(rng);
  }
  return uf::draw(components_[k], rng);
}

Vector GaussianMixture::mean() const {
  Vector mu = Vector::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t k = 0; k < components_.size(); ++k) mu += weights_[k] * components_[k].mean();
  return mu;
}

Matrix GaussianMixture::covariance() const {
  // Var = E[Var] + Var[E], accumulated around the mixture mean.
  const Vector mu = mean();
  const auto d = static_cast<Eigen::Index>(dim());
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (weights_[k] == 0.0) continue;
    const Vector dev = components_[k].mean() - mu;
    cov += weights_[k] * (components_[k].covariance() + dev * dev.transpose());
  }
  return cov;
}

MonteCarloEstimate kl_mixture_mc(const GaussianMixture& p, const GaussianMixture& q,
                                 std::size_t n_mc, std::uint64_t seed) {
  require_same_dim(p.dim(), q.dim(), "kl_mixture_mc");
  if (n_mc < 100) throw ConfigError("kl_mixture_mc: n_mc must be >= 100");
  Rng rng = make_rng(seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const Vector w = p.draw(rng);
    const double lq = q.log_pdf(w);
    if (!std::isfinite(lq)) {
      return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
              true};
    }
    const double x = p.log_pdf(w) - lq;
    // Welford update.
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc)), false};
}

GaussianDist moment_match(const GaussianMixture& mix) {
  std::size_t active = 0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    if (mix.weights()[k] > 0.0) {
      ++active;
      last = k;
    }
  }
  if (active == 1) return mix.components()[last];
  return GaussianDist::from_covariance(mix.mean(), mix.covariance());
}

QuadraticForm QuadraticForm::zero(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return {Matrix::Zero(n, n), Vector::Zero(n), 0.0};
}

double QuadraticForm::operator()(const Vector& w) const {
  require_same_dim(static_cast<std::size_t>(w.size()), dim(), "QuadraticForm");
  return w.dot(quad * w) - 2.0 * lin.dot(w) + constant;
}

Vector QuadraticForm::gradient(const Vector& w) const {
  require_same_dim(static_cast<std::size_t>(w.size()), dim(), "QuadraticForm::gradient");
  return (quad + quad.transpose()) * w - 2.0 * lin;
}

double QuadraticForm::expectation(const GaussianDist& q) const {
  require_same_dim(q.dim(), dim(), "QuadraticForm::expectation");
  const Matrix& l = q.cov_factor();
  // tr(A L Lᵀ) = Σ_ij (A L)_ij L_ij
  const double trace = (quad * l).cwiseProduct(l).sum();
  return (*this)(q.mean()) + trace;
}

double QuadraticForm::expectation(const GaussianMixture& q) const {
  double total = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q.weights()[k] == 0.0) continue;
    total += q.weights()[k] * expectation(q.components()[k]);
  }
  return total;
}

QuadraticForm& QuadraticForm::operator+=(const QuadraticForm& other) {
  require_same_dim(other.dim(), dim(), "QuadraticForm::operator+=");
  quad += other.quad;
  lin += other.lin;
  constant += other.constant;
  return *this;
}

QuadraticForm& QuadraticForm::operator*=(double s) {
  quad *= s;
  lin *= s;
  constant *= s;
  return *this;
}

}  // namespace uf
