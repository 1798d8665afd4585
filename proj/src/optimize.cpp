#include "unlearn_forge/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unlearn_forge/error.hpp"

namespace uf {

void OptimOptions::validate() const {
  if (!(step_size > 0.0) || max_steps == 0 || !(grad_tolerance > 0.0)) {
    throw ConfigError("optimizer: step_size, max_steps and grad_tolerance must be positive");
  }
}

DescentResult gradient_descent(Vector x0, const Objective& f, const OptimOptions& opts) {
  opts.validate();
  constexpr int kMaxHalvings = 30;
  constexpr double kArmijo = 1e-4;
  const double max_step = opts.step_size * 1e8;

  DescentResult res;
  res.x = std::move(x0);
  Vector grad(res.x.size());
  double fx = f(res.x, &grad);
  if (!std::isfinite(fx) || !grad.allFinite()) {
    throw DivergenceError("gradient_descent: non-finite objective at the initial point");
  }
  res.trace.push_back(fx);
  double step = opts.step_size;
  Vector trial_grad(res.x.size());

  while (true) {
    res.grad_norm = grad.norm();
    if (res.grad_norm < opts.grad_tolerance) {
      res.converged = true;
      break;
    }
    if (res.steps >= opts.max_steps) break;

    const double g2 = grad.squaredNorm();
    bool accepted = false;
    bool any_finite = false;
    Vector trial;
    double f_trial = 0.0;
    for (int k = 0; k <= kMaxHalvings; ++k) {
      trial = res.x - step * grad;
      f_trial = f(trial, nullptr);
      if (std::isfinite(f_trial)) {
        any_finite = true;
        if (f_trial < fx && f_trial <= fx - kArmijo * step * g2) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!any_finite) {
        throw DivergenceError("gradient_descent: objective non-finite along the descent ray");
      }
      // No halving improves: numerically stationary.
      break;
    }
    const double f_new = f(trial, &trial_grad);
    if (!trial_grad.allFinite()) {
      throw DivergenceError("gradient_descent: non-finite gradient after step " +
                            std::to_string(res.steps));
    }
    // Barzilai-Borwein step from the last move when the curvature along it
    // is positive; otherwise keep growing the accepted step.
    const Vector s = trial - res.x;
    const double sy = s.dot(trial_grad - grad);
    step = sy > 0.0 ? std::min(s.squaredNorm() / sy, max_step) : std::min(2.0 * step, max_step);
    res.x = std::move(trial);
    fx = f_new;
    grad = trial_grad;
    res.trace.push_back(fx);
    ++res.steps;
  }
  return res;
}

double softplus(double r) {
  if (r > 30.0) return r + std::log1p(std::exp(-r));
  return std::log1p(std::exp(r));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw FactorizationError("softplus_inverse: argument must be positive");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double sigmoid(double r) {
  if (r >= 0.0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

std::size_t factor_param_count(std::size_t d) { return d * (d + 1) / 2; }

Vector pack_factor(const Matrix& lower) {
  const auto d = lower.rows();
  Vector raw(static_cast<Eigen::Index>(factor_param_count(static_cast<std::size_t>(d))));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      raw(k++) = (i == j) ? softplus_inverse(lower(i, i)) : lower(i, j);
    }
  }
  return raw;
}

Matrix unpack_factor(const Eigen::Ref<const Vector>& raw, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix l = Matrix::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      l(i, j) = (i == j) ? softplus(raw(k)) : raw(k);
      ++k;
    }
  }
  return l;
}

Vector pack_factor_gradient(const Eigen::Ref<const Vector>& raw, const Matrix& grad_lower,
                            std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Vector g(raw.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      g(k) = (i == j) ? grad_lower(i, i) * sigmoid(raw(k)) : grad_lower(i, j);
      ++k;
    }
  }
  return g;
}

Vector pack_gaussian(const GaussianDist& q) {
  const auto d = static_cast<Eigen::Index>(q.dim());
  const Vector raw = pack_factor(q.cov_factor());
  Vector theta(d + raw.size());
  theta << q.mean(), raw;
  return theta;
}

GaussianDist unpack_gaussian(const Eigen::Ref<const Vector>& theta, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return GaussianDist(theta.head(n), unpack_factor(theta.tail(theta.size() - n), d));
}

Objective gaussian_objective(GaussianObjective f, std::size_t d) {
  return [f = std::move(f), d](const Vector& theta, Vector* grad) -> double {
    const auto n = static_cast<Eigen::Index>(d);
    GaussianDist q = [&] {
      try {
        return unpack_gaussian(theta, d);
      } catch (const FactorizationError&) {
        return GaussianDist::isotropic(Vector::Zero(n), 1.0);
      }
    }();
    if (!theta.allFinite()) return std::numeric_limits<double>::quiet_NaN();
    if (grad == nullptr) return f(q, nullptr, nullptr);
    Vector g_mean(n);
    Matrix g_cov(n, n);
    const double value = f(q, &g_mean, &g_cov);
    // Σ = LLᵀ ⇒ ∂f/∂L = 2·(∂f/∂Σ)·L for symmetric ∂f/∂Σ.
    const Matrix g_lower = 2.0 * g_cov * q.cov_factor();
    grad->resize(theta.size());
    grad->head(n) = g_mean;
    grad->tail(theta.size() - n) = pack_factor_gradient(theta.tail(theta.size() - n), g_lower, d);
    return value;
  };
}

VariationalState minimize_gaussian(const GaussianDist& init, const GaussianObjective& f,
                                   const OptimOptions& opts) {
  const std::size_t d = init.dim();
  DescentResult res = gradient_descent(pack_gaussian(init), gaussian_objective(f, d), opts);
  return {unpack_gaussian(res.x, d), res.steps, std::move(res.trace), res.converged,
          res.grad_norm};
}

Vector finite_difference_gradient(const Objective& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + step;
    const double up = f(probe, nullptr);
    probe(i) = x(i) - step;
    const double down = f(probe, nullptr);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace uf
