#include "unlearn_forge/eubo.hpp"

#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

void check(const GaussianDist& q, const GaussianDist& learned, const Dataset& erased,
           const ConjugateModel& model) {
  if (erased.is_empty()) throw ConfigError("eubo: the erased set must contain at least one point");
  if (q.dim() != learned.dim() || q.dim() != model.parameter_dim()) {
    throw ShapeError("eubo: distribution dimensions do not match the model");
  }
}

}  // namespace

double kl_gaussian_with_gradient(const GaussianDist& q, const GaussianDist& p, Vector* grad_mean,
                                 Matrix* grad_cov) {
  const double value = kl_gaussian(q, p);
  if (grad_mean != nullptr) {
    const Matrix p_prec = p.precision();
    *grad_mean = p_prec * (q.mean() - p.mean());
    if (grad_cov != nullptr) *grad_cov = 0.5 * (p_prec - q.precision());
  }
  return value;
}

double eubo(const GaussianDist& q, const GaussianDist& learned, const Dataset& erased,
            const ConjugateModel& model) {
  check(q, learned, erased, model);
  return expected_log_lik(q, erased, model) + kl_gaussian(q, learned);
}

GaussianObjective eubo_objective(const GaussianDist& learned, const Dataset& erased,
                                 const ConjugateModel& model) {
  check(learned, learned, erased, model);
  const DataInformation info = data_information(model, erased);
  return [info, learned](const GaussianDist& q, Vector* g_mean, Matrix* g_cov) {
    const Vector& mu = q.mean();
    const Matrix cov = q.covariance();
    const double loglik = -0.5 * (mu.dot(info.info * mu) + (info.info * cov).trace()) +
                          info.score.dot(mu) + info.constant;
    const double kl = kl_gaussian_with_gradient(q, learned, g_mean, g_cov);
    if (g_mean != nullptr) {
      *g_mean += info.score - info.info * mu;
      *g_cov -= 0.5 * info.info;
    }
    return loglik + kl;
  };
}

VariationalState minimize_eubo(const GaussianDist& init, const GaussianDist& learned,
                               const Dataset& erased, const ConjugateModel& model,
                               const OptimOptions& opts) {
  check(init, learned, erased, model);
  return minimize_gaussian(init, eubo_objective(learned, erased, model), opts);
}

}  // namespace uf
