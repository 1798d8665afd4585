#include "unlearn_forge/pacbayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "unlearn_forge/eubo.hpp"
#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive and finite");
}

void check_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in (0, 1]");
}

}  // namespace

double free_energy_irm(const GaussianDist& q, const GaussianDist& prior, const Dataset& data,
                       const Loss& loss, double beta) {
  check_beta(beta);
  if (q.dim() != prior.dim()) throw ShapeError("free_energy_irm: dimension mismatch");
  return training_loss_form(data, loss).expectation(q) + kl_gaussian(q, prior) / beta;
}

GaussianObjective free_energy_objective(const GaussianDist& prior, const Dataset& data,
                                        const Loss& loss, double beta) {
  check_beta(beta);
  const QuadraticForm f = training_loss_form(data, loss);
  return [f, prior, beta](const GaussianDist& q, Vector* g_mean, Matrix* g_cov) {
    const double kl = kl_gaussian_with_gradient(q, prior, g_mean, g_cov);
    if (g_mean != nullptr) {
      *g_mean = *g_mean / beta + f.gradient(q.mean());
      *g_cov = *g_cov / beta + f.quad;
    }
    return f.expectation(q) + kl / beta;
  };
}

GaussianDist gibbs_posterior(const GaussianDist& prior, const Dataset& data, const Loss& loss,
                             double beta) {
  check_beta(beta);
  const double n = static_cast<double>(data.size());
  // exp(−(β/n)·Σℓ) is a Gaussian likelihood with this variance per point.
  const double variance = loss.kind == LossKind::gaussian_nll
                              ? loss.noise_variance * n / beta
                              : n / (2.0 * beta);
  return exact_posterior(ConjugateModel{prior, variance, loss.task}, data);
}

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::generic: return "generic";
    case BoundKind::avu: return "avu";
    case BoundKind::fl: return "fl";
  }
  return "generic";
}

BoundKind parse_bound_kind(const std::string& name) {
  if (name == "generic") return BoundKind::generic;
  if (name == "avu") return BoundKind::avu;
  if (name == "fl") return BoundKind::fl;
  throw ConfigError("unknown bound kind '" + name + "'");
}

void BoundInstantiation::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("bound: delta must lie in (0, 1)");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("bound: scale must be positive");
}

Loss BoundInstantiation::loss_for(const ConjugateModel& model) const {
  switch (kind) {
    case BoundKind::avu: return model.log_loss();
    case BoundKind::fl: return Loss::squared_error(model.task);
    case BoundKind::generic:
      return loss == LossKind::gaussian_nll ? model.log_loss() : Loss::squared_error(model.task);
  }
  return model.log_loss();
}

double XiExponent::operator()(const Vector& w, double clamp, std::size_t* hits) const {
  auto clamped = [&](double x) {
    if (x > clamp || x < -clamp) {
      if (hits != nullptr) ++*hits;
      return std::clamp(x, -clamp, clamp);
    }
    return x;
  };
  double sum = 0.0;
  for (const auto& p : points) sum += clamped(p(w));
  return population_coef * clamped(population(w)) + point_coef * sum;
}

QuadraticForm XiExponent::total() const {
  QuadraticForm f = population_coef * population;
  QuadraticForm pts = QuadraticForm::zero(population.dim());
  for (const auto& p : points) pts += p;
  return f + point_coef * pts;
}

XiExponent xi_exponent(const BoundInstantiation& inst, const ConjugateModel& model,
                       const PopulationSpec& spec, const Trial& trial) {
  const Loss loss = inst.loss_for(model);
  const std::size_t p = model.parameter_dim();
  XiExponent f;
  f.population = population_loss_form(spec, loss);
  const Dataset* source = &trial.data;
  switch (inst.kind) {
    case BoundKind::avu:
      // m·L_log(W) − log P(D_e|W) = m·L_log(W) + Σ_{D_e} ℓ_log(W, z).
      f.population_coef = static_cast<double>(trial.erased.size());
      f.point_coef = 1.0;
      source = &trial.erased;
      break;
    case BoundKind::fl:
      f.population_coef = inst.scale;
      f.point_coef = -inst.scale / static_cast<double>(trial.remaining.size());
      source = &trial.remaining;
      break;
    case BoundKind::generic:
      f.population_coef = inst.scale;
      f.point_coef = -inst.scale / static_cast<double>(trial.data.size());
      break;
  }
  f.points.reserve(source->size());
  for (const auto& z : source->points()) f.points.push_back(loss.point_form(z, p));
  return f;
}

GaussianDist xi_prior(const BoundInstantiation& inst, const ConjugateModel& model,
                      const Trial& trial, const std::optional<ScrubReference>& reference) {
  switch (inst.kind) {
    case BoundKind::generic: return model.prior;
    case BoundKind::avu: return trial.learned;
    case BoundKind::fl:
      if (!reference) throw ConfigError("fl bound requires a scrub reference");
      return reference_marginal_exact(trial.retrained, *reference);
  }
  return model.prior;
}

LogMeanExp log_mean_exp_nested(const std::vector<std::vector<double>>& rows) {
  LogMeanExp out;
  if (rows.empty()) throw ConfigError("log_mean_exp_nested: no outer draws");
  std::vector<double> row_logs;
  row_logs.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.empty()) throw ConfigError("log_mean_exp_nested: empty inner sample");
    for (double x : r) {
      if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) out.overflow = true;
    }
    row_logs.push_back(log_sum_exp(r) - std::log(static_cast<double>(r.size())));
  }
  if (out.overflow) {
    out.log_mean = std::numeric_limits<double>::infinity();
    out.stderr_log = std::numeric_limits<double>::infinity();
    return out;
  }
  const double n = static_cast<double>(rows.size());
  out.log_mean = log_sum_exp(row_logs) - std::log(n);
  if (!std::isfinite(out.log_mean)) {
    out.overflow = out.log_mean > 0.0;
    return out;
  }
  // Delta method on the outer means, scaled by the overall mean.
  if (rows.size() > 1) {
    double ss = 0.0;
    double comp = 0.0;
    for (double l : row_logs) {
      const double y = std::exp(l - out.log_mean) - 1.0;
      const double term = y * y - comp;
      const double t = ss + term;
      comp = (t - ss) - term;
      ss = t;
    }
    out.stderr_log = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

XiEstimate estimate_xi(const BoundInstantiation& inst, const ConjugateModel& model,
                       const PopulationSpec& spec, std::size_t n, std::size_t m,
                       const XiSettings& settings) {
  inst.validate();
  if (settings.n_outer < 10 || settings.n_inner < 10) {
    throw ConfigError("estimate_xi: n_outer and n_inner must each be at least 10");
  }
  if (!(settings.clamp > 0.0)) throw ConfigError("estimate_xi: clamp must be positive");
  const std::uint64_t outer_seed = derive_seed(settings.seed, "xi-outer");
  const std::uint64_t inner_seed = derive_seed(settings.seed, "xi-inner");
  XiEstimate est;
  est.kind = inst.kind;
  est.n_outer = settings.n_outer;
  est.n_inner = settings.n_inner;
  std::vector<std::vector<double>> rows(settings.n_outer);
  for (std::size_t i = 0; i < settings.n_outer; ++i) {
    const Trial trial = draw_trial(model, spec, n, m, mix_seed(outer_seed + i));
    const GaussianDist prior = xi_prior(inst, model, trial, settings.reference);
    const XiExponent f = xi_exponent(inst, model, spec, trial);
    Rng rng = make_rng(inner_seed + i);
    rows[i].reserve(settings.n_inner);
    for (std::size_t j = 0; j < settings.n_inner; ++j) {
      rows[i].push_back(f(draw(prior, rng), settings.clamp, &est.clamp_hits));
    }
  }
  const LogMeanExp lme = log_mean_exp_nested(rows);
  est.log_xi = lme.log_mean;
  est.stderr_log = lme.stderr_log;
  est.overflow = lme.overflow;
  return est;
}

double log_exp_quadratic_moment(const GaussianDist& q, const QuadraticForm& f) {
  if (q.dim() != f.dim()) throw ShapeError("log_exp_quadratic_moment: dimension mismatch");
  // Whitened: W = μ + L x, f = xᵀBx + 2aᵀx + f(μ) with B = LᵀQL, a = Lᵀ(Qμ − b).
  const Matrix& l = q.cov_factor();
  const Matrix b = l.transpose() * f.quad * l;
  const Vector a = l.transpose() * (f.quad * q.mean() - f.lin);
  const auto d = b.rows();
  const Matrix p = Matrix::Identity(d, d) - (b + b.transpose());
  Eigen::LLT<Matrix> llt(p);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Matrix lp = llt.matrixL();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(lp(i, i) > 0.0)) return std::numeric_limits<double>::infinity();
  }
  const double log_det = 2.0 * lp.diagonal().array().log().sum();
  return f(q.mean()) + 2.0 * a.dot(llt.solve(a)) - 0.5 * log_det;
}

double bound_rhs_avu(double eubo_expected, std::size_t m, const XiEstimate& xi, double delta) {
  check_delta(delta);
  if (m == 0) throw ConfigError("bound_rhs_avu: m must be positive");
  if (xi.kind != BoundKind::avu) throw ConsistencyError("bound_rhs_avu: xi estimate is not avu");
  const double inv_m = 1.0 / static_cast<double>(m);
  return inv_m * eubo_expected + inv_m * (xi.log_xi - std::log(delta));
}

double bound_rhs_fl(double fl_value, double beta, double lambda, const XiEstimate& xi,
                    double delta) {
  check_beta(beta);
  check_delta(delta);
  if (xi.kind != BoundKind::fl) throw ConsistencyError("bound_rhs_fl: xi estimate is not fl");
  if (std::abs(lambda - 1.0 / beta) > 1e-12 * std::max(1.0, 1.0 / beta)) {
    throw ConsistencyError("bound_rhs_fl: the forgetting Lagrangian used lambda = " +
                           format_double(lambda) + " but the bound needs 1/beta = " +
                           format_double(1.0 / beta));
  }
  return fl_value + (xi.log_xi - std::log(delta)) / beta;
}

Estimate test_log_loss(const GaussianMixture& q, const PopulationSpec& spec,
                       const ConjugateModel& model, std::optional<MonteCarloMode> mc) {
  if (q.dim() != model.parameter_dim()) throw ShapeError("test_log_loss: dimension mismatch");
  const Loss nll = model.log_loss();
  if (!mc) {
    // population_loss_form throws CapabilityError for unsupported pairs.
    return {population_loss_form(spec, nll).expectation(q), 0.0};
  }
  if (mc->n_mc < 2) throw ConfigError("test_log_loss: n_mc must be >= 2");
  const Dataset z = generate_dataset(spec, mc->n_mc, derive_seed(mc->seed, "test-z"));
  Rng rng = make_rng(derive_seed(mc->seed, "test-w"));
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x = nll(q.draw(rng), z[i]);
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  const double n = static_cast<double>(z.size());
  return {mean, std::sqrt(m2 / (n - 1.0) / n)};
}

BoundReport make_bound_report(const BoundInstantiation& inst, double lhs, double lhs_stderr,
                              double training_term, double kl_term, const XiEstimate& xi) {
  inst.validate();
  BoundReport r;
  r.inst = inst;
  r.lhs = lhs;
  r.lhs_stderr = lhs_stderr;
  r.training_term = training_term;
  r.kl_term = kl_term;
  r.slack_term = (xi.log_xi - std::log(inst.delta)) / inst.scale;
  r.rhs = r.training_term + r.kl_term + r.slack_term;
  r.holds = r.lhs <= r.rhs + 3.0 * r.lhs_stderr;
  r.low_confidence = xi.overflow || !(xi.stderr_log <= 0.5);
  return r;
}

BoundReport generic_bound_report(const BoundInstantiation& inst, const Trial& trial,
                                 const ConjugateModel& model, const PopulationSpec& spec,
                                 const XiEstimate& xi) {
  const Loss loss = inst.loss_for(model);
  const double beta = inst.scale;
  const double lhs = population_loss_form(spec, loss).expectation(trial.learned);
  const double train = training_loss_form(trial.data, loss).expectation(trial.learned);
  const double kl = kl_gaussian(trial.learned, model.prior) / beta;
  return make_bound_report(inst, lhs, 0.0, train, kl, xi);
}

BoundReport avu_bound_report(const BoundInstantiation& inst, const LinearGaussianKernel& kernel,
                             const Trial& trial, const ConjugateModel& model,
                             const PopulationSpec& spec, const XiEstimate& xi) {
  const double m = static_cast<double>(trial.erased.size());
  if (std::abs(inst.scale - m) > 0.0) {
    throw ConsistencyError("avu bound: scale must equal the number of erased points");
  }
  const GaussianDist marg = kernel.marginal(trial.learned);
  const double lhs = test_log_loss(GaussianMixture::single(marg), spec, model).value;
  // E_{W_l} EUBO = E[log P(D_e|W)] under the marginal + E_{W_l} KL(q_{W_l} || P(W|D)).
  const double train = expected_log_lik(marg, trial.erased, model) / m;
  const double kl = kernel.expected_kl(trial.learned, trial.learned) / m;
  return make_bound_report(inst, lhs, 0.0, train, kl, xi);
}

BoundReport fl_bound_report(const BoundInstantiation& inst, const LinearGaussianKernel& kernel,
                            const Trial& trial, const ConjugateModel& model,
                            const PopulationSpec& spec, const ScrubReference& reference,
                            const XiEstimate& xi) {
  const Loss loss = inst.loss_for(model);
  const double beta = inst.scale;
  const GaussianDist marg = kernel.marginal(trial.learned);
  const double lhs = population_loss_form(spec, loss).expectation(marg);
  const double train = training_loss_form(trial.remaining, loss).expectation(marg);
  const double kl = kl_gaussian(marg, reference_marginal_exact(trial.retrained, reference)) / beta;
  return make_bound_report(inst, lhs, 0.0, train, kl, xi);
}

}  // namespace uf
