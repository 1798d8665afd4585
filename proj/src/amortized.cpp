#include "unlearn_forge/amortized.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "unlearn_forge/error.hpp"

namespace uf {

void AmortizedMechanism::validate() const {
  const auto d = bias.size();
  if (gain.rows() != d || gain.cols() != d || cov_factor.rows() != d || cov_factor.cols() != d) {
    throw ShapeError("amortized mechanism: gain, bias and covariance factor disagree in size");
  }
  // Constructing a GaussianDist checks the factor.
  GaussianDist(Vector::Zero(d), cov_factor);
}

AmortizedMechanism noop_mechanism(std::size_t d, StatisticLevel level, double scale) {
  const auto n = static_cast<Eigen::Index>(d);
  return {Matrix::Zero(n, n), Vector::Zero(n), scale * Matrix::Identity(n, n), level};
}

namespace {

struct RequestInfo {
  Matrix info;    // H: −∇² log P(D_e|w)
  Vector score;   // s: ∇ log P(D_e|w) = s − H w
};

RequestInfo request_info(const Dataset& erased, const ConjugateModel& model) {
  DataInformation di = data_information(model, erased);
  return {std::move(di.info), std::move(di.score)};
}

LinearGaussianKernel kernel_from(const AmortizedMechanism& mech, const RequestInfo& req,
                                 const Statistic& stat) {
  const auto d = static_cast<Eigen::Index>(mech.dim());
  if (stat.level == StatisticLevel::summary) {
    // Anchor W_l: mean = (I − M H) W_l + M s + b.
    return {Matrix::Identity(d, d) - mech.gain * req.info, mech.gain * req.score + mech.bias,
            mech.cov_factor};
  }
  const Vector anchor = stat.posterior_mean();
  const Vector mean = anchor + mech.gain * (req.score - req.info * anchor) + mech.bias;
  return {Matrix::Zero(d, d), mean, mech.cov_factor};
}

void check_level(const AmortizedMechanism& mech, const Statistic& stat,
                 const ConjugateModel& model) {
  mech.validate();
  if (mech.statistic_level != stat.level) {
    throw ConfigError("amortized mechanism expects a " + to_string(mech.statistic_level) +
                      " statistic but received " + to_string(stat.level));
  }
  if (mech.dim() != model.parameter_dim()) {
    throw ShapeError("amortized mechanism dimension does not match the model");
  }
}

// Per-task quantities reused at every objective evaluation.
struct PreparedTask {
  RequestInfo req;
  Statistic stat;
  GaussianDist learned;
  Matrix learned_precision;
};

std::vector<PreparedTask> prepare(const std::vector<UnlearningTask>& tasks,
                                  const ConjugateModel& model) {
  std::vector<PreparedTask> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) {
    out.push_back({request_info(t.erased, model), t.stat, t.learned, t.learned.precision()});
  }
  return out;
}

double task_eubo(const LinearGaussianKernel& k, const PreparedTask& t) {
  // Both EUBO terms are exact under the linear-Gaussian kernel.
  const GaussianDist marg = k.marginal(t.learned);
  const Matrix cov = marg.covariance();
  const Vector& mu = marg.mean();
  const double quad = mu.dot(t.req.info * mu) + (t.req.info * cov).trace();
  const double loglik_no_const = -0.5 * quad + t.req.score.dot(mu);
  return loglik_no_const + k.expected_kl(t.learned, t.learned);
}

std::size_t param_count(std::size_t d) { return d * d + d + factor_param_count(d); }

Vector pack(const AmortizedMechanism& mech) {
  const auto d = static_cast<Eigen::Index>(mech.dim());
  const Vector raw = pack_factor(mech.cov_factor);
  Vector theta(static_cast<Eigen::Index>(param_count(mech.dim())));
  theta.head(d * d) = mech.gain.reshaped();
  theta.segment(d * d, d) = mech.bias;
  theta.tail(raw.size()) = raw;
  return theta;
}

AmortizedMechanism unpack(const Vector& theta, std::size_t dim, StatisticLevel level) {
  const auto d = static_cast<Eigen::Index>(dim);
  AmortizedMechanism mech;
  mech.gain = theta.head(d * d).reshaped(d, d);
  mech.bias = theta.segment(d * d, d);
  mech.cov_factor = unpack_factor(theta.tail(theta.size() - d * d - d), dim);
  mech.statistic_level = level;
  return mech;
}

// Task-averaged E_{W_l} EUBO with its gradient in the packed parameters.
// Constants of log P(D_e|w) are dropped; they do not move the optimum.
Objective training_objective(std::vector<PreparedTask> tasks, std::size_t dim,
                             StatisticLevel level) {
  return [tasks = std::move(tasks), dim, level](const Vector& theta, Vector* grad) -> double {
    if (!theta.allFinite()) return std::numeric_limits<double>::quiet_NaN();
    const auto d = static_cast<Eigen::Index>(dim);
    const AmortizedMechanism mech = unpack(theta, dim, level);
    const double inv_t = 1.0 / static_cast<double>(tasks.size());
    double total = 0.0;
    Matrix g_gain = Matrix::Zero(d, d);
    Vector g_bias = Vector::Zero(d);
    Matrix g_cov = Matrix::Zero(d, d);
    Matrix noise_prec;
    if (grad != nullptr) {
      const Matrix l_inv = mech.cov_factor.triangularView<Eigen::Lower>().solve(
          Matrix::Identity(d, d));
      noise_prec = l_inv.transpose() * l_inv;
    }
    for (const auto& t : tasks) {
      const LinearGaussianKernel k = kernel_from(mech, t.req, t.stat);
      total += task_eubo(k, t);
      if (grad == nullptr) continue;
      const Vector mu_d = t.learned.mean();
      const Vector r = t.req.score - t.req.info * mu_d;
      const Vector nu = k.transform * mu_d + k.offset;
      const Matrix curv = t.learned_precision - t.req.info;
      const Vector g_nu = curv * nu - (t.learned_precision * mu_d - t.req.score);
      g_gain += g_nu * r.transpose();
      if (level == StatisticLevel::summary) {
        g_gain -= curv * k.transform * t.learned.covariance() * t.req.info;
      }
      g_bias += g_nu;
      g_cov += 0.5 * (curv - noise_prec);
    }
    if (grad != nullptr) {
      grad->resize(theta.size());
      grad->head(d * d) = (inv_t * g_gain).reshaped();
      grad->segment(d * d, d) = inv_t * g_bias;
      const Matrix g_lower = 2.0 * inv_t * g_cov * mech.cov_factor;
      grad->tail(theta.size() - d * d - d) =
          pack_factor_gradient(theta.tail(theta.size() - d * d - d), g_lower, dim);
    }
    return inv_t * total;
  };
}

}  // namespace

GaussianDist apply_amortized(const AmortizedMechanism& mech, const Vector& w_l,
                             const Statistic& stat, const Dataset& erased,
                             const ConjugateModel& model) {
  return amortized_kernel(mech, stat, erased, model).apply(w_l);
}

LinearGaussianKernel amortized_kernel(const AmortizedMechanism& mech, const Statistic& stat,
                                      const Dataset& erased, const ConjugateModel& model) {
  check_level(mech, stat, model);
  return kernel_from(mech, request_info(erased, model), stat);
}

std::vector<UnlearningTask> sample_tasks(const ConjugateModel& model, const PopulationSpec& spec,
                                         std::size_t n, std::size_t m, StatisticLevel level,
                                         std::size_t count, std::uint64_t seed) {
  std::vector<UnlearningTask> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Trial trial = draw_trial(model, spec, n, m, mix_seed(seed + i));
    Statistic stat = make_statistic(model, trial.data, level);
    tasks.push_back({std::move(trial.erased), std::move(trial.learned),
                     std::move(trial.retrained), std::move(stat)});
  }
  return tasks;
}

double average_eubo(const AmortizedMechanism& mech, const std::vector<UnlearningTask>& tasks,
                    const ConjugateModel& model) {
  if (tasks.empty()) throw ConfigError("average_eubo: no tasks");
  double total = 0.0;
  for (const auto& t : tasks) {
    const LinearGaussianKernel k = amortized_kernel(mech, t.stat, t.erased, model);
    total += expected_log_lik(k.marginal(t.learned), t.erased, model) +
             k.expected_kl(t.learned, t.learned);
  }
  return total / static_cast<double>(tasks.size());
}

std::vector<double> kl_to_retrained(const AmortizedMechanism& mech,
                                    const std::vector<UnlearningTask>& tasks,
                                    const ConjugateModel& model) {
  std::vector<double> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) {
    out.push_back(
        amortized_kernel(mech, t.stat, t.erased, model).expected_kl(t.learned, t.retrained));
  }
  return out;
}

Estimate average_kl_to_retrained(const AmortizedMechanism& mech,
                                 const std::vector<UnlearningTask>& tasks,
                                 const ConjugateModel& model) {
  const std::vector<double> v = kl_to_retrained(mech, tasks, model);
  if (v.empty()) throw ConfigError("average_kl_to_retrained: no tasks");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {mean, sd / std::sqrt(n)};
}

AmortizedTraining train_amortized(const AmortizedMechanism& init, const ConjugateModel& model,
                                  const PopulationSpec& spec, std::size_t n, std::size_t m,
                                  const AmortizedTrainingOptions& training,
                                  const OptimOptions& opts) {
  opts.validate();
  if (training.n_tasks == 0) throw ConfigError("train_amortized: n_tasks must be at least 1");
  if (training.check_every == 0) throw ConfigError("train_amortized: check_every must be positive");
  init.validate();
  if (init.dim() != model.parameter_dim()) {
    throw ShapeError("train_amortized: mechanism dimension does not match the model");
  }
  const StatisticLevel level = init.statistic_level;
  const std::size_t n_heldout =
      training.n_heldout > 0 ? training.n_heldout : std::max<std::size_t>(8, training.n_tasks / 4);

  const auto train =
      sample_tasks(model, spec, n, m, level, training.n_tasks, derive_seed(opts.seed, "avu-train"));
  const auto heldout =
      sample_tasks(model, spec, n, m, level, n_heldout, derive_seed(opts.seed, "avu-heldout"));
  const Objective f = training_objective(prepare(train, model), init.dim(), level);
  const Objective f_heldout = training_objective(prepare(heldout, model), init.dim(), level);

  AmortizedTraining out;
  out.mechanism = init;
  out.overfit_warning = training.n_tasks == 1;
  Vector theta = pack(init);
  double best = f_heldout(theta, nullptr);
  out.heldout_trace.push_back(best);
  std::size_t since_best = 0;

  OptimOptions chunk = opts;
  while (out.steps < opts.max_steps) {
    chunk.max_steps = std::min(training.check_every, opts.max_steps - out.steps);
    DescentResult res;
    try {
      res = gradient_descent(theta, f, chunk);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (amortized training after " +
                            std::to_string(out.steps) + " steps)");
    }
    const bool first = out.train_trace.empty();
    out.train_trace.insert(out.train_trace.end(), res.trace.begin() + (first ? 0 : 1),
                           res.trace.end());
    out.steps += res.steps;
    theta = res.x;
    const double h = f_heldout(theta, nullptr);
    out.heldout_trace.push_back(h);
    if (h < best) {
      best = h;
      out.mechanism = unpack(theta, init.dim(), level);
      since_best = 0;
    } else {
      ++since_best;
    }
    if (res.converged || res.steps == 0) {
      out.converged = res.converged;
      break;
    }
    if (since_best >= training.patience) break;
  }
  return out;
}

}  // namespace uf
