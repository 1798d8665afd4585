// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "support/test_support.hpp"
#include "unlearn_forge/amortized.hpp"
#include "unlearn_forge/certify.hpp"
#include "unlearn_forge/eubo.hpp"
#include "unlearn_forge/experiment.hpp"
#include "unlearn_forge/pacbayes.hpp"
#include "unlearn_forge/pipeline.hpp"
#include "unlearn_forge/scrub.hpp"

namespace uf {
namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("UNLEARN_FORGE_JOBS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---- shared instances ----

struct Instance {
  ConjugateModel model;
  Trial trial;
};

/// 200 random conjugate instances with d <= 5, n <= 50, m <= 5.
const std::vector<Instance>& oracle_instances() {
  static const std::vector<Instance> instances = [] {
    std::vector<Instance> out;
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 5), size(6, 50), erased(1, 5);
    for (int i = 0; i < 200; ++i) {
      const Task task = i % 2 == 0 ? Task::gaussian_mean : Task::linear_regression;
      ConjugateModel model = testing::random_model(task, dim(rng), rng);
      const PopulationSpec spec = testing::population_for(model, rng);
      const std::size_t n = size(rng);
      Trial trial = draw_trial(model, spec, n, erased(rng), 5000 + static_cast<std::uint64_t>(i));
      out.push_back({std::move(model), std::move(trial)});
    }
    return out;
  }();
  return instances;
}

double relative_gap(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

// ---- criteria ----

Outcome downdate_equals_retraining() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (const Instance& in : oracle_instances()) {
    const NaturalParams down = downdate_natural(in.trial.learned_natural, in.model, in.trial.erased);
    const NaturalParams direct = exact_posterior_natural(in.model, in.trial.remaining);
    worst = std::max({worst, relative_gap(down.precision, direct.precision),
                      relative_gap(down.shift, direct.shift)});
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {worst <= 1e-10 && secs < 5.0,
          fmt("200 instances, max natural-parameter gap %.2e (tol 1e-10), %.2fs (limit 5s)",
              worst, secs)};
}

Outcome eubo_shift_constancy() {
  const auto start = Clock::now();
  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(i)];
    const std::size_t d = in.model.parameter_dim();
    testing::RunningStats diff;
    for (int t = 0; t < 100; ++t) {
      const GaussianDist q = testing::random_gaussian(d, rng);
      diff.add(eubo(q, in.trial.learned, in.trial.erased, in.model) -
               kl_gaussian(q, in.trial.retrained));
    }
    worst = std::max(worst, diff.stddev());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {worst < 1e-6 && secs < 5.0,
          fmt("20 instances x 100 q, max stdev %.2e (tol 1e-6), %.2fs (limit 5s)", worst, secs)};
}

Outcome eubo_minimization_recovers_retraining() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (const Instance& in : oracle_instances()) {
    const VariationalState st =
        minimize_eubo(in.trial.learned, in.trial.learned, in.trial.erased, in.model, {});
    worst = std::max(worst, kl_gaussian(st.q, in.trial.retrained));
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {worst < 1e-6 && secs < 60.0,
          fmt("200 instances, max KL(q*||retrained) %.2e (tol 1e-6), %.2fs (limit 60s)", worst,
              secs)};
}

Outcome gradients_match_finite_differences() {
  Rng rng(11);
  double worst_eubo = 0.0;
  double worst_free_energy = 0.0;
  auto rel = [](const Vector& g, const Vector& fd) {
    return (g - fd).norm() / std::max(fd.norm(), 1e-8);
  };
  for (int t = 0; t < 100; ++t) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(t)];
    const std::size_t d = in.model.parameter_dim();
    const Vector theta = pack_gaussian(testing::random_gaussian(d, rng));
    Vector g;

    const Objective eubo_f =
        gaussian_objective(eubo_objective(in.trial.learned, in.trial.erased, in.model), d);
    eubo_f(theta, &g);
    worst_eubo = std::max(worst_eubo, rel(g, finite_difference_gradient(eubo_f, theta, 1e-5)));

    const Loss loss = t % 2 == 0 ? in.model.log_loss() : Loss::squared_error(in.model.task);
    const double beta = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    const Objective fe_f = gaussian_objective(
        free_energy_objective(in.model.prior, in.trial.data, loss, beta), d);
    fe_f(theta, &g);
    worst_free_energy =
        std::max(worst_free_energy, rel(g, finite_difference_gradient(fe_f, theta, 1e-5)));
  }
  return {worst_eubo < 1e-5 && worst_free_energy < 1e-5,
          fmt("100 points, max relative error EUBO %.2e, free energy %.2e (tol 1e-5)", worst_eubo,
              worst_free_energy)};
}

Outcome certificate_soundness() {
  int retrain_fail = 0;
  int noop_fail = 0;
  double worst_retrain = 0.0;
  double worst_noop_sigmas = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(i)];
    UnlearnSettings s;
    s.method = Method::retrain;
    const std::uint64_t seed = 900 + static_cast<std::uint64_t>(i);
    const UnlearnOutcome retrain = unlearn(s, in.trial, in.model, seed);
    const CertResult rc = certify_epsilon(
        certificate_mixture(retrain.kernel, in.trial.learned, CertMode::marginal, 64, seed),
        in.trial.retrained, CertMode::marginal, 20000, seed, std::nullopt);
    worst_retrain = std::max(worst_retrain, std::abs(rc.epsilon_estimate));
    if (std::abs(rc.epsilon_estimate) > std::max(3 * rc.std_error, 1e-12)) ++retrain_fail;

    s.method = Method::noop;
    const UnlearnOutcome noop = unlearn(s, in.trial, in.model, seed);
    const CertResult nc = certify_epsilon(
        certificate_mixture(noop.kernel, in.trial.learned, CertMode::marginal, 64, seed),
        in.trial.retrained, CertMode::marginal, 20000, seed, std::nullopt);
    const double closed = kl_gaussian(in.trial.learned, in.trial.retrained);
    const double sigmas = std::abs(nc.epsilon_estimate - closed) / nc.std_error;
    worst_noop_sigmas = std::max(worst_noop_sigmas, sigmas);
    if (sigmas > 3.0) ++noop_fail;
  }
  return {retrain_fail == 0 && noop_fail == 0,
          fmt("50 instances, retrain max |eps| %.2e (%g outside 3 se), noop max deviation %.2f se "
              "(%g outside 3 se)",
              worst_retrain, retrain_fail, worst_noop_sigmas, noop_fail)};
}

Outcome conditional_average_dominates_marginal() {
  Rng rng(13);
  int failures = 0;
  double worst_margin = 1e300;
  for (int t = 0; t < 50; ++t) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(t)];
    const std::size_t d = in.model.parameter_dim();
    const LinearGaussianKernel k{testing::random_factor(d, rng, 0.5),
                                 testing::random_vector(d, rng),
                                 testing::random_factor(d, rng, 0.5)};
    const std::uint64_t seed = 300 + static_cast<std::uint64_t>(t);
    const GaussianMixture mix = k.mixture_from_samples(in.trial.learned, 64, seed);
    const CertResult avg =
        certify_epsilon(mix, in.trial.retrained, CertMode::conditional_avg, 1000, seed, {});
    const CertResult marg =
        certify_epsilon(mix, in.trial.retrained, CertMode::marginal, 5000, seed, {});
    const double margin = avg.epsilon_estimate - marg.epsilon_estimate +
                          3 * std::hypot(avg.std_error, marg.std_error);
    worst_margin = std::min(worst_margin, margin);
    if (margin < 0.0) ++failures;
  }
  return {failures == 0,
          fmt("50 mechanisms, min (avg - marginal + 3 se) %.3g, %g violations", worst_margin,
              failures)};
}

Json validity_config(const std::string& method, const std::string& bound, double beta) {
  Json j = Json::parse(R"({
    "schema_version": 1, "seed": 20240501,
    "model": {"task": "gaussian-mean", "prior": {"mean": [0], "cov_factor_rows": [[1]]},
              "noise_variance": 0.25},
    "population": {"kind": "gaussian-mean", "true_params": [0.3], "noise_variance": 0.25},
    "n": 8, "m": 1,
    "certificate": {"mode": "marginal"},
    "validity": {"n_trials": 2000}
  })");
  j["method"] = method;
  j["bound"] = {{"kind", bound}, {"delta", 0.1}, {"beta", beta}};
  return j;
}

Outcome validity_line(const ValidityReport& r, double secs, std::size_t jobs) {
  const double limit = jobs >= 8 ? 120.0 : 600.0;
  return {r.violation_rate <= 0.12 && secs < limit,
          fmt("%g/%g violations, rate %.4f (limit 0.12), ", static_cast<double>(r.n_violations),
              static_cast<double>(r.n_trials), r.violation_rate) +
              fmt("%.1fs with %g workers (limit %gs)", secs, static_cast<double>(jobs), limit)};
}

Outcome avu_bound_validity() {
  const std::size_t jobs = worker_count();
  const auto start = Clock::now();
  const ValidityReport r = run_validity(parse_config(validity_config("avu", "avu", 1.0)), jobs);
  return validity_line(r, std::chrono::duration<double>(Clock::now() - start).count(), jobs);
}

Outcome fl_bound_validity() {
  const std::size_t jobs = worker_count();
  Outcome all{true, ""};
  for (double beta : {1.0, 4.0}) {
    const auto start = Clock::now();
    const ValidityReport r =
        run_validity(parse_config(validity_config("scrub", "fl", beta)), jobs);
    const Outcome o =
        validity_line(r, std::chrono::duration<double>(Clock::now() - start).count(), jobs);
    all.passed = all.passed && o.passed;
    all.detail += fmt("beta=%g: ", beta) + o.detail + (beta == 1.0 ? "; " : "");
  }
  return all;
}

/// Tempered conjugate posterior prior * exp(-beta * mean training loss),
/// assembled from the per-point quadratic directly.
GaussianDist tempered_posterior(const ConjugateModel& model, const Dataset& data,
                                const Loss& loss, double beta) {
  const std::size_t d = model.parameter_dim();
  const double per_point = (loss.kind == LossKind::squared_error ? 1.0 : 0.5 / loss.noise_variance) *
                           2.0 * beta / static_cast<double>(data.size());
  const Matrix prior_precision = model.prior.precision();
  Matrix precision = prior_precision;
  Vector shift = prior_precision * model.prior.mean();
  for (const Vector& z : data.points()) {
    if (model.task == Task::gaussian_mean) {
      precision += per_point * Matrix::Identity(static_cast<Eigen::Index>(d),
                                                static_cast<Eigen::Index>(d));
      shift += per_point * z;
    } else {
      const Vector x = z.head(static_cast<Eigen::Index>(d));
      precision += per_point * x * x.transpose();
      shift += per_point * z(static_cast<Eigen::Index>(d)) * x;
    }
  }
  const Matrix cov = precision.inverse();
  return GaussianDist::from_covariance(cov * shift, cov);
}

Outcome free_energy_minimizer_is_tempered_posterior() {
  Rng rng(17);
  double worst_descent = 0.0;
  double worst_closed = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(i)];
    const Loss loss = i % 2 == 0 ? in.model.log_loss() : Loss::squared_error(in.model.task);
    const double beta = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    const GaussianDist oracle = tempered_posterior(in.model, in.trial.data, loss, beta);
    const VariationalState st = minimize_gaussian(
        in.model.prior, free_energy_objective(in.model.prior, in.trial.data, loss, beta), {});
    worst_descent = std::max(worst_descent, kl_gaussian(st.q, oracle));
    worst_closed = std::max(
        worst_closed, kl_gaussian(gibbs_posterior(in.model.prior, in.trial.data, loss, beta), oracle));
  }
  return {worst_descent < 1e-6 && worst_closed < 1e-6,
          fmt("20 instances, max KL to tempered posterior: minimized %.2e, closed form %.2e "
              "(tol 1e-6)",
              worst_descent, worst_closed)};
}

Outcome avu_beats_noop() {
  const auto start = Clock::now();
  ConjugateModel model;
  model.prior = GaussianDist(Vector::Zero(2), Matrix::Identity(2, 2));
  PopulationSpec spec;
  spec.true_params = testing::vec({0.5, -0.3});
  const AmortizedMechanism init{Matrix::Zero(2, 2), Vector::Zero(2), model.prior.cov_factor(),
                                StatisticLevel::summary};
  const AmortizedTraining tr = train_amortized(init, model, spec, 16, 2, {}, {});
  const auto heldout = sample_tasks(model, spec, 16, 2, StatisticLevel::summary, 100, 77);
  const Estimate trained = average_kl_to_retrained(tr.mechanism, heldout, model);
  const Estimate noop =
      average_kl_to_retrained(noop_mechanism(2, StatisticLevel::summary), heldout, model);
  const double margin = noop.value - trained.value - 3 * std::hypot(noop.std_error, trained.std_error);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {margin > 0.0 && secs < 300.0,
          fmt("100 held-out tasks, KL trained %.4f +- %.4f vs noop %.4f +- %.4f", trained.value,
              trained.std_error, noop.value, noop.std_error) +
              fmt(", %.1fs (limit 300s)", secs)};
}

Outcome lambda_sweep_is_monotone() {
  Rng rng(19);
  int breaks = 0;
  const std::vector<double> lambdas{1e-2, 1e-1, 1.0, 10.0, 1e2};
  for (int i = 0; i < 5; ++i) {
    const Instance& in = oracle_instances()[static_cast<std::size_t>(i)];
    UnlearnSettings s;
    s.reference = isotropic_reference(in.model.parameter_dim(), 0.3);
    ForgettingContext ctx = forgetting_context(in.trial, in.model, s, 1);
    ctx.mode = MarginalMode::moment_match;
    std::vector<ForgettingTerms> terms;
    for (double lambda : lambdas) {
      terms.push_back(
          minimize_forgetting_lagrangian(identity_scrub(ctx.reference), ctx, lambda, {}).terms);
    }
    for (std::size_t k = 1; k < terms.size(); ++k) {
      if (terms[k].kl_term > terms[k - 1].kl_term) ++breaks;
      if (terms[k].loss_term < terms[k - 1].loss_term) ++breaks;
    }
  }
  return {breaks == 0, fmt("5 instances x 5 lambdas in moment-match mode, %g monotonicity breaks",
                           static_cast<double>(breaks))};
}

}  // namespace
}  // namespace uf

int main() {
  using namespace uf;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"downdate equals retraining", downdate_equals_retraining},
      {"EUBO differs from KL to retrained by a constant", eubo_shift_constancy},
      {"EUBO minimization recovers retraining", eubo_minimization_recovers_retraining},
      {"analytic gradients match finite differences", gradients_match_finite_differences},
      {"certificate soundness for retrain and noop", certificate_soundness},
      {"conditional average KL dominates marginal KL", conditional_average_dominates_marginal},
      {"AVU bound validity", avu_bound_validity},
      {"forgetting-Lagrangian bound validity", fl_bound_validity},
      {"free-energy minimizer is the tempered posterior",
       free_energy_minimizer_is_tempered_posterior},
      {"trained AVU beats noop on held-out tasks", avu_beats_noop},
      {"lambda sweep is monotone", lambda_sweep_is_monotone},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.passed) ++failed;
    std::printf("%s %2zu %s: %s\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed),
              criteria.size());
  return failed == 0 ? 0 : 1;
}
