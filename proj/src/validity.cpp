#include "unlearn_forge/validity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <boost/math/distributions/binomial.hpp>

#include "unlearn_forge/error.hpp"

namespace uf {

void parallel_for(std::size_t count, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::pair<double, double> binomial_interval(std::size_t trials, std::size_t successes,
                                            double confidence) {
  using boost::math::binomial_distribution;
  if (trials == 0) throw ConfigError("binomial_interval: no trials");
  const double alpha = (1.0 - confidence) / 2.0;
  const auto n = static_cast<double>(trials);
  const auto k = static_cast<double>(successes);
  const double lo = successes == 0 ? 0.0 : binomial_distribution<>::find_lower_bound_on_p(n, k, alpha);
  const double hi =
      successes == trials ? 1.0 : binomial_distribution<>::find_upper_bound_on_p(n, k, alpha);
  return {lo, hi};
}

BoundReport run_bound_trial(const ValidityConfig& cfg, const XiEstimate& xi,
                            std::uint64_t trial_seed) {
  const Trial trial = draw_trial(cfg.model, cfg.spec, cfg.n, cfg.m, trial_seed);
  switch (cfg.inst.kind) {
    case BoundKind::generic:
      return generic_bound_report(cfg.inst, trial, cfg.model, cfg.spec, xi);
    case BoundKind::avu: {
      const UnlearnOutcome out =
          unlearn(cfg.unlearn, trial, cfg.model, derive_seed(trial_seed, "unlearn"));
      return avu_bound_report(cfg.inst, out.kernel, trial, cfg.model, cfg.spec, xi);
    }
    case BoundKind::fl: {
      if (cfg.unlearn.method == Method::scrub &&
          std::abs(cfg.unlearn.lambda - 1.0 / cfg.inst.scale) >
              1e-12 * std::max(1.0, 1.0 / cfg.inst.scale)) {
        throw ConsistencyError("fl bound: scrub lambda must equal 1/beta");
      }
      const UnlearnOutcome out =
          unlearn(cfg.unlearn, trial, cfg.model, derive_seed(trial_seed, "unlearn"));
      return fl_bound_report(cfg.inst, out.kernel, trial, cfg.model, cfg.spec,
                             cfg.unlearn.reference, xi);
    }
  }
  throw ConfigError("unsupported bound kind");
}

ValidityReport run_validity_experiment(const ValidityConfig& cfg) {
  cfg.inst.validate();
  if (cfg.n_trials < 100) throw ConfigError("validity experiment: n_trials must be at least 100");
  ValidityReport rep;
  rep.n_trials = cfg.n_trials;
  rep.delta = cfg.inst.delta;
  XiSettings xs = cfg.xi;
  xs.seed = derive_seed(cfg.seed, "xi");
  if (cfg.inst.kind == BoundKind::fl && !xs.reference) xs.reference = cfg.unlearn.reference;
  rep.xi = estimate_xi(cfg.inst, cfg.model, cfg.spec, cfg.n, cfg.m, xs);

  rep.trials.resize(cfg.n_trials);
  parallel_for(cfg.n_trials, cfg.jobs, [&](std::size_t i) {
    const std::uint64_t s = cfg.seed + i;
    try {
      rep.trials[i] = {i, s, run_bound_trial(cfg, rep.xi, s)};
    } catch (const std::exception& e) {
      throw Error("validity trial " + std::to_string(i) + " (replay seed " + std::to_string(s) +
                  ") failed: " + e.what());
    }
  });

  for (const auto& t : rep.trials) {
    if (!t.report.holds) ++rep.n_violations;
  }
  const double n = static_cast<double>(cfg.n_trials);
  const double d = cfg.inst.delta;
  rep.violation_rate = static_cast<double>(rep.n_violations) / n;
  std::tie(rep.ci_low, rep.ci_high) = binomial_interval(cfg.n_trials, rep.n_violations);
  rep.tolerance = d + 3.0 * std::sqrt(d * (1.0 - d) / n);
  rep.passed = rep.violation_rate <= rep.tolerance;
  rep.low_resolution = n * d < 5.0;
  return rep;
}

}  // namespace uf
