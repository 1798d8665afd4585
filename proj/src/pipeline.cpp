#include "unlearn_forge/pipeline.hpp"

#include "unlearn_forge/error.hpp"

namespace uf {

std::string to_string(Method method) {
  switch (method) {
    case Method::retrain: return "retrain";
    case Method::eubo: return "eubo";
    case Method::avu: return "avu";
    case Method::scrub: return "scrub";
    case Method::noop: return "noop";
  }
  return "retrain";
}

Method parse_method(const std::string& name) {
  if (name == "retrain") return Method::retrain;
  if (name == "eubo") return Method::eubo;
  if (name == "avu") return Method::avu;
  if (name == "scrub") return Method::scrub;
  if (name == "noop") return Method::noop;
  throw ConfigError("unknown unlearning method '" + name + "'");
}

ForgettingContext forgetting_context(const Trial& trial, const ConjugateModel& model,
                                     const UnlearnSettings& settings, std::uint64_t seed) {
  ForgettingContext ctx{model,
                        trial.learned,
                        trial.retrained,
                        trial.erased,
                        trial.remaining,
                        settings.reference,
                        Loss::squared_error(model.task)};
  ctx.components = settings.components;
  ctx.n_mc = settings.fl_n_mc;
  ctx.seed = seed;
  ctx.mode = settings.marginal_mode;
  return ctx;
}

UnlearnOutcome unlearn(const UnlearnSettings& settings, const Trial& trial,
                       const ConjugateModel& model, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(model.parameter_dim());
  switch (settings.method) {
    case Method::retrain:
      return {LinearGaussianKernel::constant(trial.retrained), std::nullopt, std::nullopt};
    case Method::noop:
      return {{Matrix::Identity(d, d), Vector::Zero(d),
               settings.noop_scale * Matrix::Identity(d, d)},
              std::nullopt,
              std::nullopt};
    case Method::eubo: {
      OptimOptions opts = settings.opts;
      opts.seed = seed;
      VariationalState st = minimize_eubo(trial.learned, trial.learned, trial.erased, model, opts);
      LinearGaussianKernel k = LinearGaussianKernel::constant(st.q);
      return {std::move(k), std::move(st), std::nullopt};
    }
    case Method::avu: {
      if (!settings.amortized) throw ConfigError("method avu requires a trained mechanism");
      const Statistic stat = make_statistic(model, trial.data, settings.amortized->statistic_level);
      return {amortized_kernel(*settings.amortized, stat, trial.erased, model), std::nullopt,
              std::nullopt};
    }
    case Method::scrub: {
      const ForgettingContext ctx = forgetting_context(trial, model, settings, seed);
      OptimOptions opts = settings.opts;
      opts.seed = seed;
      ScrubFit fit = minimize_forgetting_lagrangian(identity_scrub(settings.reference), ctx,
                                                    settings.lambda, opts);
      LinearGaussianKernel k = scrub_kernel(fit.mechanism, trial.erased, model);
      return {std::move(k), std::nullopt, std::move(fit)};
    }
  }
  throw ConfigError("unsupported unlearning method");
}

GaussianMixture certificate_mixture(const LinearGaussianKernel& kernel,
                                    const GaussianDist& learned, CertMode mode,
                                    std::size_t components, std::uint64_t seed) {
  if (mode == CertMode::marginal) return GaussianMixture::single(kernel.marginal(learned));
  return kernel.mixture_from_samples(learned, components, seed);
}

}  // namespace uf
