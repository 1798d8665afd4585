#include "unlearn_forge/scrub.hpp"

#include <cmath>
#include <limits>

#include "unlearn_forge/error.hpp"

namespace uf {

void ScrubMechanism::validate() const {
  if (shift_gain.rows() != cov_factor.rows() || shift_gain.cols() != cov_factor.rows()) {
    throw ShapeError("scrub mechanism: shift gain and covariance factor disagree in size");
  }
  GaussianDist(Vector::Zero(cov_factor.rows()), cov_factor);
}

ScrubReference isotropic_reference(std::size_t d, double noise_std) {
  if (!(noise_std > 0.0)) throw ConfigError("scrub reference: noise must be positive");
  const auto n = static_cast<Eigen::Index>(d);
  return {noise_std * Matrix::Identity(n, n)};
}

ScrubMechanism identity_scrub(const ScrubReference& reference) {
  const auto d = reference.noise_cov_factor.rows();
  return {Matrix::Zero(d, d), reference.noise_cov_factor};
}

std::string to_string(MarginalMode mode) {
  return mode == MarginalMode::mc ? "mc" : "moment-match";
}

MarginalMode parse_marginal_mode(const std::string& name) {
  if (name == "mc") return MarginalMode::mc;
  if (name == "moment-match") return MarginalMode::moment_match;
  throw ConfigError("unknown marginal mode '" + name + "'");
}

LinearGaussianKernel scrub_kernel(const ScrubMechanism& scrub, const Dataset& erased,
                                  const ConjugateModel& model) {
  scrub.validate();
  if (scrub.dim() != model.parameter_dim()) {
    throw ShapeError("scrub mechanism dimension does not match the model");
  }
  const DataInformation info = data_information(model, erased);
  const auto d = static_cast<Eigen::Index>(scrub.dim());
  return {Matrix::Identity(d, d) - scrub.shift_gain * info.info, scrub.shift_gain * info.score,
          scrub.cov_factor};
}

void ForgettingContext::validate() const {
  model.validate();
  if (components == 0) throw ConfigError("forgetting Lagrangian: components must be positive");
  if (mode == MarginalMode::mc && n_mc < 100) {
    throw ConfigError("forgetting Lagrangian: n_mc must be at least 100 in mc mode");
  }
  if (learned.dim() != model.parameter_dim() || retrained.dim() != model.parameter_dim() ||
      reference.noise_cov_factor.rows() != static_cast<Eigen::Index>(model.parameter_dim())) {
    throw ShapeError("forgetting Lagrangian: dimensions do not match the model");
  }
  if (loss.task != model.task) throw ShapeError("forgetting Lagrangian: loss task mismatch");
}

namespace {

std::vector<Vector> innovations(const ForgettingContext& ctx) {
  const auto d = static_cast<Eigen::Index>(ctx.model.parameter_dim());
  return sample(GaussianDist(Vector::Zero(d), Matrix::Identity(d, d)), ctx.components,
                derive_seed(ctx.seed, "scrub-components"));
}

std::vector<Vector> draws(const GaussianDist& dist, const std::vector<Vector>& eps) {
  std::vector<Vector> out;
  out.reserve(eps.size());
  for (const auto& e : eps) out.push_back(dist.mean() + dist.cov_factor() * e);
  return out;
}

// Empirical mean and (1/K-normalized) covariance of the draws.
void moments(const std::vector<Vector>& w, Vector& mean, Matrix& cov) {
  const double k = static_cast<double>(w.size());
  mean = Vector::Zero(w.front().size());
  for (const auto& x : w) mean += x;
  mean /= k;
  cov = Matrix::Zero(mean.size(), mean.size());
  for (const auto& x : w) cov += (x - mean) * (x - mean).transpose();
  cov /= k;
}

GaussianMixture mixture_at(const LinearGaussianKernel& k, const std::vector<Vector>& w) {
  std::vector<GaussianDist> comps;
  comps.reserve(w.size());
  for (const auto& x : w) comps.push_back(k.apply(x));
  return GaussianMixture(std::move(comps));
}

// Quantities shared by every evaluation within one optimization.
struct Prepared {
  DataInformation erased_info;
  QuadraticForm loss;
  std::vector<Vector> learned_draws;
  Vector learned_mean;
  Matrix learned_cov;
  GaussianMixture reference;
  GaussianDist reference_mm;
};

Prepared prepare(const ForgettingContext& ctx) {
  ctx.validate();
  const auto eps = innovations(ctx);
  std::vector<Vector> wl = draws(ctx.learned, eps);
  std::vector<Vector> wr = draws(ctx.retrained, eps);
  Vector mean;
  Matrix cov;
  moments(wl, mean, cov);
  const LinearGaussianKernel ref_kernel{
      Matrix::Identity(mean.size(), mean.size()), Vector::Zero(mean.size()),
      ctx.reference.noise_cov_factor};
  GaussianMixture ref = mixture_at(ref_kernel, wr);
  GaussianDist ref_mm = moment_match(ref);
  return {data_information(ctx.model, ctx.erased), training_loss_form(ctx.remaining, ctx.loss),
          std::move(wl), std::move(mean), std::move(cov), std::move(ref), std::move(ref_mm)};
}

LinearGaussianKernel kernel_of(const ScrubMechanism& s, const DataInformation& info) {
  const auto d = s.cov_factor.rows();
  return {Matrix::Identity(d, d) - s.shift_gain * info.info, s.shift_gain * info.score,
          s.cov_factor};
}

// Moment-matched scrubbed marginal N(A w̄ + c, L Lᵀ + A C Aᵀ).
GaussianDist scrubbed_moments(const LinearGaussianKernel& k, const Prepared& p) {
  const Matrix cov = k.noise_factor * k.noise_factor.transpose() +
                     k.transform * p.learned_cov * k.transform.transpose();
  return GaussianDist::from_covariance(k.transform * p.learned_mean + k.offset, cov);
}

ForgettingTerms evaluate(const ScrubMechanism& s, const ForgettingContext& ctx,
                         const Prepared& p) {
  const LinearGaussianKernel k = kernel_of(s, p.erased_info);
  const GaussianDist mm = scrubbed_moments(k, p);
  ForgettingTerms t;
  // The loss is quadratic, so its mixture expectation depends on two moments only.
  t.loss_term = p.loss.expectation(mm);
  if (ctx.mode == MarginalMode::moment_match) {
    t.kl_term = kl_gaussian(mm, p.reference_mm);
  } else {
    const MonteCarloEstimate kl = kl_mixture_mc(mixture_at(k, p.learned_draws), p.reference,
                                                ctx.n_mc, derive_seed(ctx.seed, "scrub-kl"));
    t.kl_term = kl.infinite ? std::numeric_limits<double>::infinity() : kl.estimate;
    t.kl_std_error = kl.std_error;
  }
  return t;
}

Vector pack(const ScrubMechanism& s) {
  const auto d = s.cov_factor.rows();
  const Vector raw = pack_factor(s.cov_factor);
  Vector theta(d * d + raw.size());
  theta.head(d * d) = s.shift_gain.reshaped();
  theta.tail(raw.size()) = raw;
  return theta;
}

ScrubMechanism unpack(const Vector& theta, std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {theta.head(d * d).reshaped(d, d), unpack_factor(theta.tail(theta.size() - d * d), dim)};
}

}  // namespace

GaussianMixture scrubbed_mixture(const ScrubMechanism& scrub, const ForgettingContext& ctx) {
  ctx.validate();
  return mixture_at(scrub_kernel(scrub, ctx.erased, ctx.model),
                    draws(ctx.learned, innovations(ctx)));
}

GaussianMixture reference_mixture(const ForgettingContext& ctx) {
  return prepare(ctx).reference;
}

GaussianDist reference_marginal_exact(const GaussianDist& retrained,
                                      const ScrubReference& reference) {
  const Matrix& l0 = reference.noise_cov_factor;
  return GaussianDist::from_covariance(retrained.mean(),
                                       retrained.covariance() + l0 * l0.transpose());
}

ForgettingTerms forgetting_terms(const ScrubMechanism& scrub, const ForgettingContext& ctx) {
  scrub.validate();
  const Prepared p = prepare(ctx);
  return evaluate(scrub, ctx, p);
}

double forgetting_lagrangian(const ScrubMechanism& scrub, const ForgettingContext& ctx,
                             double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("forgetting Lagrangian: lambda must be positive");
  return forgetting_terms(scrub, ctx).value(lambda);
}

ScrubFit minimize_forgetting_lagrangian(const ScrubMechanism& init, const ForgettingContext& ctx,
                                        double lambda, const OptimOptions& opts) {
  if (!(lambda > 0.0)) throw ConfigError("forgetting Lagrangian: lambda must be positive");
  init.validate();
  const Prepared p = prepare(ctx);
  const std::size_t dim = init.dim();
  const auto d = static_cast<Eigen::Index>(dim);

  Objective value_only = [&](const Vector& theta, Vector*) -> double {
    if (!theta.allFinite()) return std::numeric_limits<double>::quiet_NaN();
    try {
      return evaluate(unpack(theta, dim), ctx, p).value(lambda);
    } catch (const FactorizationError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  Objective f;
  if (ctx.mode == MarginalMode::mc) {
    f = [&](const Vector& theta, Vector* grad) -> double {
      const double v = value_only(theta, nullptr);
      if (grad != nullptr) *grad = finite_difference_gradient(value_only, theta, 1e-6);
      return v;
    };
  } else {
    const Vector g_bar = p.erased_info.score - p.erased_info.info * p.learned_mean;
    const Matrix ref_prec = p.reference_mm.precision();
    f = [&, g_bar, ref_prec](const Vector& theta, Vector* grad) -> double {
      const double v = value_only(theta, nullptr);
      if (grad == nullptr || !std::isfinite(v)) return v;
      const ScrubMechanism s = unpack(theta, dim);
      const LinearGaussianKernel k = kernel_of(s, p.erased_info);
      const GaussianDist mm = scrubbed_moments(k, p);
      const Vector g_mu = p.loss.gradient(mm.mean()) +
                         lambda * ref_prec * (mm.mean() - p.reference_mm.mean());
      const Matrix g_sigma = p.loss.quad + 0.5 * lambda * (ref_prec - mm.precision());
      const Matrix g_gain = g_mu * g_bar.transpose() -
                            2.0 * g_sigma * k.transform * p.learned_cov * p.erased_info.info;
      const Matrix g_lower = 2.0 * g_sigma * s.cov_factor;
      grad->resize(theta.size());
      grad->head(d * d) = g_gain.reshaped();
      grad->tail(theta.size() - d * d) =
          pack_factor_gradient(theta.tail(theta.size() - d * d), g_lower, dim);
      return v;
    };
  }

  DescentResult res = gradient_descent(pack(init), f, opts);
  ScrubFit fit;
  fit.mechanism = unpack(res.x, dim);
  fit.terms = evaluate(fit.mechanism, ctx, p);
  fit.objective_trace = std::move(res.trace);
  fit.steps = res.steps;
  fit.converged = res.converged;
  return fit;
}

}  // namespace uf
