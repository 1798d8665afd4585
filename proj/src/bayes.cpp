#include "unlearn_forge/bayes.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

void check_data(const ConjugateModel& model, const Dataset& data) {
  if (data.dim() != model.data_dim()) {
    throw ShapeError("dataset dimension " + std::to_string(data.dim()) +
                     " does not match model data dimension " + std::to_string(model.data_dim()));
  }
}

}  // namespace

void ConjugateModel::validate() const {
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("model: noise_variance must be positive");
  }
}

NaturalParams to_natural(const GaussianDist& dist) {
  Matrix precision = dist.precision();
  Vector shift = precision * dist.mean();
  return {std::move(precision), std::move(shift)};
}

GaussianDist from_natural(const NaturalParams& nat) {
  const Matrix sym = 0.5 * (nat.precision + nat.precision.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success || !sym.allFinite()) {
    throw DowndateError("precision matrix is not positive definite");
  }
  const Matrix cov = llt.solve(Matrix::Identity(sym.rows(), sym.cols()));
  Vector mean = llt.solve(nat.shift);
  try {
    return GaussianDist::from_covariance(std::move(mean), cov);
  } catch (const FactorizationError& e) {
    throw DowndateError(std::string("posterior covariance not PD: ") + e.what());
  }
}

DataInformation data_information(const ConjugateModel& model, const Dataset& data) {
  model.validate();
  const auto p = static_cast<Eigen::Index>(model.parameter_dim());
  DataInformation out{Matrix::Zero(p, p), Vector::Zero(p), 0.0};
  if (data.is_empty()) return out;
  check_data(model, data);
  // −log P(z|w) = wᵀAw − 2bᵀw + c, so each point adds 2A to info and 2b to score.
  const Loss nll = model.log_loss();
  for (const auto& z : data.points()) {
    const QuadraticForm f = nll.point_form(z, model.parameter_dim());
    out.info += 2.0 * f.quad;
    out.score += 2.0 * f.lin;
    out.constant -= f.constant;
  }
  return out;
}

NaturalParams exact_posterior_natural(const ConjugateModel& model, const Dataset& data) {
  if (data.is_empty()) throw ConfigError("exact_posterior: dataset must be non-empty");
  check_data(model, data);
  const DataInformation info = data_information(model, data);
  NaturalParams prior = to_natural(model.prior);
  return {prior.precision + info.info, prior.shift + info.score};
}

GaussianDist exact_posterior(const ConjugateModel& model, const Dataset& data) {
  return from_natural(exact_posterior_natural(model, data));
}

NaturalParams downdate_natural(const NaturalParams& post, const ConjugateModel& model,
                               const Dataset& erased) {
  if (post.precision.rows() != static_cast<Eigen::Index>(model.parameter_dim()) ||
      post.shift.size() != static_cast<Eigen::Index>(model.parameter_dim())) {
    throw ShapeError("downdate: posterior dimension does not match model");
  }
  const DataInformation info = data_information(model, erased);
  return {post.precision - info.info, post.shift - info.score};
}

GaussianDist downdate_posterior(const NaturalParams& post, const ConjugateModel& model,
                                const Dataset& erased) {
  return from_natural(downdate_natural(post, model, erased));
}

double log_lik_subset(const Vector& w, const Dataset& erased, const ConjugateModel& model) {
  if (static_cast<std::size_t>(w.size()) != model.parameter_dim()) {
    throw ShapeError("log_lik_subset: parameter dimension mismatch");
  }
  if (erased.is_empty()) return 0.0;
  check_data(model, erased);
  const Loss nll = model.log_loss();
  double total = 0.0;
  for (const auto& z : erased.points()) total -= nll(w, z);
  return total;
}

Vector log_lik_gradient(const Vector& w, const Dataset& erased, const ConjugateModel& model) {
  if (static_cast<std::size_t>(w.size()) != model.parameter_dim()) {
    throw ShapeError("log_lik_gradient: parameter dimension mismatch");
  }
  const DataInformation info = data_information(model, erased);
  return info.score - info.info * w;
}

double expected_log_lik(const GaussianDist& q, const Dataset& erased, const ConjugateModel& model) {
  if (q.dim() != model.parameter_dim()) {
    throw ShapeError("expected_log_lik: distribution dimension mismatch");
  }
  if (erased.is_empty()) return 0.0;
  check_data(model, erased);
  const Loss nll = model.log_loss();
  double total = 0.0;
  for (const auto& z : erased.points()) total -= nll.point_form(z, q.dim()).expectation(q);
  return total;
}

std::string to_string(StatisticLevel level) {
  return level == StatisticLevel::full_posterior ? "full-posterior" : "summary";
}

StatisticLevel parse_statistic_level(const std::string& name) {
  if (name == "full-posterior") return StatisticLevel::full_posterior;
  if (name == "summary") return StatisticLevel::summary;
  throw ConfigError("unknown statistic level '" + name + "'");
}

Vector Statistic::posterior_mean() const {
  if (const auto* nat = std::get_if<NaturalParams>(&payload)) return from_natural(*nat).mean();
  return std::get<PosteriorSummary>(payload).mean;
}

Statistic make_statistic(const ConjugateModel& model, const Dataset& data, StatisticLevel level) {
  NaturalParams nat = exact_posterior_natural(model, data);
  if (level == StatisticLevel::full_posterior) return {level, std::move(nat)};
  const GaussianDist post = from_natural(nat);
  return {level, PosteriorSummary{post.mean(), post.trace_cov()}};
}

Trial draw_trial(const ConjugateModel& model, const PopulationSpec& spec, std::size_t n,
                 std::size_t m, std::uint64_t seed) {
  if (spec.data_dim() != model.data_dim()) {
    throw ShapeError("population data dimension does not match the model");
  }
  Dataset data = generate_dataset(spec, n, derive_seed(seed, "data"));
  DeleteRequest request = draw_delete_request(data, m, derive_seed(seed, "delete"));
  DataSplit parts = split(data, request);
  NaturalParams nat = exact_posterior_natural(model, data);
  GaussianDist learned = from_natural(nat);
  GaussianDist retrained = downdate_posterior(nat, model, parts.erased);
  return {std::move(data),         std::move(request), std::move(parts.remaining),
          std::move(parts.erased), std::move(nat),     std::move(learned),
          std::move(retrained)};
}

}  // namespace uf
