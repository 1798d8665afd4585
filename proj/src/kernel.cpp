#include "unlearn_forge/kernel.hpp"

#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

void check_input(const LinearGaussianKernel& k, const GaussianDist& input) {
  if (input.dim() != static_cast<std::size_t>(k.transform.cols()) ||
      k.transform.rows() != k.offset.size()) {
    throw ShapeError("kernel: input dimension mismatch");
  }
}

}  // namespace

LinearGaussianKernel LinearGaussianKernel::constant(const GaussianDist& out) {
  const auto d = static_cast<Eigen::Index>(out.dim());
  return {Matrix::Zero(d, d), out.mean(), out.cov_factor()};
}

GaussianDist LinearGaussianKernel::apply(const Vector& w_l) const {
  if (w_l.size() != transform.cols()) throw ShapeError("kernel: W_l dimension mismatch");
  return GaussianDist(transform * w_l + offset, noise_factor);
}

GaussianDist LinearGaussianKernel::marginal(const GaussianDist& input) const {
  check_input(*this, input);
  if (transform.isZero(0.0)) return GaussianDist(offset, noise_factor);
  const Matrix spread = transform * input.cov_factor();
  const Matrix cov = noise_factor * noise_factor.transpose() + spread * spread.transpose();
  return GaussianDist::from_covariance(transform * input.mean() + offset, cov);
}

GaussianMixture LinearGaussianKernel::mixture_from_samples(const GaussianDist& input,
                                                           std::size_t count,
                                                           std::uint64_t seed) const {
  check_input(*this, input);
  std::vector<GaussianDist> comps;
  comps.reserve(count);
  for (const Vector& w : sample(input, count, seed)) comps.push_back(apply(w));
  return GaussianMixture(std::move(comps));
}

double LinearGaussianKernel::expected_kl(const GaussianDist& input,
                                         const GaussianDist& target) const {
  check_input(*this, input);
  const GaussianDist at_mean(transform * input.mean() + offset, noise_factor);
  // The mean of apply(W_l) fluctuates with covariance A Σ Aᵀ, adding
  // ½ tr(Σ_t⁻¹ A Σ Aᵀ) to the KL at the average input.
  const Matrix white = target.whiten_columns(transform * input.cov_factor());
  return kl_gaussian(at_mean, target) + 0.5 * white.squaredNorm();
}

}  // namespace uf
