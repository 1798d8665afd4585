#include <gtest/gtest.h>

#include "support/test_support.hpp"
#include "unlearn_forge/error.hpp"
#include "unlearn_forge/gaussian.hpp"

namespace uf {
namespace {

using testing::kHalfLog2Pi;
using testing::scalar_gaussian;
using testing::vec;

TEST(GaussianDist, RejectsInvalidFactor) {
  EXPECT_THROW(GaussianDist(vec({0, 0}), Matrix::Identity(3, 3)), ShapeError);
  Matrix upper = Matrix::Identity(2, 2);
  upper(0, 1) = 0.5;
  EXPECT_THROW(GaussianDist(vec({0, 0}), upper), FactorizationError);
  EXPECT_THROW(GaussianDist(vec({0}), Matrix::Constant(1, 1, -1.0)), FactorizationError);
  EXPECT_THROW(GaussianDist::from_covariance(vec({0, 0}), Matrix::Zero(2, 2)),
               FactorizationError);
}

TEST(LogPdf, ScalarExamples) {
  const GaussianDist std_normal = scalar_gaussian(0.0, 1.0);
  EXPECT_NEAR(log_pdf(std_normal, vec({0.0})), -kHalfLog2Pi, 1e-15);
  EXPECT_NEAR(log_pdf(std_normal, vec({1.0})), -kHalfLog2Pi - 0.5, 1e-15);
  EXPECT_NEAR(-kHalfLog2Pi, -0.91894, 1e-5);
}

TEST(LogPdf, MatchesExplicitFormula) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const GaussianDist g = testing::random_gaussian(3, rng);
    const Vector w = testing::random_vector(3, rng, 2.0);
    const Matrix cov = g.covariance();
    const Vector r = w - g.mean();
    const double oracle = -3 * kHalfLog2Pi - 0.5 * std::log(cov.determinant()) -
                          0.5 * r.dot(cov.inverse() * r);
    EXPECT_NEAR(log_pdf(g, w), oracle, 1e-10);
  }
}

TEST(LogPdf, MaximalAtMean) {
  Rng rng(2);
  const GaussianDist g = testing::random_gaussian(4, rng);
  const double at_mean = log_pdf(g, g.mean());
  for (int t = 0; t < 100; ++t) {
    EXPECT_LT(log_pdf(g, g.mean() + testing::random_vector(4, rng)), at_mean);
  }
}

TEST(LogPdf, ShapeMismatch) {
  EXPECT_THROW(log_pdf(scalar_gaussian(0, 1), vec({1, 2})), ShapeError);
}

TEST(KlGaussian, ScalarExamples) {
  EXPECT_NEAR(kl_gaussian(scalar_gaussian(1, 1), scalar_gaussian(0, 1)), 0.5, 1e-15);
  EXPECT_NEAR(kl_gaussian(scalar_gaussian(0, 2), scalar_gaussian(0, 1)),
              0.5 * (2 - 1 - std::log(2.0)), 1e-15);
  EXPECT_NEAR(0.5 * (2 - 1 - std::log(2.0)), 0.15343, 1e-5);
}

TEST(KlGaussian, IdentityIsZero) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const GaussianDist g = testing::random_gaussian(1 + t % 5, rng);
    EXPECT_NEAR(kl_gaussian(g, g), 0.0, 1e-12);
  }
}

TEST(KlGaussian, NonNegativeOnRandomPairs) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + t % 5;
    const GaussianDist p = testing::random_gaussian(d, rng);
    const GaussianDist q = testing::random_gaussian(d, rng);
    EXPECT_GT(kl_gaussian(p, q), 0.0);
  }
}

TEST(KlGaussian, MatchesQuadratureInOneDimension) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::uniform_real_distribution<double> mu(-1, 1), var(0.3, 2.0);
    const double m1 = mu(rng), v1 = var(rng), m2 = mu(rng), v2 = var(rng);
    auto integrand = [&](double x) {
      const double lp = testing::normal_log_density(x, m1, v1);
      return std::exp(lp) * (lp - testing::normal_log_density(x, m2, v2));
    };
    const double s = std::sqrt(v1);
    const double oracle = testing::simpson(integrand, m1 - 15 * s, m1 + 15 * s);
    EXPECT_NEAR(kl_gaussian(scalar_gaussian(m1, v1), scalar_gaussian(m2, v2)), oracle, 1e-6);
  }
}

TEST(KlGaussian, ShapeMismatch) {
  Rng rng(6);
  EXPECT_THROW(kl_gaussian(testing::random_gaussian(2, rng), testing::random_gaussian(3, rng)),
               ShapeError);
}

TEST(Sample, DeterministicAndConsistent) {
  const GaussianDist g = scalar_gaussian(0, 1);
  const auto a = sample(g, 100000, 9);
  EXPECT_EQ(a, sample(g, 100000, 9));
  testing::RunningStats s;
  for (const auto& w : a) s.add(w(0));
  EXPECT_NEAR(s.mean, 0.0, 3 * s.std_error());
}

TEST(Sample, CorrelatedCovarianceEntrywise) {
  const Matrix cov = (Matrix(2, 2) << 2.0, 0.8, 0.8, 1.0).finished();
  const GaussianDist g = GaussianDist::from_covariance(vec({1.0, -1.0}), cov);
  const std::size_t n = 200000;
  const auto draws = sample(g, n, 10);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j <= i; ++j) {
      testing::RunningStats s;
      for (const auto& w : draws) s.add((w(i) - g.mean()(i)) * (w(j) - g.mean()(j)));
      EXPECT_NEAR(s.mean, cov(i, j), 3 * s.std_error()) << i << j;
    }
  }
}

TEST(KlMixtureMc, IdenticalSingleComponentIsZero) {
  const auto p = GaussianMixture::single(scalar_gaussian(0.3, 0.7));
  const MonteCarloEstimate e = kl_mixture_mc(p, p, 1000, 1);
  EXPECT_NEAR(e.estimate, 0.0, 1e-14);
  EXPECT_FALSE(e.infinite);
}

TEST(KlMixtureMc, SingleComponentsMatchClosedForm) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const GaussianDist p = testing::random_gaussian(2, rng);
    const GaussianDist q = testing::random_gaussian(2, rng);
    const MonteCarloEstimate e =
        kl_mixture_mc(GaussianMixture::single(p), GaussianMixture::single(q), 20000, 100 + t);
    EXPECT_NEAR(e.estimate, kl_gaussian(p, q), 3 * e.std_error + 1e-12);
  }
}

TEST(KlMixtureMc, SymmetricPairAgainstMomentMatchIsPositive) {
  const GaussianMixture p({scalar_gaussian(-1.5, 0.5), scalar_gaussian(1.5, 0.5)});
  const GaussianDist q = moment_match(p);
  auto log_p = [](double x) {
    return std::log(0.5 * std::exp(testing::normal_log_density(x, -1.5, 0.5)) +
                    0.5 * std::exp(testing::normal_log_density(x, 1.5, 0.5)));
  };
  const double oracle = testing::simpson(
      [&](double x) {
        return std::exp(log_p(x)) * (log_p(x) - log_pdf(q, vec({x})));
      },
      -12, 12);
  const MonteCarloEstimate e = kl_mixture_mc(p, GaussianMixture::single(q), 50000, 3);
  EXPECT_GT(oracle, 0.0);
  EXPECT_GT(e.estimate - 3 * e.std_error, 0.0);
  EXPECT_NEAR(e.estimate, oracle, 3 * e.std_error);
}

TEST(KlMixtureMc, RejectsSmallSampleAndFlagsDegenerate) {
  const auto p = GaussianMixture::single(scalar_gaussian(0, 1));
  EXPECT_THROW(kl_mixture_mc(p, p, 99, 1), ConfigError);
  const auto far = GaussianMixture::single(scalar_gaussian(1e200, 1e-200));
  EXPECT_TRUE(kl_mixture_mc(p, far, 100, 1).infinite);
}

TEST(MomentMatch, SingleComponentIsIdentity) {
  Rng rng(8);
  const GaussianDist g = testing::random_gaussian(3, rng);
  const GaussianDist m = moment_match(GaussianMixture::single(g));
  EXPECT_LT((m.mean() - g.mean()).norm(), 1e-14);
  EXPECT_LT((m.covariance() - g.covariance()).norm(), 1e-13);
}

TEST(MomentMatch, SymmetricPairGivesVarianceTwo) {
  const GaussianDist m =
      moment_match(GaussianMixture({scalar_gaussian(-1, 1), scalar_gaussian(1, 1)}));
  EXPECT_NEAR(m.mean()(0), 0.0, 1e-15);
  EXPECT_NEAR(m.covariance()(0, 0), 2.0, 1e-14);
}

TEST(MomentMatch, DegenerateWeightPicksFirst) {
  Rng rng(9);
  const GaussianDist a = testing::random_gaussian(2, rng);
  const GaussianDist b = testing::random_gaussian(2, rng);
  const GaussianDist m = moment_match(GaussianMixture({1.0, 0.0}, {a, b}));
  EXPECT_LT((m.mean() - a.mean()).norm(), 1e-14);
  EXPECT_LT((m.covariance() - a.covariance()).norm(), 1e-13);
}

TEST(MomentMatch, PreservesMomentsOfRandomMixtures) {
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    std::vector<GaussianDist> comps;
    std::vector<double> w;
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      comps.push_back(testing::random_gaussian(3, rng));
      w.push_back(std::uniform_real_distribution<double>(0.1, 1.0)(rng));
      total += w.back();
    }
    for (double& x : w) x /= total;
    // Law of total covariance, written out directly.
    Vector mean = Vector::Zero(3);
    for (int k = 0; k < 4; ++k) mean += w[k] * comps[k].mean();
    Matrix cov = Matrix::Zero(3, 3);
    for (int k = 0; k < 4; ++k) {
      const Vector r = comps[k].mean() - mean;
      cov += w[k] * (comps[k].covariance() + r * r.transpose());
    }
    const GaussianDist m = moment_match(GaussianMixture(w, comps));
    EXPECT_LT((m.mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((m.covariance() - cov).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GaussianMixture, WeightValidation) {
  const auto g = scalar_gaussian(0, 1);
  EXPECT_THROW(GaussianMixture({0.5, 0.6}, {g, g}), ConfigError);
  EXPECT_THROW(GaussianMixture({-0.5, 1.5}, {g, g}), ConfigError);
}

TEST(GaussianMixture, LogPdfStableFarFromMeans) {
  const GaussianMixture mix({0.3, 0.7}, {scalar_gaussian(-1, 0.01), scalar_gaussian(2, 0.04)});
  for (double sigmas = -50; sigmas <= 50; sigmas += 5) {
    const double x = 2 + sigmas * 0.2;
    const double v = mix.log_pdf(vec({x}));
    EXPECT_FALSE(std::isnan(v)) << x;
    EXPECT_TRUE(std::isfinite(v)) << x;
  }
}

TEST(QuadraticForm, ExpectationMatchesMonteCarlo) {
  Rng rng(11);
  const GaussianDist q = testing::random_gaussian(3, rng);
  const Matrix a = testing::random_factor(3, rng);
  const QuadraticForm f{a * a.transpose(), testing::random_vector(3, rng), 0.7};
  testing::RunningStats s;
  for (const auto& w : sample(q, 200000, 12)) s.add(f(w));
  EXPECT_NEAR(f.expectation(q), s.mean, 3 * s.std_error());
}

TEST(LogSumExp, HandlesExtremes) {
  EXPECT_NEAR(log_sum_exp({1000.0, 1000.0}), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_sum_exp({}), -INFINITY);
  EXPECT_EQ(log_sum_exp({-INFINITY, -INFINITY}), -INFINITY);
}

}  // namespace
}  // namespace uf
