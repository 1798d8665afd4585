#include <gtest/gtest.h>

#include "support/test_support.hpp"
#include "unlearn_forge/amortized.hpp"
#include "unlearn_forge/certify.hpp"
#include "unlearn_forge/error.hpp"
#include "unlearn_forge/eubo.hpp"
#include "unlearn_forge/pipeline.hpp"
#include "unlearn_forge/scrub.hpp"

namespace uf {
namespace {

using testing::scalar_gaussian;
using testing::scalars;
using testing::vec;

ConjugateModel scalar_model() {
  ConjugateModel model;
  model.prior = scalar_gaussian(0.0, 1.0);
  return model;
}

struct Instance {
  ConjugateModel model;
  PopulationSpec spec;
  Trial trial;
};

Instance random_instance(Rng& rng, std::uint64_t seed, std::size_t d = 2, std::size_t n = 10,
                         std::size_t m = 2, Task task = Task::gaussian_mean) {
  ConjugateModel model = testing::random_model(task, d, rng);
  PopulationSpec spec = testing::population_for(model, rng);
  Trial trial = draw_trial(model, spec, n, m, seed);
  return {model, spec, std::move(trial)};
}

// ---- EUBO ----

TEST(Eubo, AtLearnedIsExpectedLogLik) {
  const ConjugateModel model = scalar_model();
  const GaussianDist learned = scalar_gaussian(2.0, 1.0 / 3.0);
  EXPECT_NEAR(eubo(learned, learned, scalars({4.0}), model),
              expected_log_lik(learned, scalars({4.0}), model), 1e-14);
}

TEST(Eubo, ShiftConstancyOnScalarExample) {
  const ConjugateModel model = scalar_model();
  const GaussianDist learned = scalar_gaussian(2.0, 1.0 / 3.0);
  const GaussianDist retrained = scalar_gaussian(1.0, 0.5);
  Rng rng(1);
  testing::RunningStats s;
  for (int t = 0; t < 100; ++t) {
    const GaussianDist q = testing::random_gaussian(1, rng);
    s.add(eubo(q, learned, scalars({4.0}), model) - kl_gaussian(q, retrained));
  }
  EXPECT_LT(s.stddev(), 1e-8);
}

TEST(Eubo, EmptyErasedSetRejected) {
  const ConjugateModel model = scalar_model();
  const GaussianDist q = scalar_gaussian(0, 1);
  EXPECT_THROW(eubo(q, q, Dataset::empty(1), model), ConfigError);
}

TEST(Eubo, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Instance in = random_instance(rng, 20 + t, 1 + t % 3, 8, 2,
                                        t % 2 ? Task::gaussian_mean : Task::linear_regression);
    const std::size_t d = in.model.parameter_dim();
    const Objective f = gaussian_objective(
        eubo_objective(in.trial.learned, in.trial.erased, in.model), d);
    const Vector theta = pack_gaussian(testing::random_gaussian(d, rng));
    Vector g;
    f(theta, &g);
    const Vector fd = finite_difference_gradient(f, theta, 1e-5);
    EXPECT_LT((g - fd).norm() / std::max(fd.norm(), 1e-8), 1e-5);
  }
}

TEST(MinimizeEubo, ScalarExampleRecoversRetrained) {
  const ConjugateModel model = scalar_model();
  const NaturalParams nat = exact_posterior_natural(model, scalars({2.0, 4.0}));
  const GaussianDist learned = from_natural(nat);
  const VariationalState st = minimize_eubo(learned, learned, scalars({4.0}), model, {});
  EXPECT_LT(kl_gaussian(st.q, scalar_gaussian(1.0, 0.5)), 1e-6);
  for (std::size_t i = 1; i < st.objective_trace.size(); ++i) {
    EXPECT_LE(st.objective_trace[i], st.objective_trace[i - 1]);
  }
}

TEST(MinimizeEubo, StartingAtOptimumStops) {
  const ConjugateModel model = scalar_model();
  const GaussianDist learned = scalar_gaussian(2.0, 1.0 / 3.0);
  const GaussianDist retrained = scalar_gaussian(1.0, 0.5);
  const VariationalState st = minimize_eubo(retrained, learned, scalars({4.0}), model, {});
  EXPECT_LE(st.step_count, 1u);
  EXPECT_LT(kl_gaussian(st.q, retrained), 1e-12);
}

// ---- amortized ----

TEST(Amortized, ZeroGainIsNoiseAroundAnchor) {
  const ConjugateModel model = scalar_model();
  const Dataset d = scalars({2.0, 4.0});
  const Statistic stat = make_statistic(model, d, StatisticLevel::summary);
  const AmortizedMechanism mech = noop_mechanism(1, StatisticLevel::summary, 0.1);
  const GaussianDist out = apply_amortized(mech, vec({2.0}), stat, scalars({4.0}), model);
  EXPECT_DOUBLE_EQ(out.mean()(0), 2.0);
  EXPECT_NEAR(out.covariance()(0, 0), 0.01, 1e-15);
}

TEST(Amortized, NegativeGainMovesAwayFromErasedPoint) {
  const ConjugateModel model = scalar_model();
  const Statistic stat = make_statistic(model, scalars({2.0, 4.0}), StatisticLevel::summary);
  AmortizedMechanism mech = noop_mechanism(1, StatisticLevel::summary);
  mech.gain(0, 0) = -0.5;
  const GaussianDist out = apply_amortized(mech, vec({2.0}), stat, scalars({4.0}), model);
  // ∇log P(4|w) at w=2 is +2, so the mean lands on the retrained mean 1.0.
  EXPECT_NEAR(out.mean()(0), 1.0, 1e-14);
  EXPECT_TRUE(out == apply_amortized(mech, vec({2.0}), stat, scalars({4.0}), model));
}

TEST(Amortized, LevelMismatchRejected) {
  const ConjugateModel model = scalar_model();
  const Statistic stat = make_statistic(model, scalars({2.0}), StatisticLevel::full_posterior);
  EXPECT_THROW(apply_amortized(noop_mechanism(1, StatisticLevel::summary), vec({2.0}), stat,
                               scalars({2.0}), model),
               ConfigError);
}

TEST(Amortized, KernelAgreesWithApply) {
  Rng rng(3);
  const Instance in = random_instance(rng, 30);
  for (StatisticLevel level : {StatisticLevel::summary, StatisticLevel::full_posterior}) {
    AmortizedMechanism mech{testing::random_factor(2, rng), testing::random_vector(2, rng),
                            testing::random_factor(2, rng), level};
    const Statistic stat = make_statistic(in.model, in.trial.data, level);
    const LinearGaussianKernel k = amortized_kernel(mech, stat, in.trial.erased, in.model);
    for (int t = 0; t < 5; ++t) {
      const Vector w = testing::random_vector(2, rng);
      const GaussianDist a = apply_amortized(mech, w, stat, in.trial.erased, in.model);
      const GaussianDist b = k.apply(w);
      EXPECT_LT((a.mean() - b.mean()).norm(), 1e-12);
      EXPECT_LT((a.covariance() - b.covariance()).norm(), 1e-12);
    }
  }
}

AmortizedMechanism prior_init(const ConjugateModel& model, StatisticLevel level) {
  const auto d = static_cast<Eigen::Index>(model.parameter_dim());
  return {Matrix::Zero(d, d), Vector::Zero(d), model.prior.cov_factor(), level};
}

TEST(TrainAmortized, FullPosteriorFamilyReachesRetraining) {
  ConjugateModel model;
  model.prior = GaussianDist(Vector::Zero(2), Matrix::Identity(2, 2));
  PopulationSpec spec;
  spec.true_params = vec({0.5, -0.3});
  const AmortizedTraining tr =
      train_amortized(prior_init(model, StatisticLevel::full_posterior), model, spec, 16, 2,
                      {64, 0, 50, 20}, {});
  const auto heldout =
      sample_tasks(model, spec, 16, 2, StatisticLevel::full_posterior, 100, 999);
  EXPECT_LT(average_kl_to_retrained(tr.mechanism, heldout, model).value, 1e-3);
}

TEST(TrainAmortized, BeatsNoopOnHeldOutTasks) {
  ConjugateModel model;
  model.prior = GaussianDist(Vector::Zero(2), Matrix::Identity(2, 2));
  PopulationSpec spec;
  spec.true_params = vec({0.5, -0.3});
  const AmortizedTraining tr = train_amortized(prior_init(model, StatisticLevel::summary), model,
                                               spec, 16, 2, {64, 0, 50, 20}, {});
  const auto heldout = sample_tasks(model, spec, 16, 2, StatisticLevel::summary, 100, 4242);
  const auto trained = kl_to_retrained(tr.mechanism, heldout, model);
  const auto noop = kl_to_retrained(noop_mechanism(2, StatisticLevel::summary), heldout, model);
  testing::RunningStats diff;
  for (std::size_t i = 0; i < heldout.size(); ++i) diff.add(noop[i] - trained[i]);
  EXPECT_GT(diff.mean - 3 * diff.std_error(), 0.0);
}

TEST(TrainAmortized, HeldOutNeverWorseThanInit) {
  Rng rng(4);
  const ConjugateModel model = testing::random_model(Task::linear_regression, 2, rng);
  const PopulationSpec spec = testing::population_for(model, rng);
  const AmortizedMechanism init = prior_init(model, StatisticLevel::summary);
  const AmortizedTraining tr =
      train_amortized(init, model, spec, 12, 2, {16, 16, 10, 3}, {0.5, 300, 1e-9, 0});
  ASSERT_FALSE(tr.heldout_trace.empty());
  EXPECT_LE(*std::min_element(tr.heldout_trace.begin(), tr.heldout_trace.end()),
            tr.heldout_trace.front());
}

TEST(TrainAmortized, SingleTaskWarnsWithoutCrashing) {
  ConjugateModel model;
  model.prior = scalar_gaussian(0, 1);
  PopulationSpec spec;
  spec.true_params = vec({0.0});
  const AmortizedTraining tr = train_amortized(prior_init(model, StatisticLevel::summary), model,
                                               spec, 8, 1, {1, 0, 50, 5}, {});
  EXPECT_TRUE(tr.overfit_warning);
  EXPECT_NO_THROW(tr.mechanism.validate());
}

// ---- forgetting Lagrangian ----

ForgettingContext context_for(const Instance& in, double ref_noise, MarginalMode mode,
                              std::uint64_t seed = 1) {
  ForgettingContext ctx{in.model,
                        in.trial.learned,
                        in.trial.retrained,
                        in.trial.erased,
                        in.trial.remaining,
                        isotropic_reference(in.model.parameter_dim(), ref_noise),
                        Loss::squared_error(in.model.task)};
  ctx.seed = seed;
  ctx.mode = mode;
  return ctx;
}

TEST(ForgettingLagrangian, MatchedMarginalsHaveZeroKl) {
  Rng rng(5);
  const Instance in = random_instance(rng, 50);
  ForgettingContext ctx = context_for(in, 0.2, MarginalMode::moment_match);
  ctx.learned = ctx.retrained;
  const ScrubMechanism scrub = identity_scrub(ctx.reference);
  const ForgettingTerms terms = forgetting_terms(scrub, ctx);
  EXPECT_NEAR(terms.kl_term, 0.0, 1e-12);
  EXPECT_NEAR(forgetting_lagrangian(scrub, ctx, 3.0), terms.loss_term, 1e-12);
  ctx.mode = MarginalMode::mc;
  EXPECT_NEAR(forgetting_terms(scrub, ctx).kl_term, 0.0, 1e-12);
}

TEST(ForgettingLagrangian, LinearInLambda) {
  Rng rng(6);
  const Instance in = random_instance(rng, 51);
  const ForgettingContext ctx = context_for(in, 0.2, MarginalMode::moment_match);
  ScrubMechanism scrub = identity_scrub(ctx.reference);
  scrub.shift_gain = 0.1 * Matrix::Identity(2, 2);
  const double loss = forgetting_terms(scrub, ctx).loss_term;
  EXPECT_NEAR(forgetting_lagrangian(scrub, ctx, 2.0) - loss,
              2.0 * (forgetting_lagrangian(scrub, ctx, 1.0) - loss), 1e-12);
}

TEST(ForgettingLagrangian, LossTermIsExpectedTrainingLoss) {
  Rng rng(7);
  const Instance in = random_instance(rng, 52);
  const ForgettingContext ctx = context_for(in, 0.2, MarginalMode::moment_match);
  const ScrubMechanism scrub = identity_scrub(ctx.reference);
  const GaussianMixture mix = scrubbed_mixture(scrub, ctx);
  testing::RunningStats s;
  Rng draw_rng(8);
  for (int i = 0; i < 100000; ++i) s.add(training_loss(mix.draw(draw_rng), ctx.remaining, ctx.loss));
  EXPECT_NEAR(forgetting_terms(scrub, ctx).loss_term, s.mean, 3 * s.std_error());
}

TEST(ForgettingLagrangian, MonteCarloModeNeedsEnoughDraws) {
  Rng rng(9);
  const Instance in = random_instance(rng, 53);
  ForgettingContext ctx = context_for(in, 0.2, MarginalMode::mc);
  ctx.n_mc = 99;
  EXPECT_THROW(forgetting_terms(identity_scrub(ctx.reference), ctx), ConfigError);
}

TEST(MinimizeForgettingLagrangian, DecoupledCaseGainsOnlyThroughLoss) {
  Rng rng(10);
  const Instance in = random_instance(rng, 54);
  ForgettingContext ctx = context_for(in, 0.2, MarginalMode::moment_match);
  ctx.learned = ctx.retrained;
  const ScrubMechanism init = identity_scrub(ctx.reference);
  const ForgettingTerms before = forgetting_terms(init, ctx);
  ASSERT_NEAR(before.kl_term, 0.0, 1e-12);
  std::vector<double> kls;
  for (double lambda : {1.0, 10.0, 100.0}) {
    const ScrubFit fit = minimize_forgetting_lagrangian(init, ctx, lambda, {});
    // The KL starts at zero, so any decrease of the objective is loss decrease.
    EXPECT_LE(fit.terms.value(lambda), before.value(lambda));
    const double gain = before.value(lambda) - fit.terms.value(lambda);
    EXPECT_LE(fit.terms.loss_term, before.loss_term - gain + 1e-12);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      EXPECT_LE(fit.objective_trace[i], fit.objective_trace[i - 1]);
    }
    kls.push_back(fit.terms.kl_term);
  }
  // Moving off the reference costs KL quadratically, so the optimum's KL
  // falls like 1/lambda^2.
  EXPECT_GT(kls[0], kls[1]);
  EXPECT_GT(kls[1], kls[2]);
  EXPECT_LT(kls[2], 1e-3);
}

TEST(MinimizeForgettingLagrangian, LargeLambdaMatchesReference) {
  Rng rng(11);
  const Instance in = random_instance(rng, 55);
  const ForgettingContext ctx = context_for(in, 0.3, MarginalMode::moment_match);
  const ScrubFit fit = minimize_forgetting_lagrangian(identity_scrub(ctx.reference), ctx, 1e4, {});
  const MonteCarloEstimate kl =
      kl_mixture_mc(scrubbed_mixture(fit.mechanism, ctx), reference_mixture(ctx), 5000, 12);
  EXPECT_LT(kl.estimate + 3 * kl.std_error, 1e-2);
}

TEST(MinimizeForgettingLagrangian, LambdaSweepIsMonotone) {
  Rng rng(12);
  const Instance in = random_instance(rng, 56);
  const ForgettingContext ctx = context_for(in, 0.3, MarginalMode::moment_match);
  std::vector<ForgettingTerms> terms;
  for (double lambda : {1e-3, 1e-2, 1e-1, 1.0}) {
    terms.push_back(
        minimize_forgetting_lagrangian(identity_scrub(ctx.reference), ctx, lambda, {}).terms);
  }
  for (std::size_t i = 1; i < terms.size(); ++i) {
    EXPECT_LE(terms[i].kl_term, terms[i - 1].kl_term + 1e-9);
    EXPECT_GE(terms[i].loss_term, terms[i - 1].loss_term - 1e-9);
  }
}

TEST(MinimizeForgettingLagrangian, MomentMatchIsReproducible) {
  Rng rng(13);
  const Instance in = random_instance(rng, 57);
  const ForgettingContext ctx = context_for(in, 0.3, MarginalMode::moment_match);
  const ScrubFit a = minimize_forgetting_lagrangian(identity_scrub(ctx.reference), ctx, 1.0, {});
  const ScrubFit b = minimize_forgetting_lagrangian(identity_scrub(ctx.reference), ctx, 1.0, {});
  EXPECT_EQ(a.mechanism.shift_gain, b.mechanism.shift_gain);
  EXPECT_EQ(a.mechanism.cov_factor, b.mechanism.cov_factor);
}

TEST(MinimizeForgettingLagrangian, MonteCarloModeDescends) {
  Rng rng(14);
  const Instance in = random_instance(rng, 58, 1, 8, 1);
  ForgettingContext ctx = context_for(in, 0.3, MarginalMode::mc);
  ctx.components = 16;
  ctx.n_mc = 200;
  const ScrubMechanism init = identity_scrub(ctx.reference);
  const ScrubFit fit = minimize_forgetting_lagrangian(init, ctx, 1.0, {0.5, 200, 1e-6, 0});
  EXPECT_LE(fit.terms.value(1.0), forgetting_terms(init, ctx).value(1.0));
}

// ---- certificates ----

TEST(Certify, RetrainedOutputIsZero) {
  Rng rng(15);
  const GaussianDist r = testing::random_gaussian(2, rng);
  const CertResult c =
      certify_epsilon(GaussianMixture::single(r), r, CertMode::marginal, 1000, 1, 0.01);
  EXPECT_NEAR(c.epsilon_estimate, 0.0, 1e-12);
  EXPECT_TRUE(c.passed());
  EXPECT_EQ(c.passed_at, 0.01);
}

TEST(Certify, NoopMatchesClosedFormKl) {
  Rng rng(16);
  const Instance in = random_instance(rng, 60);
  UnlearnSettings s;
  s.method = Method::noop;
  const UnlearnOutcome out = unlearn(s, in.trial, in.model, 1);
  const GaussianMixture mix = certificate_mixture(out.kernel, in.trial.learned,
                                                  CertMode::marginal, 64, 2);
  const CertResult c = certify_epsilon(mix, in.trial.retrained, CertMode::marginal, 20000, 3,
                                       std::nullopt);
  EXPECT_NEAR(c.epsilon_estimate, kl_gaussian(in.trial.learned, in.trial.retrained),
              3 * c.std_error);
  EXPECT_FALSE(c.passed());
  EXPECT_EQ(c.threshold, std::nullopt);
}

TEST(Certify, OrderingWorstAvgMarginal) {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    const Instance in = random_instance(rng, 70 + t);
    const LinearGaussianKernel k{testing::random_factor(2, rng, 0.5), testing::random_vector(2, rng),
                                 testing::random_factor(2, rng, 0.5)};
    const GaussianMixture mix = k.mixture_from_samples(in.trial.learned, 64, 100 + t);
    const CertResult worst =
        certify_epsilon(mix, in.trial.retrained, CertMode::conditional_worst, 1000, t, {});
    const CertResult avg =
        certify_epsilon(mix, in.trial.retrained, CertMode::conditional_avg, 1000, t, {});
    const CertResult marg = certify_epsilon(mix, in.trial.retrained, CertMode::marginal, 5000, t, {});
    EXPECT_GE(worst.epsilon_estimate, avg.epsilon_estimate);
    EXPECT_GE(avg.epsilon_estimate,
              marg.epsilon_estimate - 3 * std::hypot(avg.std_error, marg.std_error));
  }
}

TEST(Certify, ThresholdFailureRecorded) {
  const CertResult c = certify_epsilon(GaussianMixture::single(scalar_gaussian(1, 1)),
                                       scalar_gaussian(0, 1), CertMode::marginal, 1000, 1, 0.1);
  EXPECT_FALSE(c.passed());
  EXPECT_EQ(c.threshold, 0.1);
}

TEST(CertMode, ParseRoundTrip) {
  for (CertMode m : {CertMode::marginal, CertMode::conditional_worst, CertMode::conditional_avg}) {
    EXPECT_EQ(parse_cert_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_cert_mode("maximal"), ConfigError);
}

// ---- pipeline ----

TEST(Pipeline, RetrainAndEuboMarginalsMatchRetrained) {
  Rng rng(18);
  const Instance in = random_instance(rng, 80, 3, 20, 3, Task::linear_regression);
  UnlearnSettings s;
  s.method = Method::retrain;
  EXPECT_NEAR(kl_gaussian(unlearn(s, in.trial, in.model, 1).kernel.marginal(in.trial.learned),
                          in.trial.retrained),
              0.0, 1e-15);
  s.method = Method::eubo;
  const UnlearnOutcome out = unlearn(s, in.trial, in.model, 1);
  ASSERT_TRUE(out.variational.has_value());
  EXPECT_LT(kl_gaussian(out.kernel.marginal(in.trial.learned), in.trial.retrained), 1e-6);
}

TEST(Pipeline, AvuWithoutMechanismRejected) {
  Rng rng(19);
  const Instance in = random_instance(rng, 81);
  UnlearnSettings s;
  s.method = Method::avu;
  EXPECT_THROW(unlearn(s, in.trial, in.model, 1), ConfigError);
}

TEST(Pipeline, MethodNamesRoundTrip) {
  for (Method m : {Method::retrain, Method::eubo, Method::avu, Method::scrub, Method::noop}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("forget"), ConfigError);
}

}  // namespace
}  // namespace uf
