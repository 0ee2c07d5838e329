#include "cfcv/meta_learners.hpp"
#include "cfcv/propensity.hpp"
#include "cfcv/validation_metrics.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <set>

using namespace cfcv;

namespace {

SyntheticSample constant_effect_sample(double effect, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n = 2000;
  cfg.d = 5;
  cfg.noise_scale = 0.5;
  cfg.response_surface = ResponseSurface::Linear;
  cfg.treatment_effect = effect;
  cfg.effect_heterogeneity = 0.0;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

PropensityFunction constant_propensity(double e) {
  return [e](const Matrix& x) { return Vector::Constant(x.rows(), e); };
}

std::vector<CatePredictor> all_learners(const ObservationalDataset& train, const PropensityFunction& e) {
  const BaseLearnerConfig ridge = RidgeConfig{};
  return {fit_s_learner(train, ridge), fit_t_learner(train, ridge), fit_x_learner(train, ridge, e),
          fit_dr_learner(train, ridge, e), fit_da_learner(train, ridge, e)};
}

}  // namespace

TEST_CASE("linear learners recover a constant effect") {
  const auto s = constant_effect_sample(2.0, 1);
  const auto e = fit_logistic(s.data.features(), s.data.treatments()).as_function();
  const auto probe = testing::small_sample(500, 99);
  for (const auto& learner : all_learners(s.data, e)) {
    const Vector tau = learner.predict(probe.data.features());
    INFO(learner.id());
    CHECK(std::abs(tau.mean() - 2.0) < 0.1);
  }
}

TEST_CASE("null effect yields near-zero predictions") {
  const auto s = constant_effect_sample(0.0, 2);
  const auto e = fit_logistic(s.data.features(), s.data.treatments()).as_function();
  for (const auto& learner : all_learners(s.data, e)) {
    INFO(learner.id());
    CHECK(learner.predict(s.data.features()).cwiseAbs().mean() < 0.1);
  }
}

TEST_CASE("X-learner blends the two arm effects by the propensity") {
  const auto s = testing::small_sample(400, 3);
  const RidgeConfig base;
  const auto x_learner = fit_x_learner(s.data, base, constant_propensity(0.5));

  const auto t1 = s.data.arm_indices(1);
  const auto t0 = s.data.arm_indices(0);
  const auto treated = s.data.subset(t1);
  const auto control = s.data.subset(t0);
  const auto f1 = fit_ridge(treated.features(), treated.outcomes(), std::nullopt, base);
  const auto f0 = fit_ridge(control.features(), control.outcomes(), std::nullopt, base);
  const auto tau1 = fit_ridge(treated.features(), treated.outcomes() - f0.predict(treated.features()), std::nullopt, base);
  const auto tau0 = fit_ridge(control.features(), f1.predict(control.features()) - control.outcomes(), std::nullopt, base);
  const Matrix& x = s.data.features();
  const Vector expected = 0.5 * (tau0.predict(x) + tau1.predict(x));
  CHECK(testing::max_abs_diff(x_learner.predict(x), expected) < 1e-12);
}

TEST_CASE("DA weights are one under a constant half propensity") {
  IntVector t(4);
  t << 1, 0, 1, 0;
  const Vector w = da_importance_weights(t, Vector::Constant(4, 0.5));
  CHECK(w.isApproxToConstant(1.0));

  Vector e(4);
  e << 0.25, 0.25, 0.5, 0.8;
  const Vector v = da_importance_weights(t, e);
  CHECK(std::abs(v[0] + v[2] - 2.0) < 1e-12);
  CHECK(std::abs(v[1] + v[3] - 2.0) < 1e-12);
  CHECK(std::abs(v[0] / v[2] - 3.0) < 1e-12);
}

TEST_CASE("DA imputed effects use the opposite arm model") {
  Matrix x(2, 1);
  x << 0, 1;
  IntVector t(2);
  t << 1, 0;
  Vector y(2);
  y << 5, 2;
  ObservationalDataset data(x, t, y);
  Matrix xf(2, 1);
  xf << 0, 1;
  RidgeConfig exact;
  exact.l2_penalty = 0.0;
  const auto mu1 = fit_ridge(xf, Vector::Constant(2, 7.0), std::nullopt, exact);
  const auto mu0 = fit_ridge(xf, Vector::Constant(2, 1.0), std::nullopt, exact);
  const Vector eff = da_imputed_effects(data, mu1, mu0);
  CHECK(std::abs(eff[0] - 4.0) < 1e-12);
  CHECK(std::abs(eff[1] - 5.0) < 1e-12);
}

TEST_CASE("DA sub-models are configured independently") {
  const auto s = testing::small_sample(300, 4);
  GbrConfig g;
  g.n_estimators = 10;
  DaLearnerConfigs mixed{RidgeConfig{}, TreeConfig{}, g};
  const auto da = fit_da_learner(s.data, mixed, constant_propensity(0.4));
  CHECK(da.predict(s.data.features()).allFinite());
  const auto ridge_only = fit_da_learner(s.data, BaseLearnerConfig{RidgeConfig{}}, constant_propensity(0.4));
  CHECK(da.predict(s.data.features()) != ridge_only.predict(s.data.features()));
}

TEST_CASE("DR pseudo-outcomes are unbiased for the sample effect") {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.seed = 5;
  const auto s = generate_synthetic(cfg);
  const Vector labels = dr_tau(s.data.treatments(), s.data.outcomes(), *s.truth.propensity, s.truth.mu0, s.truth.mu1);
  const Vector diff = labels - s.truth.tau;
  const double se = std::sqrt((diff.array() - diff.mean()).square().sum() / (diff.size() - 1) / diff.size());
  CHECK(std::abs(diff.mean()) < 3.0 * se);
}

TEST_CASE("learners are deterministic") {
  const auto s = testing::small_sample(300, 6);
  const auto e = constant_propensity(0.5);
  GbrConfig g;
  g.subsample = 0.7;
  g.seed = 9;
  g.n_estimators = 20;
  const auto a = fit_dr_learner(s.data, g, e).predict(s.data.features());
  const auto b = fit_dr_learner(s.data, g, e).predict(s.data.features());
  CHECK(a == b);
}

TEST_CASE("default candidate set has 25 uniquely named models") {
  const auto cfg = default_candidate_set_config();
  const auto roster = candidate_roster(cfg);
  CHECK(roster.size() == 25);
  CHECK(std::set<std::string>(roster.begin(), roster.end()).size() == 25);
  CHECK(roster.front() == candidate_id(MetaLearner::S, cfg.base_learners.front().label));

  const auto s = testing::small_sample(400, 7);
  const auto candidates = build_candidate_set(s.data, cfg, constant_propensity(0.5));
  REQUIRE(candidates.size() == 25);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    CHECK(candidates[k].id() == roster[k]);
    CHECK(candidates[k].predict(s.data.features()).allFinite());
  }
}

TEST_CASE("a single pairing builds one candidate") {
  CandidateSetConfig cfg;
  cfg.meta_learners = {MetaLearner::T};
  cfg.base_learners = {{"ridge", RidgeConfig{}}};
  const auto s = testing::small_sample(200, 8);
  CHECK(build_candidate_set(s.data, cfg, constant_propensity(0.5)).size() == 1);
}

TEST_CASE("candidate config validation") {
  CandidateSetConfig cfg = default_candidate_set_config();
  cfg.meta_learners.push_back(MetaLearner::S);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = default_candidate_set_config();
  cfg.base_learners.push_back(cfg.base_learners.front());
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.base_learners.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(meta_learner_from_string("Q"), ConfigError);
  CHECK(meta_learner_from_string(to_string(MetaLearner::DR)) == MetaLearner::DR);
}

TEST_CASE("propensity-based learners reject invalid scores") {
  const auto s = testing::small_sample(100, 9);
  const auto x_learner = fit_x_learner(s.data, RidgeConfig{}, constant_propensity(1.0));
  CHECK_THROWS_AS(x_learner.predict(s.data.features()), InvalidArgument);
  CHECK_THROWS_AS(fit_da_learner(s.data, RidgeConfig{}, constant_propensity(0.0)), InvalidArgument);
  CHECK_THROWS_AS(fit_dr_learner(s.data, RidgeConfig{}, PropensityFunction{}), ConfigError);
  const auto one_arm = s.data.subset(s.data.arm_indices(1));
  CHECK_THROWS_AS(fit_t_learner(one_arm, RidgeConfig{}), DataError);
}
