#include "cfcv/oracles.hpp"

#include <doctest.h>

using namespace cfcv;

TEST_CASE("conditional variance closed form") {
  PointSetting s;
  s.e = 0.5;
  CHECK(dr_conditional_variance(s) == doctest::Approx(4.0));
  s.f0 = 0.5;
  s.f1 = 0.5;
  CHECK(dr_conditional_variance(s) == doctest::Approx(4.0 + 1.0));
  s.e = 0.2;
  s.f0 = s.f1 = 0.0;
  CHECK(dr_conditional_variance(s) == doctest::Approx(1.0 / 0.2 + 1.0 / 0.8));
}

TEST_CASE("DR labels are unbiased at a point and the offset control is not") {
  PointSetting s;
  s.e = 0.3;
  s.m0 = 1.0;
  s.m1 = 2.5;
  s.f0 = 0.2;
  s.f1 = 3.1;
  const auto est = oracle_dr_unbiasedness(s, 100000, 1);
  CHECK(est.target == doctest::Approx(1.5));
  CHECK(est.within(3.0));
  CHECK_FALSE(oracle_dr_unbiasedness(s, 100000, 1, 1.0).within(3.0));
}

TEST_CASE("arm covariance matches its closed form") {
  PointSetting s;
  s.e = 0.4;
  s.m0 = 0.0;
  s.m1 = 1.0;
  s.f0 = 0.5;
  s.f1 = 0.3;
  const auto est = oracle_arm_covariance(s, 200000, 2);
  CHECK(est.target == doctest::Approx(-(0.3 - 1.0) * (0.5 - 0.0)));
  CHECK(est.within(3.0));
}

TEST_CASE("nested variance oracle agrees with the closed form") {
  ToyProcess p;
  p.e = [](double) { return 0.5; };
  p.m0 = [](double x) { return x; };
  p.m1 = [](double x) { return x + 1.0; };
  p.f0 = p.m0;
  p.f1 = p.m1;
  const auto r = oracle_dr_variance(p, 200, 2000, 3);
  CHECK(r.closed_form == doctest::Approx(4.0));
  CHECK(r.relative_error() < 0.05);
}

TEST_CASE("decomposition oracle is centred for unbiased labels") {
  DgpConfig dgp;
  dgp.d = 3;
  const auto dr = oracle_decomposition(dgp, LabelRule::DR, 100, 2000, 4);
  CHECK(dr.within(3.0));
  const auto biased = oracle_decomposition(dgp, LabelRule::BiasedDR, 100, 2000, 4);
  CHECK_FALSE(biased.within(3.0));
}

TEST_CASE("oracle suite passes at reduced budgets") {
  OracleSuiteOptions opts;
  opts.identity_trials = 50;
  opts.weight_samples = 1000;
  opts.unbiasedness_settings = 3;
  opts.unbiasedness_draws = 20000;
  opts.variance_outer = 100;
  opts.variance_inner = 2000;
  opts.covariance_draws = 100000;
  opts.decomposition_replications = 2000;
  opts.decomposition_n = 100;
  const auto checks = run_oracle_suite(opts);
  CHECK(checks.size() == 11);
  for (const auto& c : checks) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
}
