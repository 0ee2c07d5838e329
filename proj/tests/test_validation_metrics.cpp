#include "cfcv/validation_metrics.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace cfcv;

namespace {

ObservationalDataset five_units() {
  Matrix x(5, 1);
  x << 0, 1, 2, 3, 4;
  IntVector t(5);
  t << 1, 0, 1, 0, 1;
  Vector y(5);
  y << 3, 1, 4, 1, 5;
  return {x, t, y};
}

}  // namespace

TEST_CASE("IPW pseudo-label examples") {
  CHECK(ipw_tau(1, 2.0, 0.5) == 4.0);
  CHECK(ipw_tau(0, 2.0, 0.5) == -4.0);
  CHECK(std::abs(ipw_tau(1, 1.0, 0.2) - 5.0) < 1e-12);
}

TEST_CASE("DR pseudo-label examples") {
  CHECK(dr_tau(1, 3.0, 0.5, 1.0, 2.0) == 3.0);
  CHECK(dr_tau(0, 1.0, 0.5, 1.0, 2.0) == 1.0);
  CHECK(std::abs(dr_tau(0, 0.0, 0.25, 1.0, 2.0) - (1.0 + 1.0 / 0.75)) < 1e-12);
  CHECK(plug_in_tau_pair(1.0, 2.5) == 1.5);
}

TEST_CASE("DR reduces to IPW with zero outcome models") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int k = 0; k < 100; ++k) {
    const double e = u(rng), y = u(rng) * 10 - 5;
    for (int t : {0, 1}) CHECK(std::abs(dr_tau(t, y, e, 0.0, 0.0) - ipw_tau(t, y, e)) < 1e-12);
  }
}

TEST_CASE("performance estimator and tau-risk") {
  Vector tilde(2), hat(2);
  tilde << 1, 3;
  hat << 0, 1;
  CHECK(performance_estimator(tilde, hat) == 2.5);

  Matrix x = Matrix::Zero(1, 1);
  IntVector t = IntVector::Ones(1);
  Vector y = Vector::Constant(1, 3.0);
  ObservationalDataset one(x, t, y);
  CHECK(tau_risk(one, Vector::Constant(1, 4.0), Vector::Constant(1, 1.0), Vector::Constant(1, 0.5)) == 0.0);
  CHECK(tau_risk(one, Vector::Constant(1, 0.0), Vector::Constant(1, 1.0), Vector::Constant(1, 0.5)) == 4.0);
}

TEST_CASE("selection breaks ties by id") {
  CHECK(select_model({{"b", 1.0}, {"a", 1.0}, {"c", 2.0}}) == "a");
  CHECK(select_model({{"b", 0.5}, {"a", 1.0}}) == "b");
  CHECK_THROWS_AS(select_model(std::map<std::string, double>{}), InvalidArgument);
}

TEST_CASE("scores match a brute-force computation") {
  const auto val = five_units();
  MetricArtifacts a;
  a.propensity = Vector::Constant(5, 0.4);
  a.dr_f0 = Vector::LinSpaced(5, 0.0, 1.0);
  a.dr_f1 = Vector::LinSpaced(5, 2.0, 4.0);
  a.plug_in_f0 = Vector::Zero(5);
  a.plug_in_f1 = Vector::Constant(5, 2.0);
  a.m_hat = Vector::Constant(5, 2.0);
  a.tau_true = Vector::Constant(5, 2.0);
  const std::map<std::string, Vector> preds = {
      {"flat", Vector::Constant(5, 2.0)}, {"ramp", Vector::LinSpaced(5, 0.0, 4.0)}, {"zero", Vector::Zero(5)}};

  for (Metric metric : {Metric::IPW, Metric::PlugIn, Metric::CFCV, Metric::TrueRisk, Metric::TauRisk}) {
    const auto score = score_predictions(metric, preds, val, a);
    std::map<std::string, double> expected;
    for (const auto& [id, p] : preds) {
      double sum = 0.0;
      for (int i = 0; i < 5; ++i) {
        const int t = val.treatments()[i];
        const double y = val.outcomes()[i];
        double r = 0.0;
        switch (metric) {
          case Metric::IPW: r = (t ? y / 0.4 : -y / 0.6) - p[i]; break;
          case Metric::PlugIn: r = 2.0 - p[i]; break;
          case Metric::CFCV: {
            const double f0 = (*a.dr_f0)[i], f1 = (*a.dr_f1)[i];
            const double label = (t - 0.4) / (0.4 * 0.6) * (y - (t ? f1 : f0)) + f1 - f0;
            r = label - p[i];
            break;
          }
          case Metric::TrueRisk: r = 2.0 - p[i]; break;
          case Metric::TauRisk: r = (y - 2.0) - (t - 0.4) * p[i]; break;
        }
        sum += r * r;
      }
      expected[id] = sum / 5.0;
    }
    INFO(to_string(metric));
    for (const auto& [id, v] : expected) CHECK(score.scores.at(id) == doctest::Approx(v).epsilon(1e-12));
    auto best = expected.begin();
    for (auto it = expected.begin(); it != expected.end(); ++it)
      if (it->second < best->second) best = it;
    CHECK(score.selected == best->first);
  }
}

TEST_CASE("missing artifacts are configuration errors") {
  const auto val = five_units();
  MetricArtifacts empty;
  const std::map<std::string, Vector> preds = {{"x", Vector::Zero(5)}};
  for (Metric m : {Metric::IPW, Metric::PlugIn, Metric::CFCV, Metric::TrueRisk, Metric::TauRisk}) {
    CHECK_THROWS_AS(score_predictions(m, preds, val, empty), ConfigError);
  }
  MetricArtifacts wrong;
  wrong.propensity = Vector::Constant(3, 0.5);
  CHECK_THROWS(score_predictions(Metric::IPW, preds, val, wrong));
}

TEST_CASE("metric names round trip") {
  for (Metric m : {Metric::IPW, Metric::PlugIn, Metric::CFCV, Metric::TrueRisk, Metric::TauRisk}) {
    CHECK(metric_from_string(to_string(m)) == m);
  }
  CHECK(to_string(Metric::CFCV) == "cf-cv");
  CHECK_THROWS_AS(metric_from_string("mse"), ConfigError);
}

TEST_CASE("decomposition identity holds") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const Vector tau = testing::gaussian_vector(100, rng);
    const Vector tilde = testing::gaussian_vector(100, rng);
    const Vector hat = testing::gaussian_vector(100, rng);
    const auto d = decompose(tau, tilde, hat);
    CHECK(std::abs(d.residual) < 1e-10);
    CHECK(d.estimate == doctest::Approx(performance_estimator(tilde, hat)));
  }
  const Vector tau = Vector::Constant(3, 1.0);
  CHECK(decompose(tau, tau, tau).estimate == 0.0);
}

TEST_CASE("CF-CV runs end to end with a fixed CFR config") {
  const auto s = testing::small_sample(200, 3);
  CfrSelectionSpec spec;
  spec.n_trials = 0;
  spec.fixed.epochs = 10;
  spec.fixed.rep_dim = 10;
  spec.fixed.head_dim = 10;
  const PropensityFunction e = [](const Matrix& x) { return Vector::Constant(x.rows(), 0.5); };
  const auto candidates = std::vector<CatePredictor>{fit_t_learner(s.data, RidgeConfig{}, "T-ridge"),
                                                     fit_s_learner(s.data, RidgeConfig{}, "S-ridge")};
  const auto result = run_cfcv(s.data, candidates, e, spec);
  CHECK(result.score.scores.size() == 2);
  CHECK(result.tau_tilde.size() == 200);
  CHECK(result.outcomes.config.weighting == CfrWeighting::Balanced);
  CHECK_FALSE(result.outcomes.tuning.has_value());
  const auto again = run_cfcv(s.data, candidates, e, spec);
  CHECK(again.score.scores == result.score.scores);
}

TEST_CASE("CFR selection spec tunes then refits") {
  const auto s = testing::small_sample(200, 4);
  CfrSelectionSpec spec;
  spec.n_trials = 2;
  spec.fixed.epochs = 5;
  spec.fixed.patience = 0;
  CfrSearchSpace space;
  space.layers = {1};
  space.dims = {8};
  spec.search = space;
  const PropensityFunction e = [](const Matrix& x) { return Vector::Constant(x.rows(), 0.5); };
  const auto out = fit_cfr_outcomes(s.data, e, spec, CfrWeighting::Uniform);
  REQUIRE(out.tuning.has_value());
  CHECK(out.tuning->trials.size() == 2);
  CHECK(out.config.weighting == CfrWeighting::Uniform);
  CHECK(out.config.rep_dim == 8);
  CHECK(out.config.patience == 0);
  CHECK(out.f0.size() == 200);

  spec.search.reset();
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("outcome-mean model is deterministic") {
  const auto s = testing::small_sample(150, 5);
  const Vector a = fit_outcome_mean(s.data, 7);
  CHECK(a == fit_outcome_mean(s.data, 7));
  CHECK(a.allFinite());
}
