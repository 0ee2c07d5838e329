#include "cfcv/propensity.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace cfcv;

TEST_CASE("clipped sigmoid examples") {
  CHECK(clipped_sigmoid(0.0, 0.01) == 0.5);
  CHECK(clipped_sigmoid(50.0, 0.01) == 0.99);
  CHECK(clipped_sigmoid(-50.0, 0.01) == 0.01);
  CHECK(std::abs(clipped_sigmoid(std::log(3.0), 0.01) - 0.75) < 1e-15);
}

TEST_CASE("zero coefficients predict one half") {
  PropensityModel m;
  m.coefficients = Vector::Zero(3);
  const Vector p = m.predict(Matrix::Random(4, 3));
  CHECK(p.isApproxToConstant(0.5));
  m.intercept = 100.0;
  CHECK(m.predict(Matrix::Zero(1, 3))[0] == 0.99);
}

TEST_CASE("coin-flip treatment gives flat propensity") {
  std::mt19937_64 rng(1);
  const Matrix x = testing::gaussian_matrix(10000, 3, rng);
  std::bernoulli_distribution coin(0.5);
  IntVector t(10000);
  for (auto& v : t) v = coin(rng) ? 1 : 0;
  const auto model = fit_logistic(x, t);
  const Vector p = model.predict(x);
  CHECK((p.array() - 0.5).abs().mean() < 0.02);
  CHECK(model.gradient_norm < 1e-6);
}

TEST_CASE("separable data keeps finite coefficients and minimizes the objective") {
  Matrix x(20, 1);
  IntVector t(20);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = i - 9.5;
    t[i] = i >= 10 ? 1 : 0;
  }
  const auto model = fit_logistic(x, t);
  CHECK(model.coefficients.allFinite());
  CHECK(std::isfinite(model.intercept));
  CHECK(model.gradient_norm < 1e-6);
  const double best = logistic_objective(x, t, model.coefficients, model.intercept, 1.0);
  double grid_min = std::numeric_limits<double>::infinity();
  for (double b = -5.0; b <= 5.0; b += 0.05) {
    for (double c = -2.0; c <= 2.0; c += 0.05) {
      grid_min = std::min(grid_min, logistic_objective(x, t, Vector::Constant(1, b), c, 1.0));
    }
  }
  CHECK(best <= grid_min + 1e-9);
}

TEST_CASE("objective gradient matches finite differences") {
  std::mt19937_64 rng(2);
  const Matrix x = testing::gaussian_matrix(30, 3, rng);
  IntVector t(30);
  std::bernoulli_distribution coin(0.4);
  for (auto& v : t) v = coin(rng) ? 1 : 0;
  const Vector beta = testing::gaussian_vector(3, rng);
  const double b0 = 0.3;
  Vector grad;
  logistic_objective(x, t, beta, b0, 0.7, &grad);
  REQUIRE(grad.size() == 4);
  const double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    Vector up = beta, down = beta;
    up[j] += h;
    down[j] -= h;
    const double fd = (logistic_objective(x, t, up, b0, 0.7) - logistic_objective(x, t, down, b0, 0.7)) / (2 * h);
    CHECK(std::abs(fd - grad[j]) < 1e-5 * std::max(1.0, std::abs(fd)));
  }
  const double fd0 = (logistic_objective(x, t, beta, b0 + h, 0.7) - logistic_objective(x, t, beta, b0 - h, 0.7)) / (2 * h);
  CHECK(std::abs(fd0 - grad[3]) < 1e-5 * std::max(1.0, std::abs(fd0)));
}

TEST_CASE("recovers the synthetic propensity") {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.d = 10;
  cfg.seed = 3;
  const auto s = generate_synthetic(cfg);
  LogisticOptions opts;
  opts.clip_eps = 1e-6;
  const auto model = fit_logistic(s.data.features(), s.data.treatments(), opts);
  const Vector p = model.predict(s.data.features());
  CHECK((p - *s.truth.propensity).cwiseAbs().mean() < 0.02);
  CHECK(p.minCoeff() >= 1e-6);
}

TEST_CASE("predictions stay inside the clip band") {
  const auto s = testing::small_sample(500, 4, 5.0);
  LogisticOptions opts;
  opts.clip_eps = 0.05;
  opts.l2_penalty = 1e-6;
  const Vector p = predict_propensity(fit_logistic(s.data.features(), s.data.treatments(), opts), s.data.features());
  CHECK(p.minCoeff() >= 0.05);
  CHECK(p.maxCoeff() <= 0.95);
}

TEST_CASE("propensity is monotone along its coefficient direction") {
  const auto s = testing::small_sample(2000, 5, 2.0);
  const auto model = fit_logistic(s.data.features(), s.data.treatments());
  const Vector dir = model.coefficients.normalized();
  Matrix probe(21, dir.size());
  for (int k = 0; k < 21; ++k) probe.row(k) = (k - 10) * 0.2 * dir.transpose();
  const Vector p = model.predict(probe);
  for (int k = 1; k < 21; ++k) CHECK(p[k] >= p[k - 1]);
}

TEST_CASE("clip_propensity wraps external scores") {
  const PropensityFunction raw = [](const Matrix& x) { return Vector::Constant(x.rows(), 1.0); };
  const auto clipped = clip_propensity(raw, 0.01);
  CHECK(clipped(Matrix::Zero(2, 1))[0] == 0.99);
}

TEST_CASE("iteration cap raises a convergence error") {
  const auto s = testing::small_sample(500, 6);
  LogisticOptions opts;
  opts.max_iterations = 1;
  opts.tolerance = 1e-14;
  try {
    fit_logistic(s.data.features(), s.data.treatments(), opts);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.gradient_norm() > 0.0);
  }
}
