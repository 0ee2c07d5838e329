#pragma once

#include "cfcv/common.hpp"

namespace cfcv {

// L2-regularized logistic model of P(T = 1 | X). Predictions are clipped to
// [clip_eps, 1 - clip_eps] so that inverse-propensity weights stay finite.
struct PropensityModel {
  Vector coefficients;
  double intercept = 0.0;
  double clip_eps = 0.01;
  int iterations = 0;
  double gradient_norm = 0.0;

  Vector predict(const Matrix& x) const;
  PropensityFunction as_function() const;
};

struct LogisticOptions {
  double l2_penalty = 1.0;
  double clip_eps = 0.01;
  double tolerance = 1e-8;
  int max_iterations = 100;
};

// Minimizes sum_i logloss_i + (l2_penalty / 2) * ||coefficients||^2 with damped
// Newton steps from zero; the intercept is not penalized. Throws
// ConvergenceError with the final gradient norm when the cap is reached.
PropensityModel fit_logistic(const Matrix& x, const IntVector& treatments, const LogisticOptions& options = {});

// Penalized objective and its gradient (intercept last); exposed for tests.
double logistic_objective(const Matrix& x, const IntVector& treatments, const Vector& coefficients,
                          double intercept, double l2_penalty, Vector* gradient = nullptr);

Vector predict_propensity(const PropensityModel& model, const Matrix& x);

// sigmoid(logit) clipped symmetrically.
double clipped_sigmoid(double logit, double clip_eps);

// Clips externally supplied propensities (e.g. ground truth) to the same band.
PropensityFunction clip_propensity(PropensityFunction inner, double clip_eps);

}  // namespace cfcv
