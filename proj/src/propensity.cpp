#include "cfcv/propensity.hpp"

#include <algorithm>
#include <cmath>

namespace cfcv {

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

void check_clip(double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 0.5)) throw InvalidArgument("clip_eps must lie in (0, 0.5)");
}

}  // namespace

double clipped_sigmoid(double logit, double clip_eps) {
  return std::clamp(sigmoid(logit), clip_eps, 1.0 - clip_eps);
}

Vector PropensityModel::predict(const Matrix& x) const { return predict_propensity(*this, x); }

PropensityFunction PropensityModel::as_function() const {
  return [model = *this](const Matrix& x) { return predict_propensity(model, x); };
}

Vector predict_propensity(const PropensityModel& model, const Matrix& x) {
  if (x.cols() != model.coefficients.size()) {
    throw InvalidArgument("propensity model expects " + std::to_string(model.coefficients.size()) +
                          " features, got " + std::to_string(x.cols()));
  }
  check_clip(model.clip_eps);
  const Vector logits = (x * model.coefficients).array() + model.intercept;
  Vector e(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) e[i] = clipped_sigmoid(logits[i], model.clip_eps);
  return e;
}

PropensityFunction clip_propensity(PropensityFunction inner, double clip_eps) {
  check_clip(clip_eps);
  return [inner = std::move(inner), clip_eps](const Matrix& x) {
    Vector e = inner(x);
    return Vector(e.array().max(clip_eps).min(1.0 - clip_eps));
  };
}

double logistic_objective(const Matrix& x, const IntVector& treatments, const Vector& coefficients,
                          double intercept, double l2_penalty, Vector* gradient) {
  const Vector logits = (x * coefficients).array() + intercept;
  double loss = 0.5 * l2_penalty * coefficients.squaredNorm();
  Vector residual(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double z = logits[i];
    loss += softplus(z) - treatments[i] * z;
    residual[i] = sigmoid(z) - treatments[i];
  }
  if (gradient != nullptr) {
    gradient->resize(x.cols() + 1);
    gradient->head(x.cols()) = x.transpose() * residual + l2_penalty * coefficients;
    (*gradient)[x.cols()] = residual.sum();
  }
  return loss;
}

PropensityModel fit_logistic(const Matrix& x, const IntVector& treatments, const LogisticOptions& options) {
  if (x.rows() != treatments.size()) throw InvalidArgument("feature rows and treatment length differ");
  if (!(options.l2_penalty >= 0.0)) throw InvalidArgument("l2_penalty must be >= 0");
  check_clip(options.clip_eps);
  const auto treated = treatments.sum();
  if (treated == 0 || treated == treatments.size()) {
    throw DataError("propensity fit needs both treatment arms");
  }
  const auto d = x.cols();
  const auto n = x.rows();

  Vector beta = Vector::Zero(d);
  double intercept = 0.0;
  Vector grad;
  double loss = logistic_objective(x, treatments, beta, intercept, options.l2_penalty, &grad);

  Matrix augmented(n, d + 1);
  augmented.leftCols(d) = x;
  augmented.col(d).setOnes();

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (grad.norm() < options.tolerance) break;
    const Vector logits = (x * beta).array() + intercept;
    Vector curvature(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(logits[i]);
      curvature[i] = p * (1.0 - p);
    }
    Matrix hessian = augmented.transpose() * curvature.asDiagonal() * augmented;
    hessian.diagonal().head(d).array() += options.l2_penalty;
    // Tiny jitter keeps the solve defined when curvature collapses (near separation).
    hessian.diagonal().array() += 1e-12 * (1.0 + hessian.diagonal().cwiseAbs().maxCoeff());
    Vector step = hessian.ldlt().solve(grad);
    if (!step.allFinite()) step = grad;

    double scale = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand_beta = beta - scale * step.head(d);
      const double cand_intercept = intercept - scale * step[d];
      Vector cand_grad;
      const double cand_loss =
          logistic_objective(x, treatments, cand_beta, cand_intercept, options.l2_penalty, &cand_grad);
      // Near the optimum the decrease drops below the loss's rounding error;
      // fall back to requiring a smaller gradient there.
      const bool flat = std::abs(cand_loss - loss) <= 1e-12 * std::abs(loss);
      if (std::isfinite(cand_loss) && (cand_loss <= loss - 1e-4 * scale * grad.dot(step) ||
                                       (flat && cand_grad.norm() < grad.norm()))) {
        beta = cand_beta;
        intercept = cand_intercept;
        loss = cand_loss;
        grad = cand_grad;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      // Rounding floor reached: accept if already within the looser optimality band.
      if (grad.norm() < 1e-6) break;
      throw ConvergenceError("logistic regression line search failed", grad.norm());
    }
  }
  const double gnorm = grad.norm();
  if (!(gnorm < 1e-6) && iter >= options.max_iterations) {
    throw ConvergenceError("logistic regression did not converge within " +
                               std::to_string(options.max_iterations) + " iterations",
                           gnorm);
  }
  if (!beta.allFinite() || !std::isfinite(intercept)) throw ConvergenceError("logistic fit diverged", gnorm);

  PropensityModel model;
  model.coefficients = std::move(beta);
  model.intercept = intercept;
  model.clip_eps = options.clip_eps;
  model.iterations = iter;
  model.gradient_norm = gnorm;
  return model;
}

}  // namespace cfcv
