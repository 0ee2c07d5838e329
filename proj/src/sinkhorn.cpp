#include "cfcv/sinkhorn.hpp"

#include <algorithm>
#include <cmath>

namespace cfcv {

namespace {

// True when (b, a) should be solved instead of (a, b).
bool swap_order(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() > b.rows();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) != b(i, j)) return a(i, j) > b(i, j);
    }
  }
  return false;
}

// Log-domain Sinkhorn state. Potentials are kept in cost units so they can be
// carried across regularization levels.
class LogSinkhorn {
 public:
  explicit LogSinkhorn(const Matrix& cost)
      : cost_(cost.array()),
        a_(1.0 / static_cast<double>(cost.rows())),
        b_(1.0 / static_cast<double>(cost.cols())),
        f_(Eigen::ArrayXd::Zero(cost.rows())),
        g_(Eigen::ArrayXd::Zero(cost.cols())),
        plan_(cost.rows(), cost.cols()) {}

  // Row then column update at regularization eps; returns the L1 violation of
  // both marginals.
  double step(double eps) {
    // f_i = eps log a_i - eps LSE_j((g_j - C_ij) / eps)
    Eigen::ArrayXXd z = ((-cost_).rowwise() + g_.transpose()) / eps;
    const Eigen::ArrayXd row_max = z.rowwise().maxCoeff();
    f_ = eps * (std::log(a_) - (row_max + (z.colwise() - row_max).exp().rowwise().sum().log()));
    z = ((-cost_).colwise() + f_) / eps;
    const Eigen::ArrayXd col_max = z.colwise().maxCoeff().transpose();
    g_ = eps * (std::log(b_) - (col_max + (z.rowwise() - col_max.transpose()).exp().colwise().sum().log().transpose()));
    return refresh(eps);
  }

  // One damped Newton step on the dual; false when no damping level lowers
  // the violation.
  bool newton(double eps, double& violation) {
    const auto m = plan_.rows();
    const auto l = plan_.cols();
    Vector grad(m + l);
    grad.head(m) = (a_ - plan_.rowwise().sum()).matrix();
    grad.tail(l) = (b_ - plan_.colwise().sum().transpose()).matrix();
    Matrix h = Matrix::Zero(m + l, m + l);
    h.topLeftCorner(m, m).diagonal() = plan_.rowwise().sum().matrix();
    h.bottomRightCorner(l, l).diagonal() = plan_.colwise().sum().transpose().matrix();
    h.topRightCorner(m, l) = plan_.matrix();
    h.bottomLeftCorner(l, m) = plan_.matrix().transpose();
    // The dual is invariant to (f + c, g - c); the ridge pins that direction.
    h.diagonal().array() += 1e-12 * h.diagonal().maxCoeff();
    const Vector delta = eps * h.ldlt().solve(grad);
    if (!delta.allFinite()) return false;

    const Eigen::ArrayXd f0 = f_, g0 = g_;
    for (double t = 1.0; t > 1e-6; t *= 0.5) {
      f_ = f0 + t * delta.head(m).array();
      g_ = g0 + t * delta.tail(l).array();
      const double v = refresh(eps);
      if (std::isfinite(v) && v < violation) {
        violation = v;
        return true;
      }
    }
    f_ = f0;
    g_ = g0;
    refresh(eps);
    return false;
  }

  const Eigen::ArrayXXd& plan() const { return plan_; }

 private:
  double refresh(double eps) {
    plan_ = ((((-cost_).colwise() + f_).rowwise() + g_.transpose()) / eps).exp();
    return (plan_.rowwise().sum() - a_).abs().sum() + (plan_.colwise().sum() - b_).abs().sum();
  }

  Eigen::ArrayXXd cost_;
  double a_;
  double b_;
  Eigen::ArrayXd f_;
  Eigen::ArrayXd g_;
  Eigen::ArrayXXd plan_;
};

void check_cost(const Matrix& cost, double reg, int max_iters) {
  if (cost.rows() < 1 || cost.cols() < 1) throw InvalidArgument("sinkhorn needs non-empty point clouds");
  if (!(reg > 0.0) || !std::isfinite(reg)) throw InvalidArgument("sinkhorn regularization must be > 0");
  if (max_iters < 1) throw InvalidArgument("sinkhorn needs at least one iteration");
  if (!cost.allFinite()) throw InvalidArgument("sinkhorn cost contains non-finite entries");
}

SinkhornResult finish(const LogSinkhorn& state, const Matrix& cost, double violation, int iterations) {
  const auto& plan = state.plan();
  if (!plan.allFinite()) throw NumericError("sinkhorn scaling produced non-finite values");
  SinkhornResult result;
  result.plan = plan.matrix();
  result.cost = (plan * cost.array()).sum();
  result.marginal_violation = violation;
  result.iterations = iterations;
  return result;
}

// Largest problem (rows + columns) for which the dense Newton polish is used.
constexpr Eigen::Index kNewtonMaxSize = 400;

}  // namespace

Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("point clouds have different dimensions");
  Matrix c(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    c.col(j) = (a.rowwise() - b.row(j)).rowwise().squaredNorm();
  }
  return c;
}

SinkhornResult sinkhorn_from_cost(const Matrix& cost, double reg, int max_iters, double tolerance) {
  check_cost(cost, reg, max_iters);
  LogSinkhorn state(cost);
  double violation = 0.0;
  int it = 0;
  while (it < max_iters) {
    violation = state.step(reg);
    ++it;
    if (violation < tolerance) break;
  }
  return finish(state, cost, violation, it);
}

SinkhornResult sinkhorn_annealed(const Matrix& cost, double reg, int max_iters, double tolerance) {
  check_cost(cost, reg, max_iters);
  LogSinkhorn state(cost);
  constexpr double kShrink = 0.5;
  constexpr double kStageTolerance = 1e-3;
  const bool polish = cost.rows() + cost.cols() <= kNewtonMaxSize;
  double eps = std::max(reg, cost.maxCoeff());
  double violation = 0.0;
  int it = 0;
  while (it < max_iters) {
    const bool last = eps <= reg;
    if (last && polish && violation < kStageTolerance && it > 0) {
      if (!state.newton(eps, violation)) violation = state.step(eps);
    } else {
      violation = state.step(eps);
    }
    ++it;
    if (violation < (last ? tolerance : std::max(tolerance, kStageTolerance))) {
      if (last) break;
      eps = std::max(reg, eps * kShrink);
      violation = state.step(eps);
      ++it;
    }
  }
  // A budget that ran out before the final level still reports a plan at reg.
  if (eps > reg) violation = state.step(reg);
  return finish(state, cost, violation, it);
}

SinkhornResult sinkhorn(const Matrix& a, const Matrix& b, double reg, int max_iters, double tolerance) {
  if (a.rows() < 1 || b.rows() < 1) throw InvalidArgument("sinkhorn needs non-empty point clouds");
  if (!a.allFinite() || !b.allFinite()) throw InvalidArgument("sinkhorn inputs must be finite");
  if (swap_order(a, b)) {
    SinkhornResult r = sinkhorn_annealed(squared_euclidean_cost(b, a), reg, max_iters, tolerance);
    r.plan.transposeInPlace();
    return r;
  }
  return sinkhorn_annealed(squared_euclidean_cost(a, b), reg, max_iters, tolerance);
}

double sinkhorn_distance(const Matrix& a, const Matrix& b, double reg, int max_iters) {
  return sinkhorn(a, b, reg, max_iters).cost;
}

}  // namespace cfcv
