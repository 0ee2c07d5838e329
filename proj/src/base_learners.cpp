#include "cfcv/base_learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cfcv {

void RidgeConfig::validate() const {
  if (!(l2_penalty >= 0.0) || !std::isfinite(l2_penalty)) throw ConfigError("ridge l2_penalty must be >= 0");
}

void TreeConfig::validate() const {
  if (max_depth < 1) throw ConfigError("tree max_depth must be >= 1");
  if (min_samples_leaf < 1) throw ConfigError("tree min_samples_leaf must be >= 1");
}

void GbrConfig::validate() const {
  if (n_estimators < 1) throw ConfigError("gbr n_estimators must be >= 1");
  if (max_depth < 1) throw ConfigError("gbr max_depth must be >= 1");
  if (min_samples_leaf < 1) throw ConfigError("gbr min_samples_leaf must be >= 1");
  if (!(learning_rate >= 0.0 && learning_rate <= 1.0)) throw ConfigError("gbr learning_rate must lie in [0, 1]");
  if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("gbr subsample must lie in (0, 1]");
}

void validate(const BaseLearnerConfig& cfg) {
  std::visit([](const auto& c) { c.validate(); }, cfg);
}

std::string learner_kind(const BaseLearnerConfig& cfg) {
  switch (cfg.index()) {
    case 0:
      return "ridge";
    case 1:
      return "tree";
    default:
      return "gbr";
  }
}

namespace {

Vector resolve_weights(const Matrix& x, const Vector& y, const std::optional<Vector>& weights) {
  if (x.rows() != y.size()) throw InvalidArgument("feature rows and target length differ");
  if (x.rows() < 1) throw InvalidArgument("cannot fit on an empty dataset");
  if (!x.allFinite() || !y.allFinite()) throw InvalidArgument("non-finite training data");
  if (!weights) return Vector::Ones(y.size());
  if (weights->size() != y.size()) throw InvalidArgument("weight length differs from target length");
  for (double w : *weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("sample weights must be finite and >= 0");
  }
  if (!(weights->sum() > 0.0)) throw InvalidArgument("sample weights must not all be zero");
  return *weights;
}

// Greedy CART on presorted feature orders. The root order of every feature is
// computed once per design matrix and reused by all trees of a boosted model.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const TreeConfig& cfg) : x_(x), cfg_(cfg) {
    const auto n = static_cast<int>(x.rows());
    order_.resize(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      auto& ord = order_[static_cast<std::size_t>(j)];
      ord.resize(static_cast<std::size_t>(n));
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) { return x(a, j) < x(b, j); });
    }
    go_left_.assign(static_cast<std::size_t>(n), 0);
  }

  // Rows with zero weight are ignored entirely.
  RegressionTree build(const Vector& y, const Vector& w) {
    y_ = &y;
    w_ = &w;
    tree_ = RegressionTree{};
    tree_.n_features = x_.cols();
    std::vector<std::vector<int>> lists(order_.size());
    for (std::size_t j = 0; j < order_.size(); ++j) {
      lists[j].reserve(order_[j].size());
      for (int r : order_[j]) {
        if (w[r] > 0.0) lists[j].push_back(r);
      }
    }
    grow(std::move(lists), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::vector<int>> lists, int depth) {
    const auto& rows = lists.front();
    const Vector& y = *y_;
    const Vector& w = *w_;
    double wsum = 0.0, ysum = 0.0, y2sum = 0.0;
    for (int r : rows) {
      wsum += w[r];
      ysum += w[r] * y[r];
      y2sum += w[r] * y[r] * y[r];
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes[static_cast<std::size_t>(id)].value = ysum / wsum;

    const double min_leaf = cfg_.min_samples_leaf;
    if (depth >= cfg_.max_depth || wsum < 2.0 * min_leaf) return id;

    const double parent_score = ysum * ysum / wsum;
    const double tol = 1e-12 * std::max(y2sum, 1e-300);
    double best_gain = tol;
    int best_feature = -1;
    double best_threshold = 0.0;

    for (std::size_t j = 0; j < lists.size(); ++j) {
      const auto& ord = lists[j];
      const auto col = static_cast<Eigen::Index>(j);
      double wl = 0.0, sl = 0.0;
      for (std::size_t k = 0; k + 1 < ord.size(); ++k) {
        const int r = ord[k];
        wl += w[r];
        sl += w[r] * y[r];
        const double xv = x_(r, col);
        const double xnext = x_(ord[k + 1], col);
        if (!(xv < xnext)) continue;
        const double wr = wsum - wl;
        if (wl < min_leaf || wr < min_leaf) continue;
        const double sr = ysum - sl;
        const double gain = sl * sl / wl + sr * sr / wr - parent_score;
        if (gain > best_gain + (best_feature < 0 ? 0.0 : tol)) {
          best_gain = gain;
          best_feature = static_cast<int>(j);
          double mid = 0.5 * (xv + xnext);
          if (!(mid < xnext)) mid = xv;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;

    for (int r : rows) {
      go_left_[static_cast<std::size_t>(r)] = x_(r, best_feature) <= best_threshold ? 1 : 0;
    }
    std::vector<std::vector<int>> left(lists.size()), right(lists.size());
    for (std::size_t j = 0; j < lists.size(); ++j) {
      for (int r : lists[j]) (go_left_[static_cast<std::size_t>(r)] ? left[j] : right[j]).push_back(r);
    }
    lists.clear();
    lists.shrink_to_fit();

    const int l = grow(std::move(left), depth + 1);
    const int rr = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = rr;
    return id;
  }

  const Matrix& x_;
  TreeConfig cfg_;
  std::vector<std::vector<int>> order_;
  std::vector<char> go_left_;
  const Vector* y_ = nullptr;
  const Vector* w_ = nullptr;
  RegressionTree tree_;
};

double weighted_mse(const Vector& y, const Vector& f, const Vector& w) {
  return (w.array() * (y - f).array().square()).sum() / w.sum();
}

Vector predict_tree(const RegressionTree& tree, const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = tree.predict_row(x.row(i));
  return out;
}

}  // namespace

double RegressionTree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int k = 0;
  for (;;) {
    const auto& node = nodes[static_cast<std::size_t>(k)];
    if (node.is_leaf()) return node.value;
    k = x[node.feature] <= node.threshold ? node.left : node.right;
  }
}

int RegressionTree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto& node = nodes[k];
    deepest = std::max(deepest, level[k]);
    if (!node.is_leaf()) {
      level[static_cast<std::size_t>(node.left)] = level[k] + 1;
      level[static_cast<std::size_t>(node.right)] = level[k] + 1;
    }
  }
  return deepest;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

Vector FittedRegressor::predict(const Matrix& x) const {
  if (x.cols() != n_features()) {
    throw InvalidArgument("predict: expected " + std::to_string(n_features()) + " features, got " +
                          std::to_string(x.cols()));
  }
  return std::visit(
      [&](const auto& m) -> Vector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          return (x * m.coefficients).array() + m.intercept;
        } else if constexpr (std::is_same_v<T, RegressionTree>) {
          return predict_tree(m, x);
        } else {
          Vector out = Vector::Constant(x.rows(), m.initial);
          for (const auto& tree : m.trees) out += m.learning_rate * predict_tree(tree, x);
          return out;
        }
      },
      state_);
}

Eigen::Index FittedRegressor::n_features() const {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          return m.coefficients.size();
        } else if constexpr (std::is_same_v<T, RegressionTree>) {
          return m.n_features;
        } else {
          return m.trees.empty() ? 0 : m.trees.front().n_features;
        }
      },
      state_);
}

FittedRegressor fit_ridge(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                          const RidgeConfig& cfg) {
  cfg.validate();
  const Vector w = resolve_weights(x, y, weights);
  const double wsum = w.sum();
  Eigen::RowVectorXd x_mean = Eigen::RowVectorXd::Zero(x.cols());
  double y_mean = 0.0;
  if (cfg.fit_intercept) {
    x_mean = (w.transpose() * x) / wsum;
    y_mean = w.dot(y) / wsum;
  }
  const Matrix xc = x.rowwise() - x_mean;
  const Vector yc = y.array() - y_mean;
  Matrix gram = xc.transpose() * w.asDiagonal() * xc;
  gram.diagonal().array() += cfg.l2_penalty;
  const Vector rhs = xc.transpose() * (w.array() * yc.array()).matrix();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) {
    throw NumericError("ridge normal equations are singular; increase l2_penalty");
  }
  LinearModel model;
  model.coefficients = llt.solve(rhs);
  model.intercept = cfg.fit_intercept ? y_mean - x_mean.dot(model.coefficients) : 0.0;
  if (!model.coefficients.allFinite()) throw NumericError("ridge solution is not finite");
  return FittedRegressor(std::move(model));
}

FittedRegressor fit_tree(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                         const TreeConfig& cfg) {
  cfg.validate();
  const Vector w = resolve_weights(x, y, weights);
  TreeBuilder builder(x, cfg);
  return FittedRegressor(builder.build(y, w));
}

FittedRegressor fit_gbr(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                        const GbrConfig& cfg) {
  cfg.validate();
  const Vector w = resolve_weights(x, y, weights);
  const auto n = x.rows();

  BoostedTrees model;
  model.initial = w.dot(y) / w.sum();
  model.learning_rate = cfg.learning_rate;
  model.trees.reserve(static_cast<std::size_t>(cfg.n_estimators));

  Vector fitted = Vector::Constant(n, model.initial);
  model.stage_losses.push_back(weighted_mse(y, fitted, w));

  std::vector<int> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] > 0.0) active.push_back(static_cast<int>(i));
  }
  const auto take = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.subsample * static_cast<double>(active.size()))));

  TreeBuilder builder(x, TreeConfig{cfg.max_depth, cfg.min_samples_leaf});
  std::mt19937_64 rng(cfg.seed);
  Vector stage_weights = w;
  for (int stage = 0; stage < cfg.n_estimators; ++stage) {
    const Vector residual = y - fitted;
    if (take < active.size()) {
      std::shuffle(active.begin(), active.end(), rng);
      stage_weights.setZero();
      for (std::size_t k = 0; k < take; ++k) stage_weights[active[k]] = w[active[k]];
    }
    RegressionTree tree = builder.build(residual, stage_weights);
    fitted += cfg.learning_rate * predict_tree(tree, x);
    model.trees.push_back(std::move(tree));
    model.stage_losses.push_back(weighted_mse(y, fitted, w));
  }
  return FittedRegressor(std::move(model));
}

FittedRegressor fit_regressor(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                              const BaseLearnerConfig& cfg) {
  return std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, RidgeConfig>) {
          return fit_ridge(x, y, weights, c);
        } else if constexpr (std::is_same_v<T, TreeConfig>) {
          return fit_tree(x, y, weights, c);
        } else {
          return fit_gbr(x, y, weights, c);
        }
      },
      cfg);
}

}  // namespace cfcv
