#pragma once

#include "cfcv/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace cfcv {

struct RidgeConfig {
  double l2_penalty = 1.0;
  bool fit_intercept = true;

  void validate() const;
  bool operator==(const RidgeConfig&) const = default;
};

// min_samples_leaf is measured in total sample weight (a row of weight k counts
// as k rows), so integer weights and duplicated rows grow identical trees.
struct TreeConfig {
  int max_depth = 5;
  int min_samples_leaf = 5;

  void validate() const;
  bool operator==(const TreeConfig&) const = default;
};

struct GbrConfig {
  int n_estimators = 100;
  int max_depth = 3;
  int min_samples_leaf = 1;
  double learning_rate = 0.1;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GbrConfig&) const = default;
};

using BaseLearnerConfig = std::variant<RidgeConfig, TreeConfig, GbrConfig>;

struct LinearModel {
  Vector coefficients;
  double intercept = 0.0;
};

// Flat array-of-nodes tree. Internal nodes route x[feature] <= threshold left.
struct RegressionTree {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    bool is_leaf() const noexcept { return feature < 0; }
  };
  std::vector<Node> nodes;
  Eigen::Index n_features = 0;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  int depth() const;
  std::size_t leaf_count() const;
};

struct BoostedTrees {
  double initial = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;
  // Weighted training MSE after F0 and after each stage (size n_estimators + 1).
  std::vector<double> stage_losses;
};

// A fitted regressor from any of the three learners.
class FittedRegressor {
 public:
  using State = std::variant<LinearModel, RegressionTree, BoostedTrees>;

  explicit FittedRegressor(State state) : state_(std::move(state)) {}

  Vector predict(const Matrix& x) const;
  Eigen::Index n_features() const;
  const State& state() const noexcept { return state_; }

 private:
  State state_;
};

// Weights, when given, must be non-negative with a positive total.
FittedRegressor fit_ridge(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                          const RidgeConfig& cfg);
FittedRegressor fit_tree(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                         const TreeConfig& cfg);
FittedRegressor fit_gbr(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                        const GbrConfig& cfg);

FittedRegressor fit_regressor(const Matrix& x, const Vector& y, const std::optional<Vector>& weights,
                              const BaseLearnerConfig& cfg);

void validate(const BaseLearnerConfig& cfg);
std::string learner_kind(const BaseLearnerConfig& cfg);

}  // namespace cfcv
