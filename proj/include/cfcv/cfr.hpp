#pragma once

#include "cfcv/common.hpp"
#include "cfcv/dataset.hpp"
#include "cfcv/sinkhorn.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cfcv {

// How the factual loss is weighted.
//  Balanced: w'_t(x) = w_t(x)/2 * (t/pi1 + (1-t)/pi0), the variance-targeting
//            weights used by the CF-CV regression function.
//  Uniform:  w_t(x) = 1, i.e. plain arm-rebalanced CFR (used for plug-in validation).
enum class CfrWeighting { Balanced, Uniform };

std::string to_string(CfrWeighting weighting);
CfrWeighting cfr_weighting_from_string(const std::string& name);

struct CfrConfig {
  int rep_layers = 2;
  int rep_dim = 50;
  int head_layers = 2;
  int head_dim = 50;
  double alpha = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 256;
  double dropout = 0.2;
  int epochs = 300;
  // Early stopping patience on the monitored mu-risk; 0 disables it.
  int patience = 30;
  // Entropic regularization, relative to the mean pairwise cost of each call.
  double sinkhorn_reg = 0.1;
  int sinkhorn_iters = 50;
  // Compute the IPM over the whole training set instead of per minibatch.
  bool ipm_full_batch = false;
  CfrWeighting weighting = CfrWeighting::Balanced;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const CfrConfig&) const = default;
};

struct BalancingWeights {
  Vector w;        // w_{t_i}(x_i)
  Vector w_prime;  // per-unit weight of the factual loss
};

// w_1(e) = (1-e)/e and w_0(e) = e/(1-e).
double balancing_weight(double propensity, int t);

BalancingWeights balancing_weights(const Vector& propensity, const IntVector& treatments);

struct CfrEpochRecord {
  int epoch = 0;
  double weighted_loss = 0.0;
  double ipm = 0.0;
  double mu_risk = 0.0;
};

// Representation network Phi followed by one hypothesis head per arm; all
// parameters live in one flat vector. ELU activations on every hidden layer;
// the head output layer is linear.
class CfrNetwork {
 public:
  CfrNetwork(Eigen::Index input_dim, const CfrConfig& cfg);

  Vector& parameters() noexcept { return params_; }
  const Vector& parameters() const noexcept { return params_; }
  Eigen::Index input_dim() const noexcept { return input_dim_; }
  Eigen::Index representation_dim() const noexcept;

  void initialize(std::mt19937_64& rng);

  // Rows of x mapped to rows of Phi(x).
  Matrix representation(const Matrix& x) const;
  // h(Phi(x), t) with dropout disabled.
  Vector predict(const Matrix& x, int t) const;

  struct BatchObjective {
    double loss = 0.0;
    double weighted_risk = 0.0;
    double ipm = 0.0;
    bool ipm_used = false;
    Vector gradient;
    Matrix plan;  // control rows x treated columns
  };

  struct BatchOptions {
    double alpha = 0.0;
    double sinkhorn_reg = 0.1;
    int sinkhorn_iters = 50;
    double dropout = 0.0;
    std::mt19937_64* dropout_rng = nullptr;  // null disables dropout
    const Matrix* fixed_plan = nullptr;      // freeze the transport plan
    bool compute_gradient = true;
  };

  // (1/b) sum_i w'_i (h(Phi(x_i), t_i) - y_i)^2 + alpha * Sinkhorn(Phi_0, Phi_1),
  // differentiated with the transport plan held fixed.
  BatchObjective objective(const Matrix& x, const IntVector& t, const Vector& y, const Vector& w_prime,
                           const BatchOptions& options) const;

 private:
  struct Dense {
    Eigen::Index in = 0;
    Eigen::Index out = 0;
    Eigen::Index weight_offset = 0;
    Eigen::Index bias_offset = 0;
  };

  Eigen::Map<const Matrix> weight(const Dense& layer) const;
  Eigen::Map<const Vector> bias(const Dense& layer) const;

  Eigen::Index input_dim_;
  std::vector<Dense> rep_;
  std::vector<Dense> heads_[2];
  Vector params_;

  friend struct CfrNetworkAccess;
};

struct CfrModel {
  CfrConfig config;
  CfrNetwork network;
  std::vector<CfrEpochRecord> history;
  int best_epoch = 0;

  Vector predict_f(const Matrix& x, int t) const;
};

// Trains on `data` (the validation fold in CF-CV). `propensity` supplies e(x)
// for the balancing weights; `monitor` is the data on which the per-epoch
// mu-risk and early stopping are evaluated (defaults to `data`). Throws
// NumericError when the loss becomes non-finite.
CfrModel train_cfr(const ObservationalDataset& data, const PropensityFunction& propensity, const CfrConfig& cfg,
                   const ObservationalDataset* monitor = nullptr);

Vector predict_f(const CfrModel& model, const Matrix& x, int t);

// Factual MSE (1/n) sum (y_i - f_{t_i}(x_i))^2.
double mu_risk(const Vector& f0, const Vector& f1, const ObservationalDataset& data);
double mu_risk(const CfrModel& model, const ObservationalDataset& data);

void write_history_csv(const std::string& path, const std::vector<CfrEpochRecord>& history);

struct CfrSearchSpace {
  std::vector<int> layers = {1, 2, 3};
  std::vector<int> dims = {20, 50, 100};
  double alpha_min = 0.01;
  double alpha_max = 100.0;
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  // Everything not searched (batch size, dropout, epochs, weighting, ...).
  CfrConfig base;

  void validate() const;
  // Layer count and width are drawn once and shared by Phi and the heads;
  // alpha and learning rate are log-uniform.
  CfrConfig sample(std::mt19937_64& rng) const;
  bool operator==(const CfrSearchSpace&) const = default;
};

struct CfrTrial {
  CfrConfig config;
  std::optional<double> heldout_mu_risk;  // empty when training diverged
  int best_epoch = 0;
};

struct CfrTuneResult {
  CfrConfig best;
  int best_trial = -1;
  std::vector<CfrTrial> trials;
};

// Seeded random search minimizing heldout mu-risk; ties go to the earlier trial.
CfrTuneResult tune_cfr(const ObservationalDataset& train_fold, const ObservationalDataset& heldout_fold,
                       const PropensityFunction& propensity, const CfrSearchSpace& space, int n_trials,
                       std::uint64_t seed);

}  // namespace cfcv
