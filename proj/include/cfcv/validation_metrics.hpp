#pragma once

#include "cfcv/cfr.hpp"
#include "cfcv/common.hpp"
#include "cfcv/dataset.hpp"
#include "cfcv/meta_learners.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cfcv {

// (T/e) Y - ((1-T)/(1-e)) Y.
double ipw_tau(int t, double y, double e);
Vector ipw_tau(const IntVector& t, const Vector& y, const Vector& e);

// ((T - e) / (e(1-e))) (Y - f_T) + f1 - f0.
double dr_tau(int t, double y, double e, double f0, double f1);
Vector dr_tau(const IntVector& t, const Vector& y, const Vector& e, const Vector& f0, const Vector& f1);

double plug_in_tau_pair(double f0_pred, double f1_pred);
Vector plug_in_tau(const Vector& f0_pred, const Vector& f1_pred);

// (1/n) sum (tau_tilde_i - tau_hat_i)^2.
double performance_estimator(const Vector& tau_tilde, const Vector& tau_hat);

// (1/n) sum ((Y - m) - (T - e) tau_hat)^2.
double tau_risk(const ObservationalDataset& val, const Vector& tau_hat, const Vector& m_hat, const Vector& e_hat);

// TrueRisk scores against the ground-truth CATE; it is the oracle metric of
// the tuning experiment and is never available on real data.
enum class Metric { IPW, PlugIn, CFCV, TauRisk, TrueRisk };

std::string to_string(Metric metric);
Metric metric_from_string(const std::string& name);

// Everything a metric may need, evaluated on the validation rows.
struct MetricArtifacts {
  std::optional<Vector> propensity;
  std::optional<Vector> plug_in_f0;
  std::optional<Vector> plug_in_f1;
  std::optional<Vector> dr_f0;
  std::optional<Vector> dr_f1;
  std::optional<Vector> m_hat;
  std::optional<Vector> tau_true;
};

struct MetricScore {
  Metric metric = Metric::CFCV;
  std::map<std::string, double> scores;
  std::string selected;

  nlohmann::json to_json() const;
};

// Per-unit pseudo-labels for the squared-error metrics (IPW, PlugIn, CFCV,
// TrueRisk). Throws ConfigError when a required artifact is missing.
Vector pseudo_labels(Metric metric, const ObservationalDataset& val, const MetricArtifacts& artifacts);

// Scores precomputed validation predictions keyed by candidate id.
MetricScore score_predictions(Metric metric, const std::map<std::string, Vector>& predictions,
                              const ObservationalDataset& val, const MetricArtifacts& artifacts);

MetricScore score_candidates(Metric metric, const std::vector<CatePredictor>& candidates,
                             const ObservationalDataset& val, const MetricArtifacts& artifacts);

// argmin over scores; ties go to the lexicographically smallest id.
std::string select_model(const std::map<std::string, double>& scores);
std::string select_model(const MetricScore& score);

// How the CFR outcome model is obtained: `fixed` alone when n_trials is 0,
// otherwise a seeded random search around `fixed` (the search space's own base
// config is ignored) on an internal split of the validation fold, followed by
// a refit on the whole fold for the winning trial's number of epochs.
struct CfrSelectionSpec {
  CfrConfig fixed;
  std::optional<CfrSearchSpace> search = CfrSearchSpace{};
  int n_trials = 100;
  double tune_train_frac = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FittedOutcomes {
  Vector f0;
  Vector f1;
  CfrConfig config;
  std::optional<CfrTuneResult> tuning;
};

// Trains CFR on `val` with the given loss weighting and predicts both
// potential outcomes on the rows of `val`.
FittedOutcomes fit_cfr_outcomes(const ObservationalDataset& val, const PropensityFunction& propensity,
                                const CfrSelectionSpec& spec, CfrWeighting weighting);

// GBR estimate of E[Y | X] for tau-risk, tuned over a small grid on an internal
// 80/20 split and refit on all of `val`.
Vector fit_outcome_mean(const ObservationalDataset& val, std::uint64_t seed);

struct CfcvResult {
  MetricScore score;
  FittedOutcomes outcomes;
  Vector propensity;
  Vector tau_tilde;
};

CfcvResult run_cfcv(const ObservationalDataset& val, const std::vector<CatePredictor>& candidates,
                    const PropensityFunction& propensity, const CfrSelectionSpec& spec);

struct Decomposition {
  double estimate = 0.0;     // R_hat
  double true_risk = 0.0;    // mean (tau - tau_hat)^2
  double cross_term = 0.0;   // (2/n) sum (tau_hat - tau)(tau_tilde - tau)
  double label_error = 0.0;  // mean (tau - tau_tilde)^2
  double residual = 0.0;     // estimate - (true_risk - cross_term + label_error)
};

Decomposition decompose(const Vector& tau, const Vector& tau_tilde, const Vector& tau_hat);
double decomposition_identity(const Vector& tau, const Vector& tau_tilde, const Vector& tau_hat);

}  // namespace cfcv
