#pragma once

#include "cfcv/base_learners.hpp"
#include "cfcv/common.hpp"
#include "cfcv/dataset.hpp"
#include "cfcv/meta_learners.hpp"
#include "cfcv/propensity.hpp"
#include "cfcv/validation_metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cfcv {

// Mean squared error against the true CATE.
double true_risk(const Vector& tau_true, const Vector& tau_hat);

// Ranks 1..n with ties sharing their average rank.
Vector average_ranks(const Vector& values);

// Pearson correlation of average ranks; empty when either side has no rank
// variance (the correlation is undefined).
std::optional<double> spearman(const Vector& a, const Vector& b);

struct Regret {
  double value = 0.0;
  // Set when the best true risk is zero: value is then the absolute difference.
  bool absolute = false;
};

Regret regret(const std::map<std::string, double>& true_risks, const std::string& selected);

// sqrt(MSE / population variance of tau_true).
double nrmse(const Vector& tau_true, const Vector& tau_hat);

// Synthetic draws or a directory of realization CSVs (sorted by file name).
struct DataSource {
  std::optional<DgpConfig> synthetic;
  std::optional<std::filesystem::path> csv_dir;

  void validate() const;
  bool operator==(const DataSource&) const = default;
};

struct Realization {
  ObservationalDataset data;
  GroundTruth truth;
  std::optional<SyntheticSurface> surface;
};

// Realization r of the source. Synthetic draws mix `seed` and r into the DGP
// seed; CSV sources return file r and require mu0/mu1 columns.
Realization load_realization(const DataSource& source, int r, std::uint64_t seed);
int available_realizations(const DataSource& source);

struct GbrSearchSpace {
  int n_estimators = 100;
  int depth_min = 1;
  int depth_max = 20;
  int leaf_min = 1;
  int leaf_max = 20;
  double lr_min = 1e-5;
  double lr_max = 1e-1;
  std::vector<double> subsample = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  void validate() const;
  GbrConfig sample(std::mt19937_64& rng) const;
  bool operator==(const GbrSearchSpace&) const = default;
};

struct ExperimentSettings {
  DataSource source;
  std::vector<Metric> metrics = {Metric::IPW, Metric::TauRisk, Metric::PlugIn, Metric::CFCV};
  int realizations = 20;
  SplitSpec split;
  CfrSelectionSpec cfr;
  double propensity_l2 = 1.0;
  double propensity_clip = 0.01;
  PropensitySource propensity_source = PropensitySource::Estimated;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct SelectionConfig {
  ExperimentSettings settings;
  CandidateSetConfig candidates = default_candidate_set_config();
};

struct TuningConfig {
  ExperimentSettings settings;
  GbrSearchSpace space;
  int n_trials = 100;
};

struct MetricOutcome {
  std::string selected;
  std::optional<double> rank_correlation;
  std::optional<double> regret;
  bool regret_absolute = false;
  std::optional<double> nrmse;
  std::map<std::string, double> scores;
};

struct RealizationResult {
  int index = 0;
  std::map<std::string, double> true_risks;
  std::map<Metric, MetricOutcome> metrics;
};

struct Summary {
  double mean = 0.0;
  double std_error = 0.0;
  double worst = 0.0;
  int count = 0;
};

struct MetricAggregate {
  std::optional<Summary> rank_correlation;
  std::optional<Summary> regret;
  std::optional<Summary> nrmse;
};

struct Exclusion {
  int index = 0;
  std::string reason;
};

struct ExperimentReport {
  std::string protocol;  // "selection" or "tuning"
  nlohmann::json config;
  std::vector<RealizationResult> realizations;
  std::vector<Exclusion> exclusions;
  std::map<Metric, MetricAggregate> aggregate;

  nlohmann::json to_json() const;
  // One row per (realization, metric).
  std::string to_csv() const;
};

// `higher_is_better` picks the worst case as the minimum, otherwise the maximum.
Summary summarize(const std::vector<double>& values, bool higher_is_better);
std::map<Metric, MetricAggregate> aggregate(const std::vector<RealizationResult>& results,
                                            const std::vector<Metric>& metrics);

// Published IHDP figures for the four estimated metrics, attached to reports.
nlohmann::json published_reference();

RealizationResult run_selection_realization(const SelectionConfig& cfg, int r);
RealizationResult run_tuning_realization(const TuningConfig& cfg, int r);

ExperimentReport run_selection_experiment(const SelectionConfig& cfg, const nlohmann::json& config_echo = {});
ExperimentReport run_tuning_experiment(const TuningConfig& cfg, const nlohmann::json& config_echo = {});

// Mean and standard error of NRMSE(a) - NRMSE(b) over realizations where both
// are present; `worst` is the largest difference.
Summary paired_nrmse_difference(const std::vector<RealizationResult>& results, Metric a, Metric b);

}  // namespace cfcv
