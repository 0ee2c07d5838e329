#pragma once

#include "cfcv/base_learners.hpp"
#include "cfcv/common.hpp"
#include "cfcv/dataset.hpp"

#include <memory>
#include <string>
#include <vector>

namespace cfcv {

enum class MetaLearner { S, T, X, DR, DA };

std::string to_string(MetaLearner meta);
MetaLearner meta_learner_from_string(const std::string& name);

// Fitted state behind a CatePredictor.
class CateModel {
 public:
  virtual ~CateModel() = default;
  virtual Vector predict(const Matrix& x) const = 0;
};

// A fitted CATE predictor tau_hat(x) with a roster-unique identifier.
class CatePredictor {
 public:
  CatePredictor(std::string id, std::shared_ptr<const CateModel> model)
      : id_(std::move(id)), model_(std::move(model)) {}

  const std::string& id() const noexcept { return id_; }
  Vector predict(const Matrix& x) const { return model_->predict(x); }

 private:
  std::string id_;
  std::shared_ptr<const CateModel> model_;
};

struct BaseLearnerSpec {
  std::string label;
  BaseLearnerConfig config;
  bool operator==(const BaseLearnerSpec&) const = default;
};

// The three sub-models of the domain-adaptation learner.
struct DaLearnerConfigs {
  BaseLearnerConfig treated;
  BaseLearnerConfig controls;
  BaseLearnerConfig overall;
};

CatePredictor fit_s_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                            std::string id = "S");
CatePredictor fit_t_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                            std::string id = "T");
// tau(x) = e(x) * tau0(x) + (1 - e(x)) * tau1(x).
CatePredictor fit_x_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                            const PropensityFunction& propensity, std::string id = "X");
// Regresses the doubly robust pseudo-outcome on X, with outcome models from a
// T-learner stage fit on the same data.
CatePredictor fit_dr_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                             const PropensityFunction& propensity, std::string id = "DR");
// Importance-weighted arm models, imputed effects, then an overall model.
// Arm weights are (1-e)/e on treated and e/(1-e) on controls, rescaled to mean
// one within each arm.
CatePredictor fit_da_learner(const ObservationalDataset& train, const DaLearnerConfigs& configs,
                             const PropensityFunction& propensity, std::string id = "DA");
CatePredictor fit_da_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                             const PropensityFunction& propensity, std::string id = "DA");

// Per-unit imputed effects used by the DA learner (exposed for tests).
Vector da_imputed_effects(const ObservationalDataset& train, const FittedRegressor& treated_model,
                          const FittedRegressor& controls_model);
// DA importance weights, normalized to mean one within each arm.
Vector da_importance_weights(const IntVector& treatments, const Vector& propensity);

enum class PropensitySource { Estimated, True };

struct CandidateSetConfig {
  std::vector<MetaLearner> meta_learners;
  std::vector<BaseLearnerSpec> base_learners;
  PropensitySource propensity_source = PropensitySource::Estimated;

  void validate() const;
  bool operator==(const CandidateSetConfig&) const = default;
};

// Five meta-learners times {ridge, tree, gbr, gbr_shallow, tree_deep}.
CandidateSetConfig default_candidate_set_config();

std::string candidate_id(MetaLearner meta, const std::string& base_label);

// Cartesian product, meta-learner outer and base learner inner.
std::vector<CatePredictor> build_candidate_set(const ObservationalDataset& train,
                                               const CandidateSetConfig& cfg,
                                               const PropensityFunction& propensity);

std::vector<std::string> candidate_roster(const CandidateSetConfig& cfg);

}  // namespace cfcv
