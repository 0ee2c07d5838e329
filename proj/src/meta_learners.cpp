#include "cfcv/meta_learners.hpp"

#include "cfcv/validation_metrics.hpp"

#include <set>

namespace cfcv {

std::string to_string(MetaLearner meta) {
  switch (meta) {
    case MetaLearner::S:
      return "S";
    case MetaLearner::T:
      return "T";
    case MetaLearner::X:
      return "X";
    case MetaLearner::DR:
      return "DR";
    case MetaLearner::DA:
      return "DA";
  }
  return "?";
}

MetaLearner meta_learner_from_string(const std::string& name) {
  if (name == "S") return MetaLearner::S;
  if (name == "T") return MetaLearner::T;
  if (name == "X") return MetaLearner::X;
  if (name == "DR") return MetaLearner::DR;
  if (name == "DA") return MetaLearner::DA;
  throw ConfigError("unknown meta-learner '" + name + "' (expected S, T, X, DR or DA)");
}

namespace {

Matrix with_treatment_column(const Matrix& x, double t) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setConstant(t);
  return out;
}

struct ArmData {
  Matrix x;
  Vector y;
};

ArmData arm_data(const ObservationalDataset& data, int arm) {
  const auto idx = data.arm_indices(arm);
  ArmData out{Matrix(static_cast<Eigen::Index>(idx.size()), data.dim()),
              Vector(static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = data.features().row(idx[k]);
    out.y[static_cast<Eigen::Index>(k)] = data.outcomes()[idx[k]];
  }
  return out;
}

Vector propensity_on(const PropensityFunction& propensity, const Matrix& x) {
  if (!propensity) throw ConfigError("meta-learner requires a propensity model");
  Vector e = propensity(x);
  if (e.size() != x.rows()) throw InvalidArgument("propensity returned the wrong number of scores");
  for (double v : e) {
    if (!(v > 0.0 && v < 1.0)) throw InvalidArgument("propensity scores must lie strictly in (0, 1)");
  }
  return e;
}

class SLearnerModel final : public CateModel {
 public:
  explicit SLearnerModel(FittedRegressor g) : g_(std::move(g)) {}
  Vector predict(const Matrix& x) const override {
    return g_.predict(with_treatment_column(x, 1.0)) - g_.predict(with_treatment_column(x, 0.0));
  }

 private:
  FittedRegressor g_;
};

class DifferenceModel final : public CateModel {
 public:
  DifferenceModel(FittedRegressor f1, FittedRegressor f0) : f1_(std::move(f1)), f0_(std::move(f0)) {}
  Vector predict(const Matrix& x) const override { return f1_.predict(x) - f0_.predict(x); }

 private:
  FittedRegressor f1_;
  FittedRegressor f0_;
};

class XLearnerModel final : public CateModel {
 public:
  XLearnerModel(FittedRegressor tau1, FittedRegressor tau0, PropensityFunction propensity)
      : tau1_(std::move(tau1)), tau0_(std::move(tau0)), propensity_(std::move(propensity)) {}
  Vector predict(const Matrix& x) const override {
    const Vector e = propensity_on(propensity_, x);
    const Vector t0 = tau0_.predict(x);
    const Vector t1 = tau1_.predict(x);
    return (e.array() * t0.array() + (1.0 - e.array()) * t1.array()).matrix();
  }

 private:
  FittedRegressor tau1_;
  FittedRegressor tau0_;
  PropensityFunction propensity_;
};

class SingleRegressorModel final : public CateModel {
 public:
  explicit SingleRegressorModel(FittedRegressor f) : f_(std::move(f)) {}
  Vector predict(const Matrix& x) const override { return f_.predict(x); }

 private:
  FittedRegressor f_;
};

}  // namespace

CatePredictor fit_s_learner(const ObservationalDataset& train, const BaseLearnerConfig& base, std::string id) {
  train.require_both_arms("S-learner");
  Matrix xt(train.size(), train.dim() + 1);
  xt.leftCols(train.dim()) = train.features();
  xt.col(train.dim()) = train.treatments().cast<double>();
  auto g = fit_regressor(xt, train.outcomes(), std::nullopt, base);
  return {std::move(id), std::make_shared<SLearnerModel>(std::move(g))};
}

CatePredictor fit_t_learner(const ObservationalDataset& train, const BaseLearnerConfig& base, std::string id) {
  train.require_both_arms("T-learner");
  const auto treated = arm_data(train, 1);
  const auto control = arm_data(train, 0);
  auto f1 = fit_regressor(treated.x, treated.y, std::nullopt, base);
  auto f0 = fit_regressor(control.x, control.y, std::nullopt, base);
  return {std::move(id), std::make_shared<DifferenceModel>(std::move(f1), std::move(f0))};
}

CatePredictor fit_x_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                            const PropensityFunction& propensity, std::string id) {
  train.require_both_arms("X-learner");
  if (!propensity) throw ConfigError("X-learner requires a propensity model");
  const auto treated = arm_data(train, 1);
  const auto control = arm_data(train, 0);
  const auto f1 = fit_regressor(treated.x, treated.y, std::nullopt, base);
  const auto f0 = fit_regressor(control.x, control.y, std::nullopt, base);
  const Vector d1 = treated.y - f0.predict(treated.x);
  const Vector d0 = f1.predict(control.x) - control.y;
  auto tau1 = fit_regressor(treated.x, d1, std::nullopt, base);
  auto tau0 = fit_regressor(control.x, d0, std::nullopt, base);
  return {std::move(id), std::make_shared<XLearnerModel>(std::move(tau1), std::move(tau0), propensity)};
}

CatePredictor fit_dr_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                             const PropensityFunction& propensity, std::string id) {
  train.require_both_arms("DR-learner");
  const auto treated = arm_data(train, 1);
  const auto control = arm_data(train, 0);
  const auto f1 = fit_regressor(treated.x, treated.y, std::nullopt, base);
  const auto f0 = fit_regressor(control.x, control.y, std::nullopt, base);
  const Vector e = propensity_on(propensity, train.features());
  const Vector pseudo = dr_tau(train.treatments(), train.outcomes(), e, f0.predict(train.features()),
                               f1.predict(train.features()));
  auto final_model = fit_regressor(train.features(), pseudo, std::nullopt, base);
  return {std::move(id), std::make_shared<SingleRegressorModel>(std::move(final_model))};
}

Vector da_importance_weights(const IntVector& treatments, const Vector& propensity) {
  if (treatments.size() != propensity.size()) throw InvalidArgument("treatment and propensity lengths differ");
  Vector w(treatments.size());
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double e = propensity[i];
    const int t = treatments[i];
    w[i] = t == 1 ? (1.0 - e) / e : e / (1.0 - e);
    sum[t] += w[i];
    count[t] += 1.0;
  }
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const int t = treatments[i];
    w[i] *= count[t] / sum[t];
  }
  return w;
}

Vector da_imputed_effects(const ObservationalDataset& train, const FittedRegressor& treated_model,
                          const FittedRegressor& controls_model) {
  const Vector mu1 = treated_model.predict(train.features());
  const Vector mu0 = controls_model.predict(train.features());
  Vector effects(train.size());
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    effects[i] = train.treatments()[i] == 1 ? train.outcomes()[i] - mu0[i] : mu1[i] - train.outcomes()[i];
  }
  return effects;
}

CatePredictor fit_da_learner(const ObservationalDataset& train, const DaLearnerConfigs& configs,
                             const PropensityFunction& propensity, std::string id) {
  train.require_both_arms("DA-learner");
  const Vector e = propensity_on(propensity, train.features());
  const Vector w = da_importance_weights(train.treatments(), e);
  const auto treated_idx = train.arm_indices(1);
  const auto control_idx = train.arm_indices(0);
  auto arm_weights = [&](const std::vector<Eigen::Index>& idx) {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = w[idx[k]];
    return out;
  };
  const auto treated = arm_data(train, 1);
  const auto control = arm_data(train, 0);
  const auto treated_model = fit_regressor(treated.x, treated.y, arm_weights(treated_idx), configs.treated);
  const auto controls_model = fit_regressor(control.x, control.y, arm_weights(control_idx), configs.controls);
  const Vector effects = da_imputed_effects(train, treated_model, controls_model);
  auto overall = fit_regressor(train.features(), effects, std::nullopt, configs.overall);
  return {std::move(id), std::make_shared<SingleRegressorModel>(std::move(overall))};
}

CatePredictor fit_da_learner(const ObservationalDataset& train, const BaseLearnerConfig& base,
                             const PropensityFunction& propensity, std::string id) {
  return fit_da_learner(train, DaLearnerConfigs{base, base, base}, propensity, std::move(id));
}

void CandidateSetConfig::validate() const {
  if (meta_learners.empty()) throw ConfigError("candidates.meta_learners must not be empty");
  if (base_learners.empty()) throw ConfigError("candidates.base_learners must not be empty");
  std::set<MetaLearner> metas;
  for (auto m : meta_learners) {
    if (!metas.insert(m).second) throw ConfigError("duplicate meta-learner " + to_string(m));
  }
  std::set<std::string> labels;
  for (const auto& b : base_learners) {
    if (b.label.empty()) throw ConfigError("base learner label must not be empty");
    if (!labels.insert(b.label).second) throw ConfigError("duplicate base learner label '" + b.label + "'");
    cfcv::validate(b.config);
  }
}

CandidateSetConfig default_candidate_set_config() {
  CandidateSetConfig cfg;
  cfg.meta_learners = {MetaLearner::S, MetaLearner::T, MetaLearner::X, MetaLearner::DR, MetaLearner::DA};
  cfg.base_learners = {
      {"ridge", RidgeConfig{1.0, true}},
      {"tree", TreeConfig{5, 10}},
      {"gbr", GbrConfig{100, 3, 5, 0.1, 0.8, 11}},
      {"gbr_shallow", GbrConfig{100, 1, 5, 0.1, 1.0, 13}},
      {"tree_deep", TreeConfig{12, 2}},
  };
  return cfg;
}

std::string candidate_id(MetaLearner meta, const std::string& base_label) {
  return to_string(meta) + ":" + base_label;
}

std::vector<std::string> candidate_roster(const CandidateSetConfig& cfg) {
  std::vector<std::string> out;
  for (auto meta : cfg.meta_learners) {
    for (const auto& base : cfg.base_learners) out.push_back(candidate_id(meta, base.label));
  }
  return out;
}

std::vector<CatePredictor> build_candidate_set(const ObservationalDataset& train, const CandidateSetConfig& cfg,
                                               const PropensityFunction& propensity) {
  cfg.validate();
  train.require_both_arms("candidate set");
  std::vector<CatePredictor> out;
  out.reserve(cfg.meta_learners.size() * cfg.base_learners.size());
  for (auto meta : cfg.meta_learners) {
    for (const auto& base : cfg.base_learners) {
      auto id = candidate_id(meta, base.label);
      switch (meta) {
        case MetaLearner::S:
          out.push_back(fit_s_learner(train, base.config, std::move(id)));
          break;
        case MetaLearner::T:
          out.push_back(fit_t_learner(train, base.config, std::move(id)));
          break;
        case MetaLearner::X:
          out.push_back(fit_x_learner(train, base.config, propensity, std::move(id)));
          break;
        case MetaLearner::DR:
          out.push_back(fit_dr_learner(train, base.config, propensity, std::move(id)));
          break;
        case MetaLearner::DA:
          out.push_back(fit_da_learner(train, base.config, propensity, std::move(id)));
          break;
      }
    }
  }
  return out;
}

}  // namespace cfcv
