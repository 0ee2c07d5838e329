#include "cfcv/validation_metrics.hpp"

#include "cfcv/base_learners.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace cfcv {

namespace {

void check_propensity(double e) {
  if (!(e > 0.0 && e < 1.0)) throw InvalidArgument("propensity must lie strictly in (0, 1), got " + std::to_string(e));
}

void check_treatment(int t) {
  if (t != 0 && t != 1) throw InvalidArgument("treatment must be 0 or 1");
}

void check_length(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    throw InvalidArgument(std::string(what) + " has length " + std::to_string(got) + ", expected " +
                          std::to_string(expected));
  }
}

const Vector& require(const std::optional<Vector>& v, Metric metric, const char* what, Eigen::Index n) {
  if (!v) throw ConfigError("metric " + to_string(metric) + " requires " + what);
  check_length(n, v->size(), what);
  return *v;
}

// Seeded permutation of [0, n) cut at round(frac * n) with both arms on each side.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> stratified_cut(const IntVector& t, double frac,
                                                                               std::uint64_t seed) {
  const auto n = t.size();
  const auto head = static_cast<Eigen::Index>(std::llround(frac * static_cast<double>(n)));
  if (head < 2 || n - head < 2) throw DataError("validation fold too small for an internal split");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kMaxSplitRetries; ++attempt) {
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::Index a1 = 0, b1 = 0;
    for (Eigen::Index k = 0; k < n; ++k) (k < head ? a1 : b1) += t[order[static_cast<std::size_t>(k)]];
    if (a1 > 0 && a1 < head && b1 > 0 && b1 < n - head) {
      return {std::vector<Eigen::Index>(order.begin(), order.begin() + head),
              std::vector<Eigen::Index>(order.begin() + head, order.end())};
    }
  }
  throw DataError("could not split the validation fold with both arms on each side");
}

}  // namespace

double ipw_tau(int t, double y, double e) {
  check_treatment(t);
  check_propensity(e);
  return t * y / e - (1 - t) * y / (1.0 - e);
}

Vector ipw_tau(const IntVector& t, const Vector& y, const Vector& e) {
  check_length(t.size(), y.size(), "outcomes");
  check_length(t.size(), e.size(), "propensity");
  Vector out(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = ipw_tau(t[i], y[i], e[i]);
  return out;
}

double dr_tau(int t, double y, double e, double f0, double f1) {
  check_treatment(t);
  check_propensity(e);
  const double ft = t == 1 ? f1 : f0;
  return (t - e) / (e * (1.0 - e)) * (y - ft) + f1 - f0;
}

Vector dr_tau(const IntVector& t, const Vector& y, const Vector& e, const Vector& f0, const Vector& f1) {
  check_length(t.size(), y.size(), "outcomes");
  check_length(t.size(), e.size(), "propensity");
  check_length(t.size(), f0.size(), "f0");
  check_length(t.size(), f1.size(), "f1");
  Vector out(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = dr_tau(t[i], y[i], e[i], f0[i], f1[i]);
  return out;
}

double plug_in_tau_pair(double f0_pred, double f1_pred) { return f1_pred - f0_pred; }

Vector plug_in_tau(const Vector& f0_pred, const Vector& f1_pred) {
  check_length(f0_pred.size(), f1_pred.size(), "f1");
  return f1_pred - f0_pred;
}

double performance_estimator(const Vector& tau_tilde, const Vector& tau_hat) {
  if (tau_tilde.size() == 0) throw InvalidArgument("performance estimator needs at least one unit");
  check_length(tau_tilde.size(), tau_hat.size(), "tau_hat");
  return (tau_tilde - tau_hat).squaredNorm() / static_cast<double>(tau_tilde.size());
}

double tau_risk(const ObservationalDataset& val, const Vector& tau_hat, const Vector& m_hat, const Vector& e_hat) {
  const auto n = val.size();
  check_length(n, tau_hat.size(), "tau_hat");
  check_length(n, m_hat.size(), "m_hat");
  check_length(n, e_hat.size(), "e_hat");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    check_propensity(e_hat[i]);
    const double r = (val.outcomes()[i] - m_hat[i]) - (val.treatments()[i] - e_hat[i]) * tau_hat[i];
    total += r * r;
  }
  return total / static_cast<double>(n);
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::IPW: return "ipw";
    case Metric::PlugIn: return "plug-in";
    case Metric::CFCV: return "cf-cv";
    case Metric::TauRisk: return "tau-risk";
    case Metric::TrueRisk: return "true-risk";
  }
  throw InvalidArgument("unknown metric");
}

Metric metric_from_string(const std::string& name) {
  for (auto m : {Metric::IPW, Metric::PlugIn, Metric::CFCV, Metric::TauRisk, Metric::TrueRisk}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown metric '" + name + "' (expected ipw, plug-in, cf-cv, tau-risk or true-risk)");
}

nlohmann::json MetricScore::to_json() const {
  nlohmann::json j;
  j["metric"] = to_string(metric);
  j["scores"] = scores;
  j["selected"] = selected;
  return j;
}

Vector pseudo_labels(Metric metric, const ObservationalDataset& val, const MetricArtifacts& a) {
  const auto n = val.size();
  switch (metric) {
    case Metric::IPW:
      return ipw_tau(val.treatments(), val.outcomes(), require(a.propensity, metric, "a propensity", n));
    case Metric::PlugIn:
      return plug_in_tau(require(a.plug_in_f0, metric, "outcome predictions f0", n),
                         require(a.plug_in_f1, metric, "outcome predictions f1", n));
    case Metric::CFCV:
      return dr_tau(val.treatments(), val.outcomes(), require(a.propensity, metric, "a propensity", n),
                    require(a.dr_f0, metric, "outcome predictions f0", n),
                    require(a.dr_f1, metric, "outcome predictions f1", n));
    case Metric::TrueRisk:
      return require(a.tau_true, metric, "the true CATE", n);
    case Metric::TauRisk:
      break;
  }
  throw ConfigError("metric " + to_string(metric) + " has no pseudo-labels");
}

MetricScore score_predictions(Metric metric, const std::map<std::string, Vector>& predictions,
                              const ObservationalDataset& val, const MetricArtifacts& artifacts) {
  if (predictions.empty()) throw InvalidArgument("no candidates to score");
  MetricScore out;
  out.metric = metric;
  if (metric == Metric::TauRisk) {
    const auto n = val.size();
    const Vector& m = require(artifacts.m_hat, metric, "an outcome-mean estimate", n);
    const Vector& e = require(artifacts.propensity, metric, "a propensity", n);
    for (const auto& [id, pred] : predictions) out.scores[id] = tau_risk(val, pred, m, e);
  } else {
    const Vector labels = pseudo_labels(metric, val, artifacts);
    for (const auto& [id, pred] : predictions) out.scores[id] = performance_estimator(labels, pred);
  }
  for (const auto& [id, s] : out.scores) {
    if (!std::isfinite(s)) throw NumericError("metric " + to_string(metric) + " is not finite for " + id);
  }
  out.selected = select_model(out.scores);
  return out;
}

MetricScore score_candidates(Metric metric, const std::vector<CatePredictor>& candidates,
                             const ObservationalDataset& val, const MetricArtifacts& artifacts) {
  std::map<std::string, Vector> predictions;
  for (const auto& c : candidates) {
    if (!predictions.emplace(c.id(), c.predict(val.features())).second) {
      throw InvalidArgument("duplicate candidate id '" + c.id() + "'");
    }
  }
  return score_predictions(metric, predictions, val, artifacts);
}

std::string select_model(const std::map<std::string, double>& scores) {
  if (scores.empty()) throw InvalidArgument("cannot select from an empty score set");
  auto best = scores.begin();
  for (auto it = std::next(scores.begin()); it != scores.end(); ++it) {
    if (it->second < best->second) best = it;
  }
  return best->first;
}

std::string select_model(const MetricScore& score) { return select_model(score.scores); }

void CfrSelectionSpec::validate() const {
  fixed.validate();
  if (n_trials < 0) throw ConfigError("cfr.n_trials must be >= 0");
  if (n_trials > 0 && !search) throw ConfigError("cfr.n_trials > 0 requires a search space");
  if (search) {
    CfrSearchSpace around = *search;
    around.base = fixed;
    around.validate();
  }
  if (!(tune_train_frac > 0.0 && tune_train_frac < 1.0)) throw ConfigError("cfr.tune_train_frac must lie in (0, 1)");
}

FittedOutcomes fit_cfr_outcomes(const ObservationalDataset& val, const PropensityFunction& propensity,
                                const CfrSelectionSpec& spec, CfrWeighting weighting) {
  spec.validate();
  val.require_both_arms("CFR outcome model");
  FittedOutcomes out;
  CfrConfig cfg = spec.fixed;
  if (spec.n_trials > 0) {
    CfrSearchSpace space = *spec.search;
    space.base = spec.fixed;
    space.base.weighting = weighting;
    const auto [fit_rows, held_rows] = stratified_cut(val.treatments(), spec.tune_train_frac, spec.seed);
    out.tuning = tune_cfr(val.subset(fit_rows), val.subset(held_rows), propensity, space, spec.n_trials,
                          mix_seed(spec.seed, 1));
    const auto& best = out.tuning->trials[static_cast<std::size_t>(out.tuning->best_trial)];
    cfg = best.config;
    cfg.epochs = best.best_epoch + 1;
    cfg.patience = 0;
  }
  cfg.weighting = weighting;
  const auto model = train_cfr(val, propensity, cfg);
  out.f0 = model.predict_f(val.features(), 0);
  out.f1 = model.predict_f(val.features(), 1);
  out.config = cfg;
  return out;
}

Vector fit_outcome_mean(const ObservationalDataset& val, std::uint64_t seed) {
  const auto n = val.size();
  if (n < 10) throw DataError("outcome-mean model needs at least 10 validation units");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<Eigen::Index>(std::llround(0.8 * static_cast<double>(n)));
  Matrix x_fit(cut, val.dim()), x_held(n - cut, val.dim());
  Vector y_fit(cut), y_held(n - cut);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = order[static_cast<std::size_t>(k)];
    if (k < cut) {
      x_fit.row(k) = val.features().row(i);
      y_fit[k] = val.outcomes()[i];
    } else {
      x_held.row(k - cut) = val.features().row(i);
      y_held[k - cut] = val.outcomes()[i];
    }
  }
  GbrConfig best_cfg;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int depth : {2, 3, 4}) {
    for (double lr : {0.05, 0.1}) {
      GbrConfig cfg{100, depth, 5, lr, 0.8, mix_seed(seed, static_cast<std::uint64_t>(depth))};
      const auto model = fit_gbr(x_fit, y_fit, std::nullopt, cfg);
      const double mse = (model.predict(x_held) - y_held).squaredNorm();
      if (mse < best_mse) {
        best_mse = mse;
        best_cfg = cfg;
      }
    }
  }
  return fit_gbr(val.features(), val.outcomes(), std::nullopt, best_cfg).predict(val.features());
}

CfcvResult run_cfcv(const ObservationalDataset& val, const std::vector<CatePredictor>& candidates,
                    const PropensityFunction& propensity, const CfrSelectionSpec& spec) {
  val.require_both_arms("CF-CV");
  if (!propensity) throw ConfigError("CF-CV requires a propensity model");
  CfcvResult out;
  out.outcomes = fit_cfr_outcomes(val, propensity, spec, CfrWeighting::Balanced);
  out.propensity = propensity(val.features());
  out.tau_tilde = dr_tau(val.treatments(), val.outcomes(), out.propensity, out.outcomes.f0, out.outcomes.f1);
  MetricArtifacts artifacts;
  artifacts.propensity = out.propensity;
  artifacts.dr_f0 = out.outcomes.f0;
  artifacts.dr_f1 = out.outcomes.f1;
  out.score = score_candidates(Metric::CFCV, candidates, val, artifacts);
  spdlog::debug("cf-cv selected {}", out.score.selected);
  return out;
}

Decomposition decompose(const Vector& tau, const Vector& tau_tilde, const Vector& tau_hat) {
  check_length(tau.size(), tau_tilde.size(), "tau_tilde");
  check_length(tau.size(), tau_hat.size(), "tau_hat");
  if (tau.size() == 0) throw InvalidArgument("decomposition needs at least one unit");
  const double n = static_cast<double>(tau.size());
  Decomposition d;
  d.estimate = performance_estimator(tau_tilde, tau_hat);
  d.true_risk = (tau - tau_hat).squaredNorm() / n;
  d.cross_term = 2.0 * (tau_hat - tau).dot(tau_tilde - tau) / n;
  d.label_error = (tau - tau_tilde).squaredNorm() / n;
  d.residual = d.estimate - (d.true_risk - d.cross_term + d.label_error);
  return d;
}

double decomposition_identity(const Vector& tau, const Vector& tau_tilde, const Vector& tau_hat) {
  return decompose(tau, tau_tilde, tau_hat).residual;
}

}  // namespace cfcv
