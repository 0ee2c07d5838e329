#include "cfcv/evaluation.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cfcv {

double true_risk(const Vector& tau_true, const Vector& tau_hat) {
  if (tau_true.size() != tau_hat.size()) throw InvalidArgument("true_risk: length mismatch");
  if (tau_true.size() == 0) throw InvalidArgument("true_risk: empty input");
  return (tau_true - tau_hat).squaredNorm() / static_cast<double>(tau_true.size());
}

Vector average_ranks(const Vector& values) {
  const auto n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  Vector ranks(n);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InvalidArgument("spearman: length mismatch");
  if (a.size() < 2) throw InvalidArgument("spearman needs at least two values");
  const Vector ra = average_ranks(a);
  const Vector rb = average_ranks(b);
  const Vector ca = ra.array() - ra.mean();
  const Vector cb = rb.array() - rb.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (denom == 0.0) return std::nullopt;
  return std::clamp(ca.dot(cb) / denom, -1.0, 1.0);
}

Regret regret(const std::map<std::string, double>& true_risks, const std::string& selected) {
  const auto it = true_risks.find(selected);
  if (it == true_risks.end()) throw InvalidArgument("regret: unknown candidate '" + selected + "'");
  double best = it->second;
  for (const auto& [id, r] : true_risks) best = std::min(best, r);
  if (best > 0.0) return {(it->second - best) / best, false};
  return {it->second - best, true};
}

double nrmse(const Vector& tau_true, const Vector& tau_hat) {
  const double mse = true_risk(tau_true, tau_hat);
  const double var = (tau_true.array() - tau_true.mean()).square().mean();
  if (!(var > 0.0)) throw NumericError("nrmse undefined: the true CATE has zero variance");
  return std::sqrt(mse / var);
}

// ---------------------------------------------------------------------------
// Data sources

namespace {

std::vector<std::filesystem::path> realization_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("data.csv_dir is not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

void DataSource::validate() const {
  if (synthetic.has_value() == csv_dir.has_value()) {
    throw ConfigError("data: exactly one of 'synthetic' or 'csv_dir' must be given");
  }
  if (synthetic) synthetic->validate();
}

int available_realizations(const DataSource& source) {
  source.validate();
  if (source.synthetic) return std::numeric_limits<int>::max();
  return static_cast<int>(realization_files(*source.csv_dir).size());
}

Realization load_realization(const DataSource& source, int r, std::uint64_t seed) {
  source.validate();
  if (source.synthetic) {
    DgpConfig cfg = *source.synthetic;
    cfg.seed = mix_seed(cfg.seed ^ seed, static_cast<std::uint64_t>(r));
    auto sample = generate_synthetic(cfg);
    return {std::move(sample.data), std::move(sample.truth), std::move(sample.surface)};
  }
  const auto files = realization_files(*source.csv_dir);
  if (r < 0 || static_cast<std::size_t>(r) >= files.size()) {
    throw ConfigError(fmt::format("realization {} requested but {} holds {} CSV files", r,
                                  source.csv_dir->string(), files.size()));
  }
  auto loaded = load_csv(files[static_cast<std::size_t>(r)]);
  if (!loaded.truth) throw DataError(files[static_cast<std::size_t>(r)].string() + " has no mu0/mu1 columns");
  return {std::move(loaded.data), std::move(*loaded.truth), std::nullopt};
}

void GbrSearchSpace::validate() const {
  if (n_estimators < 1) throw ConfigError("gbr_space.n_estimators must be >= 1");
  if (depth_min < 1 || depth_min > depth_max) throw ConfigError("gbr_space depth range is invalid");
  if (leaf_min < 1 || leaf_min > leaf_max) throw ConfigError("gbr_space leaf range is invalid");
  if (!(lr_min > 0.0 && lr_min <= lr_max && lr_max <= 1.0)) throw ConfigError("gbr_space learning-rate range is invalid");
  if (subsample.empty()) throw ConfigError("gbr_space.subsample must not be empty");
  for (double s : subsample) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("gbr_space.subsample values must lie in (0, 1]");
  }
}

GbrConfig GbrSearchSpace::sample(std::mt19937_64& rng) const {
  GbrConfig cfg;
  cfg.n_estimators = n_estimators;
  cfg.max_depth = std::uniform_int_distribution<int>(depth_min, depth_max)(rng);
  cfg.min_samples_leaf = std::uniform_int_distribution<int>(leaf_min, leaf_max)(rng);
  cfg.learning_rate = lr_min == lr_max
                          ? lr_min
                          : std::exp(std::uniform_real_distribution<double>(std::log(lr_min), std::log(lr_max))(rng));
  cfg.subsample = subsample[std::uniform_int_distribution<std::size_t>(0, subsample.size() - 1)(rng)];
  cfg.seed = rng();
  return cfg;
}

// ---------------------------------------------------------------------------
// One realization

namespace {

struct Prepared {
  DataSplit parts;
  PropensityFunction propensity;
  MetricArtifacts artifacts;
};

bool wants(const std::vector<Metric>& metrics, Metric m) {
  return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
}

std::vector<Eigen::Index> concat(const std::vector<Eigen::Index>& a, const std::vector<Eigen::Index>& b) {
  std::vector<Eigen::Index> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Split, propensity, and every per-metric artifact on the validation fold.
Prepared prepare(const ExperimentSettings& s, int r) {
  const std::uint64_t rs = mix_seed(s.seed, static_cast<std::uint64_t>(r));
  auto real = load_realization(s.source, r, s.seed);
  SplitSpec spec = s.split;
  spec.seed = mix_seed(s.split.seed ^ rs, 1);
  Prepared p{split(real.data, real.truth, spec), {}, {}};
  const auto& val = p.parts.validation.data;

  if (s.propensity_source == PropensitySource::True) {
    if (!real.surface) throw ConfigError("propensity_source 'true' needs a synthetic data source");
    p.propensity = clip_propensity([surface = *real.surface](const Matrix& x) { return surface.propensity(x); },
                                   s.propensity_clip);
  } else {
    const auto pool = real.data.subset(concat(p.parts.train.indices, p.parts.validation.indices));
    LogisticOptions opts;
    opts.l2_penalty = s.propensity_l2;
    opts.clip_eps = s.propensity_clip;
    p.propensity = fit_logistic(pool.features(), pool.treatments(), opts).as_function();
  }

  p.artifacts.propensity = p.propensity(val.features());
  if (wants(s.metrics, Metric::TrueRisk)) p.artifacts.tau_true = p.parts.validation.truth->tau;
  if (wants(s.metrics, Metric::TauRisk)) p.artifacts.m_hat = fit_outcome_mean(val, mix_seed(rs, 4));
  if (wants(s.metrics, Metric::PlugIn)) {
    CfrSelectionSpec cfr = s.cfr;
    cfr.seed = mix_seed(rs, 3);
    cfr.fixed.seed = mix_seed(rs, 6);
    const auto fitted = fit_cfr_outcomes(val, p.propensity, cfr, CfrWeighting::Uniform);
    p.artifacts.plug_in_f0 = fitted.f0;
    p.artifacts.plug_in_f1 = fitted.f1;
  }
  if (wants(s.metrics, Metric::CFCV)) {
    CfrSelectionSpec cfr = s.cfr;
    cfr.seed = mix_seed(rs, 2);
    cfr.fixed.seed = mix_seed(rs, 5);
    const auto fitted = fit_cfr_outcomes(val, p.propensity, cfr, CfrWeighting::Balanced);
    p.artifacts.dr_f0 = fitted.f0;
    p.artifacts.dr_f1 = fitted.f1;
  }
  return p;
}

Vector in_key_order(const std::map<std::string, double>& m) {
  Vector v(static_cast<Eigen::Index>(m.size()));
  Eigen::Index k = 0;
  for (const auto& [id, value] : m) v[k++] = value;
  return v;
}

void check_settings(const ExperimentSettings& s) {
  s.source.validate();
  if (s.metrics.empty()) throw ConfigError("metrics must not be empty");
  if (s.realizations < 1) throw ConfigError("realizations must be >= 1");
  s.split.validate();
  s.cfr.validate();
}

}  // namespace

RealizationResult run_selection_realization(const SelectionConfig& cfg, int r) {
  const auto& s = cfg.settings;
  cfg.candidates.validate();
  Prepared p = prepare(s, r);
  const auto& train = p.parts.train.data;
  const auto& val = p.parts.validation.data;
  const auto& test = p.parts.test;

  const auto candidates = build_candidate_set(train, cfg.candidates, p.propensity);
  std::map<std::string, Vector> val_predictions;
  RealizationResult out;
  out.index = r;
  for (const auto& c : candidates) {
    val_predictions.emplace(c.id(), c.predict(val.features()));
    out.true_risks[c.id()] = true_risk(test.truth->tau, c.predict(test.data.features()));
  }
  const Vector truth_order = in_key_order(out.true_risks);
  for (Metric m : s.metrics) {
    const auto score = score_predictions(m, val_predictions, val, p.artifacts);
    MetricOutcome o;
    o.selected = score.selected;
    o.scores = score.scores;
    if (out.true_risks.size() >= 2) o.rank_correlation = spearman(truth_order, in_key_order(score.scores));
    const auto reg = regret(out.true_risks, score.selected);
    o.regret = reg.value;
    o.regret_absolute = reg.absolute;
    out.metrics[m] = std::move(o);
  }
  return out;
}

RealizationResult run_tuning_realization(const TuningConfig& cfg, int r) {
  const auto& s = cfg.settings;
  cfg.space.validate();
  if (cfg.n_trials < 1) throw ConfigError("n_trials must be >= 1");
  const std::uint64_t rs = mix_seed(s.seed, static_cast<std::uint64_t>(r));
  Prepared p = prepare(s, r);
  const auto& train = p.parts.train.data;
  const auto& val = p.parts.validation.data;
  const auto& test = p.parts.test;

  std::map<std::string, Vector> val_predictions, test_predictions;
  RealizationResult out;
  out.index = r;
  for (int k = 0; k < cfg.n_trials; ++k) {
    std::mt19937_64 rng(mix_seed(rs, 100 + static_cast<std::uint64_t>(k)));
    DaLearnerConfigs trial;
    trial.treated = cfg.space.sample(rng);
    trial.controls = cfg.space.sample(rng);
    trial.overall = cfg.space.sample(rng);
    const std::string id = fmt::format("trial-{:04d}", k);
    try {
      const auto model = fit_da_learner(train, trial, p.propensity, id);
      val_predictions.emplace(id, model.predict(val.features()));
      test_predictions.emplace(id, model.predict(test.data.features()));
      out.true_risks[id] = true_risk(test.truth->tau, test_predictions.at(id));
    } catch (const NumericError& err) {
      spdlog::warn("realization {} {} failed: {}", r, id, err.what());
    }
  }
  if (val_predictions.empty()) throw NumericError("every tuning trial failed");
  for (Metric m : s.metrics) {
    const auto score = score_predictions(m, val_predictions, val, p.artifacts);
    MetricOutcome o;
    o.selected = score.selected;
    o.scores = score.scores;
    o.nrmse = nrmse(test.truth->tau, test_predictions.at(score.selected));
    const auto reg = regret(out.true_risks, score.selected);
    o.regret = reg.value;
    o.regret_absolute = reg.absolute;
    out.metrics[m] = std::move(o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation and reports

Summary summarize(const std::vector<double>& values, bool higher_is_better) {
  if (values.empty()) throw InvalidArgument("cannot summarize an empty sample");
  Summary s;
  s.count = static_cast<int>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_error = s.count > 1 ? std::sqrt(ss / (s.count - 1) / s.count) : 0.0;
  s.worst = higher_is_better ? *std::min_element(values.begin(), values.end())
                             : *std::max_element(values.begin(), values.end());
  return s;
}

std::map<Metric, MetricAggregate> aggregate(const std::vector<RealizationResult>& results,
                                            const std::vector<Metric>& metrics) {
  std::map<Metric, MetricAggregate> out;
  for (Metric m : metrics) {
    std::vector<double> rc, rg, nr;
    for (const auto& r : results) {
      const auto it = r.metrics.find(m);
      if (it == r.metrics.end()) continue;
      if (it->second.rank_correlation) rc.push_back(*it->second.rank_correlation);
      if (it->second.regret) rg.push_back(*it->second.regret);
      if (it->second.nrmse) nr.push_back(*it->second.nrmse);
    }
    MetricAggregate a;
    if (!rc.empty()) a.rank_correlation = summarize(rc, true);
    if (!rg.empty()) a.regret = summarize(rg, false);
    if (!nr.empty()) a.nrmse = summarize(nr, false);
    out[m] = a;
  }
  return out;
}

Summary paired_nrmse_difference(const std::vector<RealizationResult>& results, Metric a, Metric b) {
  std::vector<double> diffs;
  for (const auto& r : results) {
    const auto ia = r.metrics.find(a);
    const auto ib = r.metrics.find(b);
    if (ia == r.metrics.end() || ib == r.metrics.end() || !ia->second.nrmse || !ib->second.nrmse) continue;
    diffs.push_back(*ia->second.nrmse - *ib->second.nrmse);
  }
  return summarize(diffs, false);
}

nlohmann::json published_reference() {
  auto entry = [](double m, double se, double w) { return nlohmann::json{{"mean", m}, {"stderr", se}, {"worst", w}}; };
  nlohmann::json j;
  j["ipw"] = {{"rank_correlation", entry(0.195, 0.039, -0.749)},
              {"regret", entry(1.032, 0.100, 6.779)},
              {"nrmse", entry(0.336, 0.013, 0.737)}};
  j["tau-risk"] = {{"rank_correlation", entry(0.312, 0.030, -0.553)},
                   {"regret", entry(1.392, 0.130, 7.884)},
                   {"nrmse", entry(0.324, 0.013, 0.700)}};
  j["plug-in"] = {{"rank_correlation", entry(0.914, 0.006, 0.591)},
                  {"regret", entry(0.073, 0.012, 0.780)},
                  {"nrmse", entry(0.257, 0.010, 0.490)}};
  j["cf-cv"] = {{"rank_correlation", entry(0.921, 0.005, 0.666)},
                {"regret", entry(0.066, 0.012, 0.562)},
                {"nrmse", entry(0.256, 0.009, 0.483)}};
  return {{"dataset", "IHDP, 100 realizations"}, {"metrics", j}};
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return {{"mean", s->mean}, {"stderr", s->std_error}, {"worst", s->worst}, {"count", s->count}};
}

// FNV-1a over the canonical config dump.
std::string digest(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  return fmt::format("{}", *v);
}

}  // namespace

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["protocol"] = protocol;
  j["config"] = config;
  j["config_digest"] = digest(config);
  auto& rows = j["per_realization"] = nlohmann::json::array();
  for (const auto& r : realizations) {
    nlohmann::json row;
    row["index"] = r.index;
    row["true_risks"] = r.true_risks;
    for (const auto& [m, o] : r.metrics) {
      row["metrics"][to_string(m)] = {{"selected", o.selected},
                                      {"rank_correlation", optional_json(o.rank_correlation)},
                                      {"regret", optional_json(o.regret)},
                                      {"regret_absolute", o.regret_absolute},
                                      {"nrmse", optional_json(o.nrmse)},
                                      {"scores", o.scores}};
    }
    rows.push_back(std::move(row));
  }
  auto& agg = j["aggregate"] = nlohmann::json::object();
  for (const auto& [m, a] : aggregate) {
    agg[to_string(m)] = {{"rank_correlation", summary_json(a.rank_correlation)},
                         {"regret", summary_json(a.regret)},
                         {"nrmse", summary_json(a.nrmse)}};
  }
  auto items = nlohmann::json::array();
  for (const auto& e : exclusions) items.push_back({{"index", e.index}, {"reason", e.reason}});
  j["exclusions"] = {{"count", exclusions.size()}, {"items", items}};
  j["reference"] = published_reference();
  return j;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << "realization,metric,selected,rank_correlation,regret,regret_absolute,nrmse\n";
  for (const auto& r : realizations) {
    for (const auto& [m, o] : r.metrics) {
      out << r.index << ',' << to_string(m) << ',' << o.selected << ',' << csv_value(o.rank_correlation) << ','
          << csv_value(o.regret) << ',' << (o.regret_absolute ? 1 : 0) << ',' << csv_value(o.nrmse) << '\n';
    }
  }
  return out.str();
}

namespace {

template <class Cfg, class Fn>
ExperimentReport run_experiment(const Cfg& cfg, const char* protocol, const nlohmann::json& echo, Fn&& one) {
  const auto& s = cfg.settings;
  check_settings(s);
  const int available = available_realizations(s.source);
  if (s.realizations > available) {
    throw ConfigError(fmt::format("realizations = {} but the data source holds only {}", s.realizations, available));
  }
  std::vector<std::optional<RealizationResult>> slots(static_cast<std::size_t>(s.realizations));
  std::vector<std::string> errors(slots.size());
  parallel_for(slots.size(), std::max<std::size_t>(1, s.threads), [&](std::size_t r) {
    try {
      slots[r] = one(cfg, static_cast<int>(r));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& err) {
      errors[r] = err.what();
    }
  });
  ExperimentReport report;
  report.protocol = protocol;
  report.config = echo;
  for (std::size_t r = 0; r < slots.size(); ++r) {
    if (slots[r]) {
      report.realizations.push_back(std::move(*slots[r]));
    } else {
      spdlog::warn("realization {} excluded: {}", r, errors[r]);
      report.exclusions.push_back({static_cast<int>(r), errors[r]});
    }
  }
  if (report.realizations.empty()) throw Error("every realization failed");
  report.aggregate = aggregate(report.realizations, s.metrics);
  return report;
}

}  // namespace

ExperimentReport run_selection_experiment(const SelectionConfig& cfg, const nlohmann::json& config_echo) {
  cfg.candidates.validate();
  return run_experiment(cfg, "selection", config_echo, run_selection_realization);
}

ExperimentReport run_tuning_experiment(const TuningConfig& cfg, const nlohmann::json& config_echo) {
  cfg.space.validate();
  if (cfg.n_trials < 1) throw ConfigError("n_trials must be >= 1");
  return run_experiment(cfg, "tuning", config_echo, run_tuning_realization);
}

}  // namespace cfcv
