#include "cfcv/config.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

namespace cfcv {

using nlohmann::json;

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Select: return "select";
    case Mode::Tune: return "tune";
    case Mode::AlphaSweep: return "alpha-sweep";
    case Mode::Verify: return "verify";
    case Mode::Generate: return "gen";
  }
  throw InvalidArgument("unknown mode");
}

Mode mode_from_string(const std::string& name) {
  for (auto m : {Mode::Select, Mode::Tune, Mode::AlphaSweep, Mode::Verify, Mode::Generate}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("mode: unknown value '" + name + "' (expected select, tune, alpha-sweep, verify or gen)");
}

namespace {

constexpr double kAlphaMin = 0.01;
constexpr double kAlphaMax = 100.0;

// A JSON object read under a dotted path; every consumed key is recorded so
// leftovers can be reported as unknown.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), at(key));
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key) + ": required key is missing");
    return convert<T>(j_.at(key), at(key));
  }

  Block child(const std::string& key) {
    seen_.insert(key);
    return Block(j_.at(key), at(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(at(key) + ": unknown key");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        throw ConfigError(path + ": integer out of range");
      }
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], fmt::format("{}[{}]", path, i)));
      }
      return out;
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Re-throws a validation failure with the block path in front.
template <class Fn>
void checked(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& err) {
    throw ConfigError(path + ": " + err.what());
  } catch (const InvalidArgument& err) {
    throw ConfigError(path + ": " + err.what());
  }
}

void check_alpha(double alpha, const std::string& path) {
  if (!(alpha >= kAlphaMin && alpha <= kAlphaMax)) {
    throw ConfigError(fmt::format("{} = {} is outside the allowed interval [{}, {}]", path, alpha, kAlphaMin,
                                  kAlphaMax));
  }
}

DgpConfig read_dgp(Block b) {
  DgpConfig d;
  d.n = b.get("n", d.n);
  d.d = b.get("d", d.d);
  d.confounding_strength = b.get("confounding_strength", d.confounding_strength);
  d.noise_scale = b.get("noise_scale", d.noise_scale);
  d.response_surface = response_surface_from_string(b.get("response_surface", to_string(d.response_surface)));
  d.seed = b.get("seed", d.seed);
  d.treatment_effect = b.get("treatment_effect", d.treatment_effect);
  d.effect_heterogeneity = b.get("effect_heterogeneity", d.effect_heterogeneity);
  b.finish();
  checked("data.synthetic", [&] { d.validate(); });
  return d;
}

json dgp_json(const DgpConfig& d) {
  return {{"n", d.n},
          {"d", d.d},
          {"confounding_strength", d.confounding_strength},
          {"noise_scale", d.noise_scale},
          {"response_surface", to_string(d.response_surface)},
          {"seed", d.seed},
          {"treatment_effect", d.treatment_effect},
          {"effect_heterogeneity", d.effect_heterogeneity}};
}

BaseLearnerSpec read_base_learner(Block b) {
  BaseLearnerSpec spec;
  spec.label = b.require<std::string>("label");
  const auto kind = b.require<std::string>("kind");
  if (kind == "ridge") {
    RidgeConfig c;
    c.l2_penalty = b.get("l2_penalty", c.l2_penalty);
    c.fit_intercept = b.get("fit_intercept", c.fit_intercept);
    spec.config = c;
  } else if (kind == "tree") {
    TreeConfig c;
    c.max_depth = b.get("max_depth", c.max_depth);
    c.min_samples_leaf = b.get("min_samples_leaf", c.min_samples_leaf);
    spec.config = c;
  } else if (kind == "gbr") {
    GbrConfig c;
    c.n_estimators = b.get("n_estimators", c.n_estimators);
    c.max_depth = b.get("max_depth", c.max_depth);
    c.min_samples_leaf = b.get("min_samples_leaf", c.min_samples_leaf);
    c.learning_rate = b.get("learning_rate", c.learning_rate);
    c.subsample = b.get("subsample", c.subsample);
    c.seed = b.get("seed", c.seed);
    spec.config = c;
  } else {
    throw ConfigError(b.at("kind") + ": unknown learner '" + kind + "' (expected ridge, tree or gbr)");
  }
  b.finish();
  return spec;
}

json base_learner_json(const BaseLearnerSpec& spec) {
  json j{{"label", spec.label}, {"kind", learner_kind(spec.config)}};
  if (const auto* c = std::get_if<RidgeConfig>(&spec.config)) {
    j["l2_penalty"] = c->l2_penalty;
    j["fit_intercept"] = c->fit_intercept;
  } else if (const auto* c = std::get_if<TreeConfig>(&spec.config)) {
    j["max_depth"] = c->max_depth;
    j["min_samples_leaf"] = c->min_samples_leaf;
  } else if (const auto* c = std::get_if<GbrConfig>(&spec.config)) {
    j["n_estimators"] = c->n_estimators;
    j["max_depth"] = c->max_depth;
    j["min_samples_leaf"] = c->min_samples_leaf;
    j["learning_rate"] = c->learning_rate;
    j["subsample"] = c->subsample;
    j["seed"] = c->seed;
  }
  return j;
}

CandidateSetConfig read_candidates(Block b) {
  CandidateSetConfig c = default_candidate_set_config();
  if (b.has("meta_learners")) {
    c.meta_learners.clear();
    for (const auto& name : b.get<std::vector<std::string>>("meta_learners", {})) {
      try {
        c.meta_learners.push_back(meta_learner_from_string(name));
      } catch (const Error& err) {
        throw ConfigError(b.at("meta_learners") + ": " + err.what());
      }
    }
  }
  if (b.has("base_learners")) {
    const json& arr = b.raw("base_learners");
    if (!arr.is_array()) throw ConfigError(b.at("base_learners") + ": expected an array");
    c.base_learners.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.base_learners.push_back(read_base_learner(Block(arr[i], fmt::format("{}[{}]", b.at("base_learners"), i))));
    }
  }
  b.finish();
  checked("candidates", [&] { c.validate(); });
  return c;
}

json candidates_json(const CandidateSetConfig& c) {
  json metas = json::array();
  for (auto m : c.meta_learners) metas.push_back(to_string(m));
  json bases = json::array();
  for (const auto& b : c.base_learners) bases.push_back(base_learner_json(b));
  return {{"meta_learners", metas}, {"base_learners", bases}};
}

CfrSelectionSpec read_cfr(Block b) {
  CfrSelectionSpec s;
  CfrConfig& f = s.fixed;
  f.rep_layers = b.get("rep_layers", f.rep_layers);
  f.rep_dim = b.get("rep_dim", f.rep_dim);
  f.head_layers = b.get("head_layers", f.head_layers);
  f.head_dim = b.get("head_dim", f.head_dim);
  f.alpha = b.get("alpha", f.alpha);
  check_alpha(f.alpha, b.at("alpha"));
  f.learning_rate = b.get("learning_rate", f.learning_rate);
  f.batch_size = b.get("batch_size", f.batch_size);
  f.dropout = b.get("dropout", f.dropout);
  f.epochs = b.get("epochs", f.epochs);
  f.patience = b.get("patience", f.patience);
  f.sinkhorn_reg = b.get("sinkhorn_reg", f.sinkhorn_reg);
  f.sinkhorn_iters = b.get("sinkhorn_iters", f.sinkhorn_iters);
  f.ipm_full_batch = b.get("ipm_full_batch", f.ipm_full_batch);
  s.n_trials = b.get("n_trials", s.n_trials);
  s.tune_train_frac = b.get("tune_train_frac", s.tune_train_frac);
  if (b.has("search")) {
    if (b.raw("search").is_null()) {
      s.search.reset();
    } else {
      Block sb = b.child("search");
      CfrSearchSpace sp;
      sp.layers = sb.get("layers", sp.layers);
      sp.dims = sb.get("dims", sp.dims);
      const auto alpha = sb.get("alpha", std::vector<double>{sp.alpha_min, sp.alpha_max});
      const auto lr = sb.get("learning_rate", std::vector<double>{sp.lr_min, sp.lr_max});
      if (alpha.size() != 2) throw ConfigError(sb.at("alpha") + ": expected [min, max]");
      if (lr.size() != 2) throw ConfigError(sb.at("learning_rate") + ": expected [min, max]");
      check_alpha(alpha[0], sb.at("alpha") + "[0]");
      check_alpha(alpha[1], sb.at("alpha") + "[1]");
      sp.alpha_min = alpha[0];
      sp.alpha_max = alpha[1];
      sp.lr_min = lr[0];
      sp.lr_max = lr[1];
      sb.finish();
      s.search = sp;
    }
  }
  b.finish();
  checked("cfr", [&] { s.validate(); });
  return s;
}

json cfr_json(const CfrSelectionSpec& s) {
  const CfrConfig& f = s.fixed;
  json j{{"rep_layers", f.rep_layers},     {"rep_dim", f.rep_dim},
         {"head_layers", f.head_layers},   {"head_dim", f.head_dim},
         {"alpha", f.alpha},               {"learning_rate", f.learning_rate},
         {"batch_size", f.batch_size},     {"dropout", f.dropout},
         {"epochs", f.epochs},             {"patience", f.patience},
         {"sinkhorn_reg", f.sinkhorn_reg}, {"sinkhorn_iters", f.sinkhorn_iters},
         {"ipm_full_batch", f.ipm_full_batch}, {"n_trials", s.n_trials},
         {"tune_train_frac", s.tune_train_frac}};
  if (s.search) {
    j["search"] = {{"layers", s.search->layers},
                   {"dims", s.search->dims},
                   {"alpha", {s.search->alpha_min, s.search->alpha_max}},
                   {"learning_rate", {s.search->lr_min, s.search->lr_max}}};
  } else {
    j["search"] = nullptr;
  }
  return j;
}

GbrSearchSpace read_gbr_space(Block b) {
  GbrSearchSpace g;
  g.n_estimators = b.get("n_estimators", g.n_estimators);
  const auto depth = b.get("max_depth", std::vector<int>{g.depth_min, g.depth_max});
  const auto leaf = b.get("min_samples_leaf", std::vector<int>{g.leaf_min, g.leaf_max});
  const auto lr = b.get("learning_rate", std::vector<double>{g.lr_min, g.lr_max});
  if (depth.size() != 2) throw ConfigError(b.at("max_depth") + ": expected [min, max]");
  if (leaf.size() != 2) throw ConfigError(b.at("min_samples_leaf") + ": expected [min, max]");
  if (lr.size() != 2) throw ConfigError(b.at("learning_rate") + ": expected [min, max]");
  g.depth_min = depth[0];
  g.depth_max = depth[1];
  g.leaf_min = leaf[0];
  g.leaf_max = leaf[1];
  g.lr_min = lr[0];
  g.lr_max = lr[1];
  g.subsample = b.get("subsample", g.subsample);
  b.finish();
  checked("tuning.gbr_space", [&] { g.validate(); });
  return g;
}

json gbr_space_json(const GbrSearchSpace& g) {
  return {{"n_estimators", g.n_estimators},
          {"max_depth", {g.depth_min, g.depth_max}},
          {"min_samples_leaf", {g.leaf_min, g.leaf_max}},
          {"learning_rate", {g.lr_min, g.lr_max}},
          {"subsample", g.subsample}};
}

OracleSuiteOptions read_verify(Block b) {
  OracleSuiteOptions o;
  o.identity_trials = b.get("identity_trials", o.identity_trials);
  o.weight_samples = b.get("weight_samples", o.weight_samples);
  o.unbiasedness_settings = b.get("unbiasedness_settings", o.unbiasedness_settings);
  o.unbiasedness_draws = b.get("unbiasedness_draws", o.unbiasedness_draws);
  o.variance_outer = b.get("variance_outer", o.variance_outer);
  o.variance_inner = b.get("variance_inner", o.variance_inner);
  o.covariance_draws = b.get("covariance_draws", o.covariance_draws);
  o.decomposition_replications = b.get("decomposition_replications", o.decomposition_replications);
  o.decomposition_n = b.get("decomposition_n", o.decomposition_n);
  b.finish();
  auto positive = [&](std::int64_t v, const char* key, std::int64_t min) {
    if (v < min) throw ConfigError(fmt::format("{}: must be >= {}", b.at(key), min));
  };
  positive(o.identity_trials, "identity_trials", 1);
  positive(o.weight_samples, "weight_samples", 1);
  positive(o.unbiasedness_settings, "unbiasedness_settings", 1);
  positive(o.unbiasedness_draws, "unbiasedness_draws", 2);
  positive(o.variance_outer, "variance_outer", 1);
  positive(o.variance_inner, "variance_inner", 2);
  positive(o.covariance_draws, "covariance_draws", 2);
  positive(o.decomposition_replications, "decomposition_replications", 2);
  positive(o.decomposition_n, "decomposition_n", 1);
  return o;
}

json verify_json(const OracleSuiteOptions& o) {
  return {{"identity_trials", o.identity_trials},
          {"weight_samples", o.weight_samples},
          {"unbiasedness_settings", o.unbiasedness_settings},
          {"unbiasedness_draws", o.unbiasedness_draws},
          {"variance_outer", o.variance_outer},
          {"variance_inner", o.variance_inner},
          {"covariance_draws", o.covariance_draws},
          {"decomposition_replications", o.decomposition_replications},
          {"decomposition_n", o.decomposition_n}};
}

PropensitySource propensity_source_from_string(const std::string& name, const std::string& path) {
  if (name == "estimated") return PropensitySource::Estimated;
  if (name == "true") return PropensitySource::True;
  throw ConfigError(path + ": unknown value '" + name + "' (expected estimated or true)");
}

}  // namespace

ExperimentConfig validate_config(const json& raw) {
  if (!raw.is_object()) throw ConfigError("config: expected an object");
  if (!raw.contains("mode")) throw ConfigError("mode: required key is missing");
  if (!raw.at("mode").is_string()) throw ConfigError("mode: expected a string");
  return validate_config(raw, mode_from_string(raw.at("mode").get<std::string>()));
}

ExperimentConfig validate_config(const json& raw, Mode mode) {
  Block root(raw, "");
  ExperimentConfig cfg;
  cfg.mode = mode;
  if (root.has("mode")) {
    const auto named = mode_from_string(root.require<std::string>("mode"));
    if (named != mode) {
      throw ConfigError("mode: config file says '" + to_string(named) + "' but the command is '" + to_string(mode) + "'");
    }
  }
  auto& s = cfg.settings;
  s.seed = root.get("seed", s.seed);
  const int threads = root.get("threads", static_cast<int>(s.threads));
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  s.threads = static_cast<std::size_t>(threads);
  cfg.output = root.get("output", cfg.output);
  // gen writes a single file unless more realizations are asked for.
  if (mode == Mode::Generate) s.realizations = 1;
  s.realizations = root.get("realizations", s.realizations);
  if (s.realizations < 1) throw ConfigError("realizations: must be >= 1");

  if (root.has("data")) {
    Block d = root.child("data");
    if (d.has("synthetic")) s.source.synthetic = read_dgp(d.child("synthetic"));
    if (d.has("csv_dir")) s.source.csv_dir = d.get<std::string>("csv_dir", "");
    d.finish();
    checked("data", [&] { s.source.validate(); });
  } else if (mode != Mode::Verify) {
    throw ConfigError("data: required block is missing");
  }
  if (mode == Mode::Generate && !s.source.synthetic) throw ConfigError("data.synthetic: required by gen");

  if (root.has("split")) {
    Block b = root.child("split");
    s.split.train_frac = b.get("train", s.split.train_frac);
    s.split.val_frac = b.get("validation", s.split.val_frac);
    s.split.test_frac = b.get("test", s.split.test_frac);
    s.split.seed = b.get("seed", s.split.seed);
    b.finish();
    checked("split", [&] { s.split.validate(); });
  }

  if (root.has("metrics")) {
    const auto names = root.get<std::vector<std::string>>("metrics", {});
    if (names.empty()) throw ConfigError("metrics: must not be empty");
    s.metrics.clear();
    std::set<Metric> seen;
    for (const auto& n : names) {
      Metric m;
      try {
        m = metric_from_string(n);
      } catch (const ConfigError& err) {
        throw ConfigError(std::string("metrics: ") + err.what());
      }
      if (!seen.insert(m).second) throw ConfigError("metrics: duplicate entry '" + n + "'");
      s.metrics.push_back(m);
    }
  }
  if (mode == Mode::AlphaSweep) s.metrics = {Metric::CFCV};

  if (root.has("propensity")) {
    Block b = root.child("propensity");
    s.propensity_source = propensity_source_from_string(b.get<std::string>("source", "estimated"), b.at("source"));
    s.propensity_l2 = b.get("l2_penalty", s.propensity_l2);
    s.propensity_clip = b.get("clip", s.propensity_clip);
    b.finish();
    if (!(s.propensity_l2 >= 0.0)) throw ConfigError("propensity.l2_penalty: must be >= 0");
    if (!(s.propensity_clip > 0.0 && s.propensity_clip < 0.5)) throw ConfigError("propensity.clip: must lie in (0, 0.5)");
  }

  if (root.has("candidates")) cfg.candidates = read_candidates(root.child("candidates"));
  if (root.has("cfr")) s.cfr = read_cfr(root.child("cfr"));

  if (root.has("tuning")) {
    Block b = root.child("tuning");
    cfg.n_trials = b.get("n_trials", cfg.n_trials);
    if (cfg.n_trials < 1) throw ConfigError("tuning.n_trials: must be >= 1");
    if (b.has("gbr_space")) cfg.gbr_space = read_gbr_space(b.child("gbr_space"));
    b.finish();
  }

  if (root.has("alpha_sweep")) {
    Block b = root.child("alpha_sweep");
    cfg.alpha_grid = b.get("alphas", cfg.alpha_grid);
    b.finish();
  }
  if (cfg.alpha_grid.empty()) throw ConfigError("alpha_sweep.alphas: must not be empty");
  for (std::size_t i = 0; i < cfg.alpha_grid.size(); ++i) {
    check_alpha(cfg.alpha_grid[i], fmt::format("alpha_sweep.alphas[{}]", i));
  }

  if (root.has("verify")) cfg.verify = read_verify(root.child("verify"));
  cfg.verify.seed = s.seed;
  cfg.verify.threads = s.threads;

  root.finish();
  if (mode == Mode::Select || mode == Mode::Tune || mode == Mode::AlphaSweep) {
    const int available = available_realizations(s.source);
    if (s.realizations > available) {
      throw ConfigError(fmt::format("realizations: {} requested but the data source holds {}", s.realizations,
                                    available));
    }
    if (s.propensity_source == PropensitySource::True && !s.source.synthetic) {
      throw ConfigError("propensity.source: 'true' needs data.synthetic");
    }
    const bool truth_metric = std::find(s.metrics.begin(), s.metrics.end(), Metric::TrueRisk) != s.metrics.end();
    if (truth_metric && mode == Mode::Select) {
      spdlog::info("true-risk in select mode scores candidates against the validation-fold CATE");
    }
  }
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.settings;
  json j;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = s.seed;
  j["threads"] = s.threads;
  j["output"] = cfg.output;
  j["realizations"] = s.realizations;
  if (s.source.synthetic) j["data"]["synthetic"] = dgp_json(*s.source.synthetic);
  if (s.source.csv_dir) j["data"]["csv_dir"] = s.source.csv_dir->string();
  j["split"] = {{"train", s.split.train_frac},
                {"validation", s.split.val_frac},
                {"test", s.split.test_frac},
                {"seed", s.split.seed}};
  json metrics = json::array();
  for (auto m : s.metrics) metrics.push_back(to_string(m));
  j["metrics"] = metrics;
  j["propensity"] = {{"source", s.propensity_source == PropensitySource::True ? "true" : "estimated"},
                     {"l2_penalty", s.propensity_l2},
                     {"clip", s.propensity_clip}};
  j["candidates"] = candidates_json(cfg.candidates);
  j["cfr"] = cfr_json(s.cfr);
  j["tuning"] = {{"n_trials", cfg.n_trials}, {"gbr_space", gbr_space_json(cfg.gbr_space)}};
  j["alpha_sweep"] = {{"alphas", cfg.alpha_grid}};
  j["verify"] = verify_json(cfg.verify);
  return j;
}

SelectionConfig selection_config(const ExperimentConfig& cfg) { return {cfg.settings, cfg.candidates}; }

TuningConfig tuning_config(const ExperimentConfig& cfg) { return {cfg.settings, cfg.gbr_space, cfg.n_trials}; }

std::string describe_defaults() {
  ExperimentConfig cfg;
  cfg.settings.source.synthetic = DgpConfig{};
  std::ostringstream out;
  out << "Config defaults (any key may be omitted; 'data' is required except for verify;\n"
         "exactly one of data.synthetic or data.csv_dir):\n"
      << to_json(cfg).dump(2) << '\n'
      << "cfr.alpha, cfr.search.alpha and alpha_sweep.alphas must lie in [" << kAlphaMin << ", " << kAlphaMax
      << "].\n";
  return out.str();
}

}  // namespace cfcv
