#include "cfcv/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

namespace cfcv {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

Vector standard_normal_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Vector unit_direction(Eigen::Index d, std::mt19937_64& rng) {
  Vector v = standard_normal_vector(d, rng);
  const double norm = v.norm();
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

}  // namespace

ObservationalDataset::ObservationalDataset(Matrix features, IntVector treatments, Vector outcomes)
    : features_(std::move(features)), treatments_(std::move(treatments)), outcomes_(std::move(outcomes)) {
  const auto n = features_.rows();
  if (n < 1) throw InvalidArgument("dataset must contain at least one unit");
  if (features_.cols() < 1) throw InvalidArgument("dataset must have at least one covariate");
  if (treatments_.size() != n || outcomes_.size() != n) {
    throw InvalidArgument("features, treatments and outcomes must have the same length");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatments_[i] != 0 && treatments_[i] != 1) {
      throw InvalidArgument("treatment of unit " + std::to_string(i) + " is not binary");
    }
  }
  if (!features_.allFinite() || !outcomes_.allFinite()) {
    throw InvalidArgument("dataset contains non-finite values");
  }
}

void ObservationalDataset::require_both_arms(const std::string& context) const {
  if (!has_both_arms()) {
    throw DataError(context + ": both treatment arms must be non-empty (treated=" +
                    std::to_string(treated_count()) + ", control=" + std::to_string(control_count()) + ")");
  }
}

ObservationalDataset ObservationalDataset::subset(const std::vector<Eigen::Index>& rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix x(m, dim());
  IntVector t(m);
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    x.row(r) = features_.row(i);
    t[r] = treatments_[i];
    y[r] = outcomes_[i];
  }
  return {std::move(x), std::move(t), std::move(y)};
}

std::vector<Eigen::Index> ObservationalDataset::arm_indices(int arm) const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (treatments_[i] == arm) out.push_back(i);
  }
  return out;
}

GroundTruth GroundTruth::from_surfaces(Vector mu0, Vector mu1, std::optional<Vector> propensity) {
  if (mu0.size() != mu1.size()) throw InvalidArgument("mu0 and mu1 lengths differ");
  if (propensity) {
    if (propensity->size() != mu0.size()) throw InvalidArgument("propensity length differs from mu0");
    for (double e : *propensity) {
      if (!(e > 0.0 && e < 1.0)) throw InvalidArgument("true propensity must lie strictly in (0, 1)");
    }
  }
  GroundTruth truth;
  truth.tau = mu1 - mu0;
  truth.mu0 = std::move(mu0);
  truth.mu1 = std::move(mu1);
  truth.propensity = std::move(propensity);
  return truth;
}

GroundTruth GroundTruth::subset(const std::vector<Eigen::Index>& rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  GroundTruth out;
  out.tau.resize(m);
  out.mu0.resize(m);
  out.mu1.resize(m);
  if (propensity) out.propensity = Vector(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    out.tau[r] = tau[i];
    out.mu0[r] = mu0[i];
    out.mu1[r] = mu1[i];
    if (propensity) (*out.propensity)[r] = (*propensity)[i];
  }
  return out;
}

std::string to_string(ResponseSurface surface) {
  switch (surface) {
    case ResponseSurface::Linear:
      return "linear";
    case ResponseSurface::NonlinearExponential:
      return "nonlinear-exponential";
  }
  return "unknown";
}

ResponseSurface response_surface_from_string(const std::string& name) {
  if (name == "linear") return ResponseSurface::Linear;
  if (name == "nonlinear-exponential") return ResponseSurface::NonlinearExponential;
  throw ConfigError("unknown response surface '" + name + "' (expected linear or nonlinear-exponential)");
}

void DgpConfig::validate() const {
  if (n < 4) throw ConfigError("dgp.n must be >= 4");
  if (d < 1) throw ConfigError("dgp.d must be >= 1");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) throw ConfigError("dgp.noise_scale must be > 0");
  if (!(confounding_strength >= 0.0) || !std::isfinite(confounding_strength)) {
    throw ConfigError("dgp.confounding_strength must be >= 0");
  }
  if (!std::isfinite(treatment_effect)) throw ConfigError("dgp.treatment_effect must be finite");
  if (!(effect_heterogeneity >= 0.0) || !std::isfinite(effect_heterogeneity)) {
    throw ConfigError("dgp.effect_heterogeneity must be >= 0");
  }
}

SyntheticSurface SyntheticSurface::draw(const DgpConfig& config) {
  config.validate();
  SyntheticSurface s;
  s.config_ = config;
  // Surface parameters use their own stream so that they do not depend on n.
  std::mt19937_64 rng(mix_seed(config.seed, 0));
  const auto d = static_cast<Eigen::Index>(config.d);
  s.propensity_coef_ = unit_direction(d, rng);
  if (config.response_surface == ResponseSurface::Linear) {
    s.outcome_coef_ = standard_normal_vector(d, rng) / std::sqrt(static_cast<double>(d));
    s.effect_coef_ = unit_direction(d, rng) * config.effect_heterogeneity;
  } else {
    // Sparse coefficients on {0, .1, .2, .3, .4} with probabilities (.6, .1, .1, .1, .1).
    std::discrete_distribution<int> pick({0.6, 0.1, 0.1, 0.1, 0.1});
    s.outcome_coef_.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) s.outcome_coef_[j] = 0.1 * pick(rng);
    s.effect_coef_ = Vector::Zero(d);
    // E[exp(<b, x + 0.5>)] for standard normal x, so the mean effect equals treatment_effect.
    const double mean_mu0 =
        std::exp(0.5 * s.outcome_coef_.sum() + 0.5 * s.outcome_coef_.squaredNorm());
    s.exp_offset_ = config.treatment_effect + mean_mu0;
  }
  return s;
}

Vector SyntheticSurface::propensity(const Matrix& x) const {
  Vector logits = config_.confounding_strength * (x * propensity_coef_);
  Vector e(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    e[i] = std::clamp(sigmoid(logits[i]), kPropensityFloor, kPropensityCeil);
  }
  return e;
}

Vector SyntheticSurface::mu0(const Matrix& x) const {
  const Vector linear = x * outcome_coef_;
  if (config_.response_surface == ResponseSurface::Linear) return linear;
  const double shift = 0.5 * outcome_coef_.sum();
  return (linear.array() + shift).exp().matrix();
}

Vector SyntheticSurface::mu1(const Matrix& x) const {
  const Vector linear = x * outcome_coef_;
  if (config_.response_surface == ResponseSurface::Linear) {
    return linear + x * effect_coef_ + Vector::Constant(x.rows(), config_.treatment_effect);
  }
  return linear + Vector::Constant(x.rows(), exp_offset_);
}

SyntheticSample generate_synthetic(const DgpConfig& config) {
  SyntheticSurface surface = SyntheticSurface::draw(config);
  const auto n = static_cast<Eigen::Index>(config.n);
  const auto d = static_cast<Eigen::Index>(config.d);
  std::mt19937_64 rng(mix_seed(config.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = normal(rng);
  }
  Vector e = surface.propensity(x);
  Vector m0 = surface.mu0(x);
  Vector m1 = surface.mu1(x);

  IntVector t(n);
  constexpr int kMaxTreatmentRetries = 100;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  bool both_arms = false;
  for (int attempt = 0; attempt < kMaxTreatmentRetries && !both_arms; ++attempt) {
    for (Eigen::Index i = 0; i < n; ++i) t[i] = unif(rng) < e[i] ? 1 : 0;
    const auto treated = t.sum();
    both_arms = treated > 0 && treated < n;
  }
  if (!both_arms) throw DataError("synthetic treatment draw produced a single arm after retries");

  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = (t[i] == 1 ? m1[i] : m0[i]) + config.noise_scale * normal(rng);
  }
  GroundTruth truth = GroundTruth::from_surfaces(std::move(m0), std::move(m1), std::move(e));
  return {ObservationalDataset(std::move(x), std::move(t), std::move(y)), std::move(truth),
          std::move(surface)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  field = trim(field);
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc() || ptr != last) {
    throw ParseError("malformed number '" + std::string(field) + "' in column " + std::string(column), line);
  }
  if (!std::isfinite(value)) {
    throw ParseError("non-finite value in column " + std::string(column), line);
  }
  return value;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

LoadedCsv parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw ParseError("empty file: missing header", 1);
  ++line_no;
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_fields(trim(line));
  std::vector<std::string> names;
  for (auto h : header) names.emplace_back(trim(h));
  if (names.size() < 3 || names[0] != "t" || names[1] != "y") {
    throw ParseError("header must start with columns t,y", line_no);
  }
  std::size_t first_x = 2;
  bool has_truth = false;
  if (names[2] == "mu0") {
    if (names.size() < 5 || names[3] != "mu1") throw ParseError("column mu0 must be followed by mu1", line_no);
    has_truth = true;
    first_x = 4;
  }
  const std::size_t d = names.size() - first_x;
  if (d < 1) throw ParseError("header declares no covariate columns", line_no);
  for (std::size_t j = 0; j < d; ++j) {
    const std::string expected = "x" + std::to_string(j + 1);
    if (names[first_x + j] != expected) {
      throw ParseError("expected column '" + expected + "' but found '" + names[first_x + j] + "'", line_no);
    }
  }

  std::vector<double> xs, ys, m0s, m1s;
  std::vector<int> ts;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_fields(body);
    if (fields.size() != names.size()) {
      throw ParseError("expected " + std::to_string(names.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const double t = parse_number(fields[0], line_no, "t");
    if (t != 0.0 && t != 1.0) throw ParseError("treatment must be 0 or 1", line_no);
    ts.push_back(static_cast<int>(t));
    ys.push_back(parse_number(fields[1], line_no, "y"));
    if (has_truth) {
      m0s.push_back(parse_number(fields[2], line_no, "mu0"));
      m1s.push_back(parse_number(fields[3], line_no, "mu1"));
    }
    for (std::size_t j = 0; j < d; ++j) {
      xs.push_back(parse_number(fields[first_x + j], line_no, names[first_x + j]));
    }
  }
  const auto n = static_cast<Eigen::Index>(ts.size());
  if (n == 0) throw ParseError("file contains no data rows", line_no);

  Matrix x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
      x(i, j) = xs[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }
  }
  IntVector tv = Eigen::Map<const IntVector>(ts.data(), n);
  Vector yv = Eigen::Map<const Vector>(ys.data(), n);
  std::optional<GroundTruth> truth;
  if (has_truth) {
    truth = GroundTruth::from_surfaces(Eigen::Map<const Vector>(m0s.data(), n),
                                       Eigen::Map<const Vector>(m1s.data(), n), std::nullopt);
  }
  return {ObservationalDataset(std::move(x), std::move(tv), std::move(yv)), std::move(truth)};
}

LoadedCsv load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_csv(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.row());
  }
}

std::string format_csv(const ObservationalDataset& data, const std::optional<GroundTruth>& truth) {
  if (truth && truth->size() != data.size()) throw InvalidArgument("truth length differs from data");
  std::string out = "t,y";
  if (truth) out += ",mu0,mu1";
  for (Eigen::Index j = 0; j < data.dim(); ++j) out += ",x" + std::to_string(j + 1);
  out += '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out += data.treatments()[i] == 1 ? '1' : '0';
    out += ',';
    append_number(out, data.outcomes()[i]);
    if (truth) {
      out += ',';
      append_number(out, truth->mu0[i]);
      out += ',';
      append_number(out, truth->mu1[i]);
    }
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      out += ',';
      append_number(out, data.features()(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const ObservationalDataset& data,
               const std::optional<GroundTruth>& truth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_csv(data, truth);
  if (!out) throw Error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Splitting

void SplitSpec::validate() const {
  for (double f : {train_frac, val_frac, test_frac}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

DataSplit split(const ObservationalDataset& data, const std::optional<GroundTruth>& truth,
                const SplitSpec& spec) {
  spec.validate();
  const auto n = data.size();
  if (truth && truth->size() != n) throw InvalidArgument("truth length differs from data");
  const auto n_train = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * spec.train_frac));
  const auto n_val = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * spec.val_frac));
  const auto n_test = n - n_train - n_val;
  if (n_train < 2 || n_val < 2 || n_test < 1) {
    throw DataError("dataset of " + std::to_string(n) + " units is too small for the requested split");
  }

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(spec.seed);

  auto covers_both_arms = [&](std::size_t begin, std::size_t end) {
    bool treated = false, control = false;
    for (std::size_t k = begin; k < end; ++k) {
      (data.treatments()[perm[k]] == 1 ? treated : control) = true;
    }
    return treated && control;
  };

  const auto tr = static_cast<std::size_t>(n_train);
  const auto va = static_cast<std::size_t>(n_val);
  bool ok = false;
  for (int attempt = 0; attempt < kMaxSplitRetries && !ok; ++attempt) {
    std::shuffle(perm.begin(), perm.end(), rng);
    ok = covers_both_arms(0, tr) && covers_both_arms(tr, tr + va);
  }
  if (!ok) throw DataError("could not draw a split with both arms in train and validation");

  auto make_part = [&](std::size_t begin, std::size_t end) {
    std::vector<Eigen::Index> idx(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                  perm.begin() + static_cast<std::ptrdiff_t>(end));
    std::optional<GroundTruth> part_truth;
    if (truth) part_truth = truth->subset(idx);
    ObservationalDataset part = data.subset(idx);
    return SplitPart{std::move(part), std::move(part_truth), std::move(idx)};
  };
  return {make_part(0, tr), make_part(tr, tr + va), make_part(tr + va, static_cast<std::size_t>(n))};
}

}  // namespace cfcv
