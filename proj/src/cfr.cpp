#include "cfcv/cfr.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace cfcv {

std::string to_string(CfrWeighting weighting) {
  return weighting == CfrWeighting::Balanced ? "balanced" : "uniform";
}

CfrWeighting cfr_weighting_from_string(const std::string& name) {
  if (name == "balanced") return CfrWeighting::Balanced;
  if (name == "uniform") return CfrWeighting::Uniform;
  throw ConfigError("unknown CFR weighting '" + name + "' (expected balanced or uniform)");
}

void CfrConfig::validate() const {
  if (rep_layers < 1 || rep_layers > 3) throw ConfigError("cfr.rep_layers must lie in [1, 3]");
  if (head_layers < 1 || head_layers > 3) throw ConfigError("cfr.head_layers must lie in [1, 3]");
  if (rep_dim < 1 || head_dim < 1) throw ConfigError("cfr layer widths must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 100.0)) throw ConfigError("cfr.alpha must lie in [0, 100]");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("cfr.learning_rate must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("cfr.batch_size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cfr.dropout must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("cfr.epochs must be >= 1");
  if (patience < 0) throw ConfigError("cfr.patience must be >= 0");
  if (!(sinkhorn_reg > 0.0)) throw ConfigError("cfr.sinkhorn_reg must be > 0");
  if (sinkhorn_iters < 1) throw ConfigError("cfr.sinkhorn_iters must be >= 1");
}

double balancing_weight(double e, int t) {
  if (!(e > 0.0 && e < 1.0)) throw InvalidArgument("propensity must lie strictly in (0, 1)");
  return t == 1 ? (1.0 - e) / e : e / (1.0 - e);
}

BalancingWeights balancing_weights(const Vector& propensity, const IntVector& treatments) {
  if (propensity.size() != treatments.size()) throw InvalidArgument("propensity and treatment lengths differ");
  const auto n = treatments.size();
  const double n1 = treatments.sum();
  const double n0 = static_cast<double>(n) - n1;
  if (n1 == 0 || n0 == 0) throw DataError("balancing weights need both treatment arms");
  const double pi1 = n1 / static_cast<double>(n);
  const double pi0 = n0 / static_cast<double>(n);
  BalancingWeights out{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = treatments[i];
    out.w[i] = balancing_weight(propensity[i], t);
    out.w_prime[i] = 0.5 * out.w[i] * (t == 1 ? 1.0 / pi1 : 1.0 / pi0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

namespace {

struct LayerCache {
  Matrix input;  // in x b
  Matrix pre;    // out x b
  Matrix mask;   // out x b, empty when dropout is off
};

void elu_inplace(Matrix& z) {
  z = z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

Matrix elu_grad(const Matrix& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
}

Matrix gather_columns(const Matrix& m, const std::vector<Eigen::Index>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

}  // namespace

CfrNetwork::CfrNetwork(Eigen::Index input_dim, const CfrConfig& cfg) : input_dim_(input_dim) {
  if (input_dim < 1) throw InvalidArgument("CFR input dimension must be >= 1");
  cfg.validate();
  Eigen::Index offset = 0;
  auto add = [&](std::vector<Dense>& stack, Eigen::Index in, Eigen::Index out) {
    Dense layer{in, out, offset, offset + in * out};
    offset += in * out + out;
    stack.push_back(layer);
  };
  Eigen::Index width = input_dim;
  for (int l = 0; l < cfg.rep_layers; ++l) {
    add(rep_, width, cfg.rep_dim);
    width = cfg.rep_dim;
  }
  for (auto& head : heads_) {
    Eigen::Index w = cfg.rep_dim;
    for (int l = 0; l < cfg.head_layers; ++l) {
      add(head, w, cfg.head_dim);
      w = cfg.head_dim;
    }
    add(head, w, 1);
  }
  params_ = Vector::Zero(offset);
}

Eigen::Index CfrNetwork::representation_dim() const noexcept { return rep_.back().out; }

Eigen::Map<const Matrix> CfrNetwork::weight(const Dense& layer) const {
  return {params_.data() + layer.weight_offset, layer.out, layer.in};
}

Eigen::Map<const Vector> CfrNetwork::bias(const Dense& layer) const {
  return {params_.data() + layer.bias_offset, layer.out};
}

void CfrNetwork::initialize(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  params_.setZero();
  auto init = [&](const std::vector<Dense>& stack) {
    for (const auto& layer : stack) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
      for (Eigen::Index k = 0; k < layer.in * layer.out; ++k) params_[layer.weight_offset + k] = scale * normal(rng);
    }
  };
  init(rep_);
  init(heads_[0]);
  init(heads_[1]);
}

Matrix CfrNetwork::representation(const Matrix& x) const {
  if (x.cols() != input_dim_) throw InvalidArgument("CFR input has the wrong number of features");
  Matrix a = x.transpose();
  for (const auto& layer : rep_) {
    Matrix z = (weight(layer) * a).colwise() + bias(layer);
    elu_inplace(z);
    a = std::move(z);
  }
  return a.transpose();
}

Vector CfrNetwork::predict(const Matrix& x, int t) const {
  if (t != 0 && t != 1) throw InvalidArgument("treatment must be 0 or 1");
  Matrix a = representation(x).transpose();
  const auto& head = heads_[t];
  for (std::size_t l = 0; l < head.size(); ++l) {
    Matrix z = (weight(head[l]) * a).colwise() + bias(head[l]);
    if (l + 1 < head.size()) elu_inplace(z);
    a = std::move(z);
  }
  return a.row(0).transpose();
}

CfrNetwork::BatchObjective CfrNetwork::objective(const Matrix& x, const IntVector& t, const Vector& y,
                                                 const Vector& w_prime, const BatchOptions& options) const {
  const auto b = x.rows();
  if (x.cols() != input_dim_) throw InvalidArgument("CFR input has the wrong number of features");
  if (t.size() != b || y.size() != b || w_prime.size() != b) throw InvalidArgument("CFR batch lengths differ");
  if (b < 1) throw InvalidArgument("CFR batch is empty");

  const bool use_dropout = options.dropout_rng != nullptr && options.dropout > 0.0;
  std::bernoulli_distribution keep(1.0 - options.dropout);
  const double keep_scale = use_dropout ? 1.0 / (1.0 - options.dropout) : 1.0;

  // Forward through a stack; the final layer of a head is linear.
  auto forward = [&](const std::vector<Dense>& stack, Matrix a, bool last_linear, std::vector<LayerCache>& cache) {
    cache.resize(stack.size());
    for (std::size_t l = 0; l < stack.size(); ++l) {
      auto& c = cache[l];
      c.input = std::move(a);
      c.pre = (weight(stack[l]) * c.input).colwise() + bias(stack[l]);
      Matrix h = c.pre;
      const bool linear = last_linear && l + 1 == stack.size();
      if (!linear) {
        elu_inplace(h);
        if (use_dropout) {
          c.mask.resize(h.rows(), h.cols());
          for (Eigen::Index k = 0; k < h.size(); ++k) {
            c.mask.data()[k] = keep(*options.dropout_rng) ? keep_scale : 0.0;
          }
          h.array() *= c.mask.array();
        } else {
          c.mask.resize(0, 0);
        }
      }
      a = std::move(h);
    }
    return a;
  };

  std::vector<LayerCache> rep_cache;
  const Matrix rep = forward(rep_, x.transpose(), false, rep_cache);  // k x b

  std::vector<Eigen::Index> arm_cols[2];
  for (Eigen::Index i = 0; i < b; ++i) arm_cols[t[i]].push_back(i);

  BatchObjective out;
  Vector dpred = Vector::Zero(b);
  std::vector<LayerCache> head_cache[2];
  double risk = 0.0;
  for (int arm = 0; arm < 2; ++arm) {
    if (arm_cols[arm].empty()) continue;
    const Matrix pred = forward(heads_[arm], gather_columns(rep, arm_cols[arm]), true, head_cache[arm]);
    for (std::size_t k = 0; k < arm_cols[arm].size(); ++k) {
      const auto i = arm_cols[arm][k];
      const double r = pred(0, static_cast<Eigen::Index>(k)) - y[i];
      risk += w_prime[i] * r * r;
      dpred[i] = 2.0 * w_prime[i] * r / static_cast<double>(b);
    }
  }
  out.weighted_risk = risk / static_cast<double>(b);

  Matrix ctrl, trt;
  const bool ipm_active = options.alpha > 0.0 && !arm_cols[0].empty() && !arm_cols[1].empty();
  if (ipm_active) {
    ctrl = gather_columns(rep, arm_cols[0]).transpose();  // m x k
    trt = gather_columns(rep, arm_cols[1]).transpose();   // l x k
    const Matrix cost = squared_euclidean_cost(ctrl, trt);
    if (options.fixed_plan != nullptr) {
      if (options.fixed_plan->rows() != cost.rows() || options.fixed_plan->cols() != cost.cols()) {
        throw InvalidArgument("fixed transport plan has the wrong shape");
      }
      out.plan = *options.fixed_plan;
    } else {
      const double scale = std::max(cost.mean(), 1e-12);
      out.plan = sinkhorn_from_cost(cost, options.sinkhorn_reg * scale, options.sinkhorn_iters).plan;
    }
    out.ipm = (out.plan.array() * cost.array()).sum();
    out.ipm_used = true;
  }
  out.loss = out.weighted_risk + (ipm_active ? options.alpha * out.ipm : 0.0);
  if (!options.compute_gradient) return out;

  out.gradient = Vector::Zero(params_.size());
  auto backward = [&](const std::vector<Dense>& stack, std::vector<LayerCache>& cache, Matrix grad_out,
                      bool last_linear) {
    for (std::size_t l = stack.size(); l-- > 0;) {
      auto& c = cache[l];
      const bool linear = last_linear && l + 1 == stack.size();
      if (!linear) {
        if (c.mask.size() > 0) grad_out.array() *= c.mask.array();
        grad_out.array() *= elu_grad(c.pre).array();
      }
      const auto& layer = stack[l];
      Eigen::Map<Matrix>(out.gradient.data() + layer.weight_offset, layer.out, layer.in) +=
          grad_out * c.input.transpose();
      Eigen::Map<Vector>(out.gradient.data() + layer.bias_offset, layer.out) += grad_out.rowwise().sum();
      grad_out = weight(layer).transpose() * grad_out;
    }
    return grad_out;
  };

  Matrix drep = Matrix::Zero(rep.rows(), b);
  for (int arm = 0; arm < 2; ++arm) {
    if (arm_cols[arm].empty()) continue;
    Matrix g(1, static_cast<Eigen::Index>(arm_cols[arm].size()));
    for (std::size_t k = 0; k < arm_cols[arm].size(); ++k) g(0, static_cast<Eigen::Index>(k)) = dpred[arm_cols[arm][k]];
    const Matrix dr = backward(heads_[arm], head_cache[arm], std::move(g), true);
    for (std::size_t k = 0; k < arm_cols[arm].size(); ++k) drep.col(arm_cols[arm][k]) += dr.col(static_cast<Eigen::Index>(k));
  }
  if (ipm_active) {
    // d<P,C>/da_i = 2 sum_j P_ij (a_i - b_j); d/db_j = 2 sum_i P_ij (b_j - a_i).
    const Vector row_mass = out.plan.rowwise().sum();
    const Vector col_mass = out.plan.colwise().sum().transpose();
    const Matrix da = 2.0 * options.alpha * (row_mass.asDiagonal() * ctrl - out.plan * trt);
    const Matrix db = 2.0 * options.alpha * (col_mass.asDiagonal() * trt - out.plan.transpose() * ctrl);
    for (std::size_t k = 0; k < arm_cols[0].size(); ++k) drep.col(arm_cols[0][k]) += da.row(static_cast<Eigen::Index>(k)).transpose();
    for (std::size_t k = 0; k < arm_cols[1].size(); ++k) drep.col(arm_cols[1][k]) += db.row(static_cast<Eigen::Index>(k)).transpose();
  }
  backward(rep_, rep_cache, std::move(drep), false);
  return out;
}

Vector CfrModel::predict_f(const Matrix& x, int t) const { return network.predict(x, t); }

Vector predict_f(const CfrModel& model, const Matrix& x, int t) { return model.predict_f(x, t); }

double mu_risk(const Vector& f0, const Vector& f1, const ObservationalDataset& data) {
  if (f0.size() != data.size() || f1.size() != data.size()) throw InvalidArgument("mu_risk: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double f = data.treatments()[i] == 1 ? f1[i] : f0[i];
    const double r = data.outcomes()[i] - f;
    total += r * r;
  }
  return total / static_cast<double>(data.size());
}

double mu_risk(const CfrModel& model, const ObservationalDataset& data) {
  return mu_risk(model.predict_f(data.features(), 0), model.predict_f(data.features(), 1), data);
}

// ---------------------------------------------------------------------------
// Training

namespace {

Vector factual_weights(const Vector& e, const IntVector& t, CfrWeighting weighting) {
  if (weighting == CfrWeighting::Balanced) return balancing_weights(e, t).w_prime;
  const auto n = t.size();
  const double pi1 = static_cast<double>(t.sum()) / static_cast<double>(n);
  const double pi0 = 1.0 - pi1;
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = 0.5 * (t[i] == 1 ? 1.0 / pi1 : 1.0 / pi0);
  return w;
}

struct Adam {
  explicit Adam(Eigen::Index size, double lr) : m(Vector::Zero(size)), v(Vector::Zero(size)), lr(lr) {}
  void step(Vector& params, const Vector& grad) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  Vector m, v;
  double lr;
  int t = 0;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
};

}  // namespace

CfrModel train_cfr(const ObservationalDataset& data, const PropensityFunction& propensity, const CfrConfig& cfg,
                   const ObservationalDataset* monitor) {
  cfg.validate();
  data.require_both_arms("CFR training");
  if (!propensity) throw ConfigError("CFR training requires a propensity model");
  const Vector e = propensity(data.features());
  const Vector w_prime = factual_weights(e, data.treatments(), cfg.weighting);
  const ObservationalDataset& mon = monitor != nullptr ? *monitor : data;

  CfrModel model{cfg, CfrNetwork(data.dim(), cfg), {}, 0};
  std::mt19937_64 rng(cfg.seed);
  model.network.initialize(rng);
  Adam adam(model.network.parameters().size(), cfg.learning_rate);

  const auto n = data.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Vector best_params = model.network.parameters();
  double best_mu = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto m = static_cast<Eigen::Index>(rows.size());
      Matrix xb(m, data.dim());
      IntVector tb(m);
      Vector yb(m), wb(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto i = rows[static_cast<std::size_t>(k)];
        xb.row(k) = data.features().row(i);
        tb[k] = data.treatments()[i];
        yb[k] = data.outcomes()[i];
        wb[k] = w_prime[i];
      }
      CfrNetwork::BatchOptions opts;
      opts.alpha = cfg.ipm_full_batch ? 0.0 : cfg.alpha;
      opts.sinkhorn_reg = cfg.sinkhorn_reg;
      opts.sinkhorn_iters = cfg.sinkhorn_iters;
      opts.dropout = cfg.dropout;
      opts.dropout_rng = &rng;
      auto obj = model.network.objective(xb, tb, yb, wb, opts);
      if (cfg.ipm_full_batch && cfg.alpha > 0.0) {
        CfrNetwork::BatchOptions full = opts;
        full.alpha = cfg.alpha;
        full.dropout_rng = nullptr;
        const auto ipm_obj = model.network.objective(data.features(), data.treatments(), data.outcomes(),
                                                     Vector::Zero(n), full);
        obj.loss += ipm_obj.loss;
        obj.gradient += ipm_obj.gradient;
      }
      if (!std::isfinite(obj.loss) || !obj.gradient.allFinite()) {
        throw NumericError("CFR training diverged at epoch " + std::to_string(epoch));
      }
      adam.step(model.network.parameters(), obj.gradient);
    }

    CfrNetwork::BatchOptions eval;
    eval.alpha = cfg.alpha;
    eval.sinkhorn_reg = cfg.sinkhorn_reg;
    eval.sinkhorn_iters = cfg.sinkhorn_iters;
    eval.compute_gradient = false;
    const auto full = model.network.objective(data.features(), data.treatments(), data.outcomes(), w_prime, eval);
    const double mu = mu_risk(model, mon);
    if (!std::isfinite(full.loss) || !std::isfinite(mu)) {
      throw NumericError("CFR training diverged at epoch " + std::to_string(epoch));
    }
    model.history.push_back({epoch, full.weighted_risk, full.ipm, mu});
    if (mu < best_mu) {
      best_mu = mu;
      best_params = model.network.parameters();
      model.best_epoch = epoch;
    } else if (cfg.patience > 0 && epoch - model.best_epoch >= cfg.patience) {
      break;
    }
  }
  model.network.parameters() = best_params;
  return model;
}

void write_history_csv(const std::string& path, const std::vector<CfrEpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "epoch,weighted_loss,ipm,mu_risk\n";
  for (const auto& r : history) out << r.epoch << ',' << r.weighted_loss << ',' << r.ipm << ',' << r.mu_risk << '\n';
}

// ---------------------------------------------------------------------------
// Tuning

void CfrSearchSpace::validate() const {
  if (layers.empty() || dims.empty()) throw ConfigError("cfr search space needs layer and width choices");
  for (int l : layers) {
    if (l < 1 || l > 3) throw ConfigError("cfr search layers must lie in [1, 3]");
  }
  for (int d : dims) {
    if (d < 1) throw ConfigError("cfr search widths must be >= 1");
  }
  if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 100.0)) {
    throw ConfigError("cfr alpha range must satisfy 0 < alpha_min <= alpha_max <= 100");
  }
  if (!(lr_min > 0.0 && lr_min <= lr_max && lr_max <= 1.0)) {
    throw ConfigError("cfr learning-rate range must satisfy 0 < lr_min <= lr_max <= 1");
  }
  base.validate();
}

CfrConfig CfrSearchSpace::sample(std::mt19937_64& rng) const {
  auto log_uniform = [&](double lo, double hi) {
    if (lo == hi) return lo;
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
  };
  auto pick = [&](const std::vector<int>& v) {
    std::uniform_int_distribution<std::size_t> u(0, v.size() - 1);
    return v[u(rng)];
  };
  CfrConfig cfg = base;
  const int layer_count = pick(layers);
  const int width = pick(dims);
  cfg.rep_layers = cfg.head_layers = layer_count;
  cfg.rep_dim = cfg.head_dim = width;
  cfg.alpha = log_uniform(alpha_min, alpha_max);
  cfg.learning_rate = log_uniform(lr_min, lr_max);
  return cfg;
}

CfrTuneResult tune_cfr(const ObservationalDataset& train_fold, const ObservationalDataset& heldout_fold,
                       const PropensityFunction& propensity, const CfrSearchSpace& space, int n_trials,
                       std::uint64_t seed) {
  space.validate();
  if (n_trials < 1) throw ConfigError("cfr tuning needs at least one trial");
  CfrTuneResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_trials; ++k) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    CfrTrial trial{space.sample(rng), std::nullopt, 0};
    trial.config.seed = mix_seed(seed ^ 0x5eedULL, static_cast<std::uint64_t>(k));
    try {
      const auto model = train_cfr(train_fold, propensity, trial.config, &heldout_fold);
      trial.heldout_mu_risk = mu_risk(model, heldout_fold);
      trial.best_epoch = model.best_epoch;
      if (*trial.heldout_mu_risk < best) {
        best = *trial.heldout_mu_risk;
        result.best = trial.config;
        result.best_trial = k;
      }
    } catch (const NumericError& err) {
      spdlog::debug("cfr trial {} failed: {}", k, err.what());
    }
    result.trials.push_back(std::move(trial));
  }
  if (result.best_trial < 0) throw NumericError("every CFR tuning trial diverged");
  return result;
}

}  // namespace cfcv
