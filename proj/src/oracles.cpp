#include "cfcv/oracles.hpp"

#include "cfcv/cfr.hpp"
#include "cfcv/validation_metrics.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <limits>
#include <random>

namespace cfcv {

namespace {

struct Moments {
  double mean = 0.0;
  double m2 = 0.0;
  std::int64_t count = 0;

  void add(double v) {
    ++count;
    const double delta = v - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (v - mean);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double std_error() const { return std::sqrt(variance() / static_cast<double>(count)); }
};

void require_draws(std::int64_t draws) {
  if (draws < 2) throw InvalidArgument("Monte-Carlo oracles need at least two draws");
}

}  // namespace

MeanEstimate oracle_dr_unbiasedness(const PointSetting& s, std::int64_t draws, std::uint64_t seed, double bias) {
  require_draws(draws);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution treat(s.e);
  std::normal_distribution<double> noise(0.0, 1.0);
  Moments acc;
  for (std::int64_t k = 0; k < draws; ++k) {
    const int t = treat(rng) ? 1 : 0;
    const double y = t == 1 ? s.m1 + s.sigma1 * noise(rng) : s.m0 + s.sigma0 * noise(rng);
    acc.add(dr_tau(t, y, s.e, s.f0, s.f1) + bias);
  }
  return {acc.mean, acc.std_error(), s.m1 - s.m0};
}

MeanEstimate oracle_arm_covariance(const PointSetting& s, std::int64_t draws, std::uint64_t seed) {
  require_draws(draws);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution treat(s.e);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(draws)), b(static_cast<std::size_t>(draws));
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const int t = treat(rng) ? 1 : 0;
    const double y = t == 1 ? s.m1 + s.sigma1 * noise(rng) : s.m0 + s.sigma0 * noise(rng);
    a[k] = t / s.e * (y - s.f1) + s.f1;
    b[k] = (1 - t) / (1.0 - s.e) * (y - s.f0) + s.f0;
    mean_a += a[k];
    mean_b += b[k];
  }
  mean_a /= static_cast<double>(draws);
  mean_b /= static_cast<double>(draws);
  Moments acc;
  for (std::size_t k = 0; k < a.size(); ++k) acc.add((a[k] - mean_a) * (b[k] - mean_b));
  return {acc.mean, acc.std_error(), -(s.f1 - s.m1) * (s.f0 - s.m0)};
}

PointSetting ToyProcess::at(double x) const {
  return {e(x), m0(x), m1(x), sigma0, sigma1, f0(x), f1(x)};
}

double dr_conditional_variance(const PointSetting& s) {
  const double w1 = balancing_weight(s.e, 1);
  const double w0 = balancing_weight(s.e, 0);
  const double zeta = s.sigma1 * s.sigma1 / s.e + s.sigma0 * s.sigma0 / (1.0 - s.e);
  const double excess = std::sqrt(w1) * (s.f1 - s.m1) + std::sqrt(w0) * (s.f0 - s.m0);
  return zeta + excess * excess;
}

VarianceReport oracle_dr_variance(const ToyProcess& process, std::int64_t outer, std::int64_t inner, std::uint64_t seed,
                            std::size_t threads) {
  if (outer < 1) throw InvalidArgument("variance oracle needs at least one covariate draw");
  require_draws(inner);
  struct Slot {
    double empirical, zeta, excess;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(outer));
  parallel_for(slots.size(), threads, [&](std::size_t j) {
    std::mt19937_64 rng(mix_seed(seed, j));
    std::normal_distribution<double> normal(0.0, 1.0);
    const PointSetting s = process.at(normal(rng));
    std::bernoulli_distribution treat(s.e);
    Moments acc;
    for (std::int64_t k = 0; k < inner; ++k) {
      const int t = treat(rng) ? 1 : 0;
      const double y = t == 1 ? s.m1 + s.sigma1 * normal(rng) : s.m0 + s.sigma0 * normal(rng);
      acc.add(dr_tau(t, y, s.e, s.f0, s.f1));
    }
    const double zeta = s.sigma1 * s.sigma1 / s.e + s.sigma0 * s.sigma0 / (1.0 - s.e);
    slots[j] = {acc.variance(), zeta, dr_conditional_variance(s) - zeta};
  });
  VarianceReport r;
  for (const auto& s : slots) {
    r.empirical += s.empirical;
    r.zeta += s.zeta;
    r.excess += s.excess;
  }
  const double m = static_cast<double>(outer);
  r.empirical /= m;
  r.zeta /= m;
  r.excess /= m;
  r.closed_form = r.zeta + r.excess;
  return r;
}

DecompositionReport oracle_decomposition(const DgpConfig& dgp, LabelRule rule, std::int64_t n, std::int64_t replications,
                                 std::uint64_t seed, std::size_t threads) {
  if (n < 1) throw InvalidArgument("decomposition oracle needs n >= 1");
  require_draws(replications);
  dgp.validate();
  const SyntheticSurface surface = SyntheticSurface::draw(dgp);
  struct Slot {
    double estimate, true_risk, label_error, gap;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(replications));
  parallel_for(slots.size(), threads, [&](std::size_t r) {
    std::mt19937_64 rng(mix_seed(seed, r));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix x(n, dgp.d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
    const Vector e = surface.propensity(x);
    const Vector m0 = surface.mu0(x);
    const Vector m1 = surface.mu1(x);
    const Vector tau = m1 - m0;
    IntVector t(n);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      t[i] = unif(rng) < e[i] ? 1 : 0;
      y[i] = (t[i] == 1 ? m1[i] : m0[i]) + dgp.noise_scale * normal(rng);
    }
    Vector tilde = rule == LabelRule::IPW ? ipw_tau(t, y, e) : dr_tau(t, y, e, 0.5 * m0, 0.5 * m1);
    if (rule == LabelRule::BiasedDR) tilde.array() += 1.0;
    const Vector hat = (0.5 * tau).array() + 0.5;
    const Decomposition d = decompose(tau, tilde, hat);
    slots[r] = {d.estimate, d.true_risk, d.label_error, d.estimate - d.true_risk - d.label_error};
  });
  Moments est, tr, le, gap;
  for (const auto& s : slots) {
    est.add(s.estimate);
    tr.add(s.true_risk);
    le.add(s.label_error);
    gap.add(s.gap);
  }
  return {est.mean, tr.mean, le.mean, gap.mean, gap.std_error()};
}

std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& o) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  {
    double worst = 0.0;
    for (std::int64_t k = 0; k < o.identity_trials; ++k) {
      Vector a(100), b(100), c(100);
      for (Eigen::Index i = 0; i < 100; ++i) {
        a[i] = normal(rng);
        b[i] = normal(rng);
        c[i] = normal(rng);
      }
      worst = std::max(worst, std::abs(decomposition_identity(a, b, c)));
    }
    out.push_back({"decomposition identity", worst < 1e-10, fmt::format("max |residual| = {:.3e}", worst)});
  }

  {
    std::uniform_real_distribution<double> unif(0.001, 0.999);
    double worst = 0.0;
    for (std::int64_t k = 0; k < o.weight_samples; ++k) {
      const double e = unif(rng);
      worst = std::max(worst, std::abs(balancing_weight(e, 1) * balancing_weight(e, 0) - 1.0));
    }
    out.push_back({"weight identity w1*w0 = 1", worst < 1e-12, fmt::format("max deviation = {:.3e}", worst)});
  }

  {
    std::uniform_real_distribution<double> prop(0.05, 0.95);
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    bool all_unbiased = true;
    bool all_control_rejected = true;
    double worst_z = 0.0;
    double weakest_control_z = std::numeric_limits<double>::infinity();
    for (int k = 0; k < o.unbiasedness_settings; ++k) {
      PointSetting s{prop(rng), 2.0 * normal(rng), 2.0 * normal(rng), scale(rng), scale(rng), 2.0 * normal(rng),
                     2.0 * normal(rng)};
      const auto seed = mix_seed(o.seed, 100 + static_cast<std::uint64_t>(k));
      const auto fair = oracle_dr_unbiasedness(s, o.unbiasedness_draws, seed);
      const auto biased = oracle_dr_unbiasedness(s, o.unbiasedness_draws, seed, 1.0);
      all_unbiased = all_unbiased && fair.within(3.0);
      all_control_rejected = all_control_rejected && !biased.within(3.0);
      worst_z = std::max(worst_z, std::abs(fair.gap()) / fair.std_error);
      weakest_control_z = std::min(weakest_control_z, std::abs(biased.gap()) / biased.std_error);
    }
    out.push_back({"DR label unbiased for the CATE", all_unbiased, fmt::format("max |z| = {:.2f}", worst_z)});
    out.push_back({"biased label rejected (negative control)", all_control_rejected,
                   fmt::format("min |z| = {:.2f}", weakest_control_z)});
  }

  {
    auto constant = [](double c) { return [c](double) { return c; }; };
    auto m0 = [](double x) { return std::sin(x); };
    auto m1 = [](double x) { return x + 1.0; };
    ToyProcess exact{constant(0.5), m0, m1, m0, m1, 1.0, 1.0};
    const auto r = oracle_dr_variance(exact, o.variance_outer, o.variance_inner, mix_seed(o.seed, 200), o.threads);
    out.push_back({"DR variance, f = m (closed form 4)",
                   r.relative_error() < 0.02 && std::abs(r.closed_form - 4.0) < 1e-12,
                   fmt::format("empirical {:.4f} vs closed form {:.4f}", r.empirical, r.closed_form)});

    const double delta = 1.0;
    ToyProcess offset{constant(0.5), m0, m1, [=](double x) { return std::sin(x) + delta; },
                      [=](double x) { return x + 1.0 + delta; }, 1.0, 1.0};
    const auto q = oracle_dr_variance(offset, o.variance_outer, o.variance_inner, mix_seed(o.seed, 201), o.threads);
    out.push_back({"DR variance, f offset by delta (excess 4 delta^2)",
                   q.relative_error() < 0.02 && std::abs(q.excess - 4.0 * delta * delta) < 1e-12,
                   fmt::format("empirical {:.4f} vs closed form {:.4f}, excess {:.4f}", q.empirical, q.closed_form,
                               q.excess)});

    ToyProcess varied{[](double x) { return 0.2 + 0.6 / (1.0 + std::exp(-x)); }, m0, m1,
                      [](double x) { return 0.5 * std::sin(x); }, [](double x) { return x; }, 0.7, 1.3};
    const auto v = oracle_dr_variance(varied, o.variance_outer, o.variance_inner, mix_seed(o.seed, 202), o.threads);
    out.push_back({"DR variance, varying propensity and misfit f", v.relative_error() < 0.02,
                   fmt::format("empirical {:.4f} vs closed form {:.4f}", v.empirical, v.closed_form)});
  }

  {
    const PointSetting s{0.3, 1.0, 2.0, 1.0, 1.5, 0.5, 3.0};
    const auto c = oracle_arm_covariance(s, o.covariance_draws, mix_seed(o.seed, 300));
    out.push_back({"arm-label covariance -(f1-m1)(f0-m0)", c.within(3.0),
                   fmt::format("empirical {:.4f} vs {:.4f} (se {:.4f})", c.mean, c.target, c.std_error)});
  }

  {
    DgpConfig dgp;
    dgp.d = 5;
    dgp.response_surface = ResponseSurface::Linear;
    dgp.seed = o.seed;
    const std::pair<LabelRule, const char*> rules[] = {{LabelRule::IPW, "IPW"}, {LabelRule::DR, "DR"}};
    for (const auto& [rule, name] : rules) {
      const auto r = oracle_decomposition(dgp, rule, o.decomposition_n, o.decomposition_replications, mix_seed(o.seed, 400), o.threads);
      out.push_back({fmt::format("R_hat = R_true + label MSE ({} labels)", name), r.within(3.0),
                     fmt::format("gap {:.4f} (se {:.4f})", r.gap, r.gap_std_error)});
    }
    const auto b = oracle_decomposition(dgp, LabelRule::BiasedDR, o.decomposition_n, o.decomposition_replications, mix_seed(o.seed, 400),
                                o.threads);
    out.push_back({"biased labels break the decomposition (negative control)", !b.within(3.0),
                   fmt::format("gap {:.4f} (se {:.4f})", b.gap, b.gap_std_error)});
  }
  return out;
}

}  // namespace cfcv
