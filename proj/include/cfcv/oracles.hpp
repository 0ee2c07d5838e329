#pragma once

#include "cfcv/common.hpp"
#include "cfcv/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cfcv {

// One covariate value with its true surfaces and a fixed outcome model.
struct PointSetting {
  double e = 0.5;
  double m0 = 0.0;
  double m1 = 0.0;
  double sigma0 = 1.0;
  double sigma1 = 1.0;
  double f0 = 0.0;
  double f1 = 0.0;
};

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double target = 0.0;

  double gap() const noexcept { return mean - target; }
  bool within(double k) const noexcept { return std::abs(gap()) < k * std_error; }
};

// Monte-Carlo mean of the DR pseudo-label at a fixed x, drawing T ~ Bern(e)
// and Y = m_T + sigma_T eps. `bias` is added to every label (negative control).
MeanEstimate oracle_dr_unbiasedness(const PointSetting& s, std::int64_t draws, std::uint64_t seed, double bias = 0.0);

// Cov(T/e (Y-f1) + f1, (1-T)/(1-e) (Y-f0) + f0 | x) against -(f1-m1)(f0-m0).
MeanEstimate oracle_arm_covariance(const PointSetting& s, std::int64_t draws, std::uint64_t seed);

// A one-dimensional process x ~ N(0, 1) with known surfaces and a fixed
// outcome model, used for the conditional-variance oracle.
struct ToyProcess {
  std::function<double(double)> e;
  std::function<double(double)> m0;
  std::function<double(double)> m1;
  std::function<double(double)> f0;
  std::function<double(double)> f1;
  double sigma0 = 1.0;
  double sigma1 = 1.0;

  PointSetting at(double x) const;
};

// sigma1^2/e + sigma0^2/(1-e) + (sqrt(w1)(f1-m1) + sqrt(w0)(f0-m0))^2.
double dr_conditional_variance(const PointSetting& s);

struct VarianceReport {
  double empirical = 0.0;    // mean over x of the within-x sample variance
  double closed_form = 0.0;  // zeta + excess at the same x draws
  double zeta = 0.0;
  double excess = 0.0;
  double relative_error() const noexcept { return std::abs(empirical - closed_form) / closed_form; }
};

// Nested Monte Carlo with `outer` covariate draws and `inner` (T, Y) draws each.
VarianceReport oracle_dr_variance(const ToyProcess& process, std::int64_t outer, std::int64_t inner,
                            std::uint64_t seed, std::size_t threads = 1);

enum class LabelRule { IPW, DR, BiasedDR };

struct DecompositionReport {
  double mean_estimate = 0.0;     // E[R_hat]
  double mean_true_risk = 0.0;    // E[mean (tau - tau_hat)^2]
  double mean_label_error = 0.0;  // E[mean (tau - tau_tilde)^2]
  double gap = 0.0;               // E[R_hat - true_risk - label_error]
  double gap_std_error = 0.0;
  bool within(double k) const noexcept { return std::abs(gap) < k * gap_std_error; }
};

// Repeatedly draws n units from the synthetic process, builds labels with the
// true propensity and the fixed outcome model f_t = 0.5 m_t, and scores the
// fixed predictor tau_hat = 0.5 tau + 0.5. The per-replication gap is paired,
// so its standard error does not include the spread of R_hat itself.
DecompositionReport oracle_decomposition(const DgpConfig& dgp, LabelRule rule, std::int64_t n, std::int64_t replications,
                                 std::uint64_t seed, std::size_t threads = 1);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct OracleSuiteOptions {
  std::int64_t identity_trials = 1000;
  std::int64_t weight_samples = 10000;
  int unbiasedness_settings = 10;
  std::int64_t unbiasedness_draws = 100000;
  std::int64_t variance_outer = 1000;
  std::int64_t variance_inner = 1000;
  std::int64_t covariance_draws = 1000000;
  std::int64_t decomposition_replications = 20000;
  std::int64_t decomposition_n = 200;
  std::uint64_t seed = 20240601;
  std::size_t threads = 1;
};

std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& options);

}  // namespace cfcv
