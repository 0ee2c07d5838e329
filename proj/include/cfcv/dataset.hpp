#pragma once

#include "cfcv/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cfcv {

// Observational sample (X, T, Y). Invariants are checked on construction:
// consistent lengths, n >= 1, d >= 1, binary treatments, finite values.
class ObservationalDataset {
 public:
  ObservationalDataset(Matrix features, IntVector treatments, Vector outcomes);

  const Matrix& features() const noexcept { return features_; }
  const IntVector& treatments() const noexcept { return treatments_; }
  const Vector& outcomes() const noexcept { return outcomes_; }

  Eigen::Index size() const noexcept { return features_.rows(); }
  Eigen::Index dim() const noexcept { return features_.cols(); }
  Eigen::Index treated_count() const noexcept { return treatments_.sum(); }
  Eigen::Index control_count() const noexcept { return size() - treated_count(); }
  bool has_both_arms() const noexcept { return treated_count() > 0 && control_count() > 0; }

  // Throws DataError naming `context` unless both arms are non-empty.
  void require_both_arms(const std::string& context) const;

  // Rows in the given order; indices may repeat.
  ObservationalDataset subset(const std::vector<Eigen::Index>& rows) const;

  // Indices of units with T == arm, in row order.
  std::vector<Eigen::Index> arm_indices(int arm) const;

 private:
  Matrix features_;
  IntVector treatments_;
  Vector outcomes_;
};

// Per-unit ground truth for semi-synthetic data. `propensity` is absent when
// the truth came from a file that does not record it.
struct GroundTruth {
  Vector tau;
  Vector mu0;
  Vector mu1;
  std::optional<Vector> propensity;

  static GroundTruth from_surfaces(Vector mu0, Vector mu1, std::optional<Vector> propensity);
  Eigen::Index size() const noexcept { return tau.size(); }
  GroundTruth subset(const std::vector<Eigen::Index>& rows) const;
};

enum class ResponseSurface { Linear, NonlinearExponential };

std::string to_string(ResponseSurface surface);
ResponseSurface response_surface_from_string(const std::string& name);

struct DgpConfig {
  std::int64_t n = 1000;
  std::int64_t d = 10;
  double confounding_strength = 1.0;
  double noise_scale = 1.0;
  ResponseSurface response_surface = ResponseSurface::NonlinearExponential;
  std::uint64_t seed = 0;
  // Average effect and the scale of its linear heterogeneity (linear surface).
  double treatment_effect = 4.0;
  double effect_heterogeneity = 1.0;

  void validate() const;
  bool operator==(const DgpConfig&) const = default;
};

// The parameters drawn for one synthetic data-generating process. Evaluates the
// true propensity and conditional mean surfaces at arbitrary covariates, which
// is what the Monte-Carlo oracles and the "true propensity" option need.
class SyntheticSurface {
 public:
  static SyntheticSurface draw(const DgpConfig& config);

  Vector propensity(const Matrix& x) const;
  Vector mu0(const Matrix& x) const;
  Vector mu1(const Matrix& x) const;
  Vector tau(const Matrix& x) const { return mu1(x) - mu0(x); }

  const DgpConfig& config() const noexcept { return config_; }

  static constexpr double kPropensityFloor = 0.05;
  static constexpr double kPropensityCeil = 0.95;

 private:
  DgpConfig config_;
  Vector propensity_coef_;
  Vector outcome_coef_;
  Vector effect_coef_;
  double exp_offset_ = 0.0;
};

struct SyntheticSample {
  ObservationalDataset data;
  GroundTruth truth;
  SyntheticSurface surface;
};

// Confounded synthetic data with known ground truth; a pure function of config.
SyntheticSample generate_synthetic(const DgpConfig& config);

struct LoadedCsv {
  ObservationalDataset data;
  std::optional<GroundTruth> truth;
};

// Columns: t, y, [mu0, mu1], x1..xd. Errors carry the 1-based line number.
LoadedCsv load_csv(const std::filesystem::path& path);
LoadedCsv parse_csv(const std::string& text);
void write_csv(const std::filesystem::path& path, const ObservationalDataset& data,
               const std::optional<GroundTruth>& truth);
std::string format_csv(const ObservationalDataset& data, const std::optional<GroundTruth>& truth);

struct SplitSpec {
  double train_frac = 0.35;
  double val_frac = 0.35;
  double test_frac = 0.30;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SplitSpec&) const = default;
};

struct SplitPart {
  ObservationalDataset data;
  std::optional<GroundTruth> truth;
  std::vector<Eigen::Index> indices;
};

struct DataSplit {
  SplitPart train;
  SplitPart validation;
  SplitPart test;
};

// Seeded partition into train/validation/test of sizes round(n*frac) with the
// rounding remainder going to test. Train and validation keep both arms;
// the permutation is redrawn up to kMaxSplitRetries times otherwise.
DataSplit split(const ObservationalDataset& data, const std::optional<GroundTruth>& truth,
                const SplitSpec& spec);

inline constexpr int kMaxSplitRetries = 100;

}  // namespace cfcv
