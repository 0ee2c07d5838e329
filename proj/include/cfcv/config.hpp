#pragma once

#include "cfcv/evaluation.hpp"
#include "cfcv/oracles.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace cfcv {

enum class Mode { Select, Tune, AlphaSweep, Verify, Generate };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct ExperimentConfig {
  Mode mode = Mode::Verify;
  ExperimentSettings settings;
  CandidateSetConfig candidates = default_candidate_set_config();
  GbrSearchSpace gbr_space;
  int n_trials = 100;
  std::vector<double> alpha_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  OracleSuiteOptions verify;
  std::string output;
};

// Schema-checks `raw`, filling defaults. `mode` comes from the subcommand; a
// "mode" key in the file must agree with it. Errors name the failing path.
ExperimentConfig validate_config(const nlohmann::json& raw, Mode mode);
ExperimentConfig validate_config(const nlohmann::json& raw);

nlohmann::json to_json(const ExperimentConfig& cfg);

SelectionConfig selection_config(const ExperimentConfig& cfg);
TuningConfig tuning_config(const ExperimentConfig& cfg);

// Human-readable listing of every default, shown by --help.
std::string describe_defaults();

}  // namespace cfcv
