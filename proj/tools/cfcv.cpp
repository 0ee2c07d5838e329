#include "cfcv/config.hpp"
#include "cfcv/evaluation.hpp"
#include "cfcv/logging.hpp"
#include "cfcv/oracles.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string format = "json";
};

void write_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw cfcv::Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw cfcv::Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    write_atomic(out_path, text);
    spdlog::info("wrote {}", out_path);
  }
}

json read_config(const Options& opts) {
  json raw = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw cfcv::ConfigError("cannot open config file " + opts.config_path);
    try {
      raw = json::parse(in);
    } catch (const json::parse_error& err) {
      throw cfcv::ConfigError(opts.config_path + ": " + err.what());
    }
  }
  if (!raw.is_object()) throw cfcv::ConfigError("config: expected an object");
  if (opts.seed) raw["seed"] = *opts.seed;
  if (opts.threads) raw["threads"] = *opts.threads;
  return raw;
}

std::string render(const cfcv::ExperimentReport& report, const std::string& format, const json& extra = {}) {
  if (format == "csv") return report.to_csv();
  json j = report.to_json();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j.dump(2) + "\n";
}

int run_select(const cfcv::ExperimentConfig& cfg, const Options& opts) {
  const auto report = cfcv::run_selection_experiment(cfcv::selection_config(cfg), cfcv::to_json(cfg));
  emit(opts.out, render(report, opts.format, {{"roster", cfcv::candidate_roster(cfg.candidates)}}));
  return 0;
}

int run_tune(const cfcv::ExperimentConfig& cfg, const Options& opts) {
  const auto report = cfcv::run_tuning_experiment(cfcv::tuning_config(cfg), cfcv::to_json(cfg));
  emit(opts.out, render(report, opts.format));
  return 0;
}

int run_alpha_sweep(const cfcv::ExperimentConfig& cfg, const Options& opts) {
  json sweep = json::array();
  std::ostringstream csv;
  csv << "alpha,rank_correlation_mean,rank_correlation_stderr,rank_correlation_worst,regret_mean,regret_stderr,"
         "regret_worst,excluded\n";
  for (double alpha : cfg.alpha_grid) {
    auto sel = cfcv::selection_config(cfg);
    sel.settings.cfr.fixed.alpha = alpha;
    if (sel.settings.cfr.search) {
      sel.settings.cfr.search->alpha_min = alpha;
      sel.settings.cfr.search->alpha_max = alpha;
    }
    spdlog::info("alpha sweep: alpha = {}", alpha);
    const auto report = cfcv::run_selection_experiment(sel);
    const auto agg = report.to_json()["aggregate"]["cf-cv"];
    sweep.push_back({{"alpha", alpha}, {"aggregate", agg}, {"excluded", report.exclusions.size()}});
    const auto& a = report.aggregate.at(cfcv::Metric::CFCV);
    auto cell = [](const std::optional<cfcv::Summary>& s) {
      return s ? fmt::format("{},{},{}", s->mean, s->std_error, s->worst) : std::string(",,");
    };
    csv << alpha << ',' << cell(a.rank_correlation) << ',' << cell(a.regret) << ',' << report.exclusions.size()
        << '\n';
  }
  if (opts.format == "csv") {
    emit(opts.out, csv.str());
  } else {
    emit(opts.out, json{{"protocol", "alpha-sweep"}, {"config", cfcv::to_json(cfg)}, {"sweep", sweep}}.dump(2) + "\n");
  }
  return 0;
}

int run_verify(const cfcv::ExperimentConfig& cfg, const Options& opts) {
  const auto checks = cfcv::run_oracle_suite(cfg.verify);
  bool all = true;
  json items = json::array();
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
    items.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  std::cout.flush();
  if (!opts.out.empty()) write_atomic(opts.out, json{{"checks", items}, {"passed", all}}.dump(2) + "\n");
  return all ? 0 : kExitRuntime;
}

int run_gen(const cfcv::ExperimentConfig& cfg, const Options& opts) {
  const auto& s = cfg.settings;
  const std::string out = opts.out.empty() ? cfg.output : opts.out;
  if (s.realizations == 1) {
    const auto r = cfcv::load_realization(s.source, 0, s.seed);
    emit(out, cfcv::format_csv(r.data, r.truth));
    return 0;
  }
  if (out.empty()) throw cfcv::ConfigError("output: gen with realizations > 1 needs --out <directory>");
  for (int k = 0; k < s.realizations; ++k) {
    const auto r = cfcv::load_realization(s.source, k, s.seed);
    write_atomic(fs::path(out) / fmt::format("realization_{:03d}.csv", k), cfcv::format_csv(r.data, r.truth));
  }
  spdlog::info("wrote {} realizations to {}", s.realizations, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cfcv::init_logging_from_env();
  CLI::App app{"Counterfactual cross-validation for CATE model selection"};
  app.footer(cfcv::describe_defaults() + "\nLog level: CFCV_LOG=trace|debug|info|warn|error (default warn).\n"
             "Exit codes: 0 success, 1 configuration error, 2 runtime error.");
  app.require_subcommand(1);

  Options opts;
  std::uint64_t seed = 0;
  int threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--out", opts.out, "Output path (default: the config's output, else stdout)");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--threads", threads, "Cap on worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", opts.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  };
  struct Command {
    const char* name;
    const char* help;
    cfcv::Mode mode;
  };
  const Command commands[] = {
      {"select", "Model-selection experiment over realizations", cfcv::Mode::Select},
      {"tune", "GBR x DA-learner hyperparameter tuning experiment", cfcv::Mode::Tune},
      {"alpha-sweep", "CF-CV selection quality across a grid of alpha", cfcv::Mode::AlphaSweep},
      {"verify", "Run the Monte-Carlo and identity oracle checks", cfcv::Mode::Verify},
      {"gen", "Write synthetic data with ground truth as CSV", cfcv::Mode::Generate},
  };
  std::vector<std::pair<CLI::App*, cfcv::Mode>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    subs.emplace_back(sub, c.mode);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitConfig;
  }

  cfcv::Mode mode = cfcv::Mode::Verify;
  for (const auto& [sub, m] : subs) {
    if (sub->parsed()) {
      mode = m;
      if (sub->count("--seed") > 0) opts.seed = seed;
      if (sub->count("--threads") > 0) opts.threads = threads;
    }
  }

  cfcv::ExperimentConfig cfg;
  try {
    cfg = cfcv::validate_config(read_config(opts), mode);
    if (opts.out.empty() && mode != cfcv::Mode::Verify && mode != cfcv::Mode::Generate) opts.out = cfg.output;
  } catch (const cfcv::Error& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return kExitConfig;
  }

  try {
    switch (mode) {
      case cfcv::Mode::Select: return run_select(cfg, opts);
      case cfcv::Mode::Tune: return run_tune(cfg, opts);
      case cfcv::Mode::AlphaSweep: return run_alpha_sweep(cfg, opts);
      case cfcv::Mode::Verify: return run_verify(cfg, opts);
      case cfcv::Mode::Generate: return run_gen(cfg, opts);
    }
  } catch (const cfcv::ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
