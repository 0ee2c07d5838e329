#include "cfcv/evaluation.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <filesystem>

using namespace cfcv;

TEST_CASE("average ranks share ties") {
  Vector v(5);
  v << 3, 1, 3, 2, 5;
  Vector expected(5);
  expected << 3.5, 1, 3.5, 2, 5;
  CHECK(average_ranks(v) == expected);
}

TEST_CASE("spearman examples") {
  Vector a(5), b(5);
  a << 1, 2, 3, 4, 5;
  b << 2, 1, 4, 3, 5;
  CHECK(*spearman(a, b) == doctest::Approx(0.8));
  CHECK(*spearman(a, a) == doctest::Approx(1.0));
  CHECK(*spearman(a, -a) == doctest::Approx(-1.0));
  CHECK_FALSE(spearman(a, Vector::Constant(5, 1.0)).has_value());
}

TEST_CASE("spearman matches the rank-difference formula on all permutations of four") {
  std::array<int, 4> perm{1, 2, 3, 4};
  Vector a(4);
  a << 1, 2, 3, 4;
  int seen = 0;
  do {
    Vector b(4);
    double d2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      b[i] = perm[static_cast<std::size_t>(i)];
      d2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    CHECK(*spearman(a, b) == doctest::Approx(1.0 - 6.0 * d2 / (4.0 * 15.0)));
    ++seen;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(seen == 24);
}

TEST_CASE("regret examples") {
  const std::map<std::string, double> risks{{"a", 1.0}, {"b", 1.5}, {"c", 3.0}};
  CHECK(regret(risks, "a").value == 0.0);
  CHECK(regret(risks, "b").value == doctest::Approx(0.5));
  CHECK_FALSE(regret(risks, "b").absolute);
  const auto zero = regret({{"a", 0.0}, {"b", 0.25}}, "b");
  CHECK(zero.absolute);
  CHECK(zero.value == 0.25);
  CHECK_THROWS(regret(risks, "missing"));
}

TEST_CASE("true risk and nrmse") {
  Vector tau(2), hat(2);
  tau << 1, -1;
  hat << 0, 0;
  CHECK(true_risk(tau, hat) == 1.0);
  CHECK(nrmse(tau, hat) == doctest::Approx(1.0));
  CHECK(nrmse(tau, tau) == 0.0);
}

TEST_CASE("summaries pick the worst case by direction") {
  const std::vector<double> v{0.2, 0.8, 0.5};
  const auto hi = summarize(v, true);
  const auto lo = summarize(v, false);
  CHECK(hi.mean == doctest::Approx(0.5));
  CHECK(hi.worst == 0.2);
  CHECK(lo.worst == 0.8);
  CHECK(hi.count == 3);
  CHECK(hi.std_error == doctest::Approx(0.3 / std::sqrt(3.0)));
}

TEST_CASE("gbr search space samples inside its bounds") {
  GbrSearchSpace space;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 200; ++k) {
    const auto g = space.sample(rng);
    CHECK(g.max_depth >= 1);
    CHECK(g.max_depth <= 20);
    CHECK(g.min_samples_leaf >= 1);
    CHECK(g.min_samples_leaf <= 20);
    CHECK(g.learning_rate >= 1e-5);
    CHECK(g.learning_rate <= 1e-1);
    CHECK(std::find(space.subsample.begin(), space.subsample.end(), g.subsample) != space.subsample.end());
  }
}

TEST_CASE("synthetic realizations differ and are reproducible") {
  DataSource src;
  DgpConfig dgp;
  dgp.n = 200;
  src.synthetic = dgp;
  const auto a = load_realization(src, 0, 5);
  const auto b = load_realization(src, 1, 5);
  CHECK(a.data.outcomes() != b.data.outcomes());
  CHECK(load_realization(src, 0, 5).data.outcomes() == a.data.outcomes());
  CHECK(a.surface.has_value());
}

TEST_CASE("csv directory source") {
  const auto dir = std::filesystem::temp_directory_path() / "cfcv_eval_src";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (int k = 0; k < 2; ++k) {
    const auto s = testing::small_sample(100, static_cast<std::uint64_t>(k));
    write_csv(dir / ("r" + std::to_string(k) + ".csv"), s.data, s.truth);
  }
  DataSource src;
  src.csv_dir = dir;
  CHECK(available_realizations(src) == 2);
  const auto r = load_realization(src, 1, 0);
  CHECK(r.data.outcomes() == testing::small_sample(100, 1).data.outcomes());
  CHECK_FALSE(r.surface.has_value());
  CHECK_THROWS(load_realization(src, 2, 0));

  const auto s = testing::small_sample(50, 9);
  write_csv(dir / "r9.csv", s.data, std::nullopt);
  CHECK_THROWS(load_realization(src, 2, 0));
  std::filesystem::remove_all(dir);
}

namespace {

SelectionConfig quick_selection() {
  SelectionConfig cfg;
  DgpConfig dgp;
  dgp.n = 300;
  dgp.d = 4;
  cfg.settings.source.synthetic = dgp;
  cfg.settings.realizations = 2;
  cfg.settings.metrics = {Metric::IPW, Metric::TauRisk, Metric::PlugIn, Metric::CFCV, Metric::TrueRisk};
  cfg.settings.cfr.n_trials = 0;
  cfg.settings.cfr.fixed.epochs = 5;
  cfg.settings.cfr.fixed.rep_dim = 8;
  cfg.settings.cfr.fixed.head_dim = 8;
  cfg.candidates.meta_learners = {MetaLearner::S, MetaLearner::T};
  cfg.candidates.base_learners = {{"ridge", RidgeConfig{}}, {"tree", TreeConfig{}}};
  cfg.settings.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("selection experiment produces a complete report") {
  const auto cfg = quick_selection();
  const auto report = run_selection_experiment(cfg);
  CHECK(report.protocol == "selection");
  REQUIRE(report.realizations.size() == 2);
  for (const auto& r : report.realizations) {
    CHECK(r.true_risks.size() == 4);
    CHECK(r.metrics.size() == 5);
    const auto& oracle = r.metrics.at(Metric::TrueRisk);
    CHECK(oracle.regret.has_value());
  }
  const auto j = report.to_json();
  CHECK(j.contains("aggregate"));
  CHECK(j["aggregate"].contains("cf-cv"));
  CHECK(j.contains("reference"));
  const auto csv = report.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 5);
  CHECK(run_selection_experiment(cfg).to_json().dump() == j.dump());
}

TEST_CASE("thread count does not change results") {
  auto cfg = quick_selection();
  const auto one = run_selection_experiment(cfg).to_json();
  cfg.settings.threads = 2;
  auto two = run_selection_experiment(cfg).to_json();
  CHECK(one["per_realization"] == two["per_realization"]);
  CHECK(one["aggregate"] == two["aggregate"]);
}

TEST_CASE("tuning experiment reports nrmse") {
  TuningConfig cfg;
  DgpConfig dgp;
  dgp.n = 300;
  dgp.d = 4;
  dgp.response_surface = ResponseSurface::Linear;
  cfg.settings.source.synthetic = dgp;
  cfg.settings.realizations = 2;
  cfg.settings.metrics = {Metric::TrueRisk, Metric::CFCV, Metric::IPW};
  cfg.settings.cfr.n_trials = 0;
  cfg.settings.cfr.fixed.epochs = 5;
  cfg.n_trials = 3;
  cfg.space.n_estimators = 10;
  const auto report = run_tuning_experiment(cfg);
  CHECK(report.protocol == "tuning");
  for (const auto& r : report.realizations) {
    CHECK(r.true_risks.size() == 3);
    CHECK(r.metrics.at(Metric::CFCV).nrmse.has_value());
  }
  const auto diff = paired_nrmse_difference(report.realizations, Metric::TrueRisk, Metric::CFCV);
  CHECK(report.exclusions.empty());
  CHECK(diff.count == 2);
}

TEST_CASE("published reference figures are attached") {
  const auto ref = published_reference();
  CHECK(ref.dump().find("0.921") != std::string::npos);
}

TEST_CASE("data source validation") {
  DataSource none;
  CHECK_THROWS_AS(none.validate(), ConfigError);
  DataSource both;
  both.synthetic = DgpConfig{};
  both.csv_dir = "/tmp";
  CHECK_THROWS_AS(both.validate(), ConfigError);
}
