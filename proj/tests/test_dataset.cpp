#include "cfcv/dataset.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

using namespace cfcv;

TEST_CASE("dataset rejects inconsistent inputs") {
  Matrix x = Matrix::Zero(3, 2);
  IntVector t(3);
  t << 0, 1, 1;
  Vector y = Vector::Zero(3);
  CHECK_NOTHROW(ObservationalDataset(x, t, y));
  CHECK_THROWS_AS(ObservationalDataset(x, t, Vector::Zero(2)), InvalidArgument);
  IntVector bad = t;
  bad[0] = 2;
  CHECK_THROWS_AS(ObservationalDataset(x, bad, y), InvalidArgument);
  Vector nan_y = y;
  nan_y[1] = std::nan("");
  CHECK_THROWS_AS(ObservationalDataset(x, t, nan_y), InvalidArgument);
  CHECK_THROWS_AS(ObservationalDataset(Matrix(0, 2), IntVector(0), Vector(0)), InvalidArgument);
}

TEST_CASE("subset and arm indices") {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  IntVector t(4);
  t << 1, 0, 1, 0;
  Vector y(4);
  y << 10, 20, 30, 40;
  ObservationalDataset data(x, t, y);
  CHECK(data.arm_indices(1) == std::vector<Eigen::Index>{0, 2});
  const auto sub = data.subset({3, 3, 0});
  CHECK(sub.size() == 3);
  CHECK(sub.outcomes()[0] == 40);
  CHECK(sub.outcomes()[2] == 10);
  CHECK(sub.treated_count() == 1);
  CHECK_THROWS_AS(data.subset({0, 2}).require_both_arms("test"), DataError);
}

TEST_CASE("parse_csv reads a two-row file") {
  const auto loaded = parse_csv("t,y,x1\n1,2.0,0.5\n0,1.0,-0.5\n");
  CHECK(loaded.data.size() == 2);
  CHECK(loaded.data.dim() == 1);
  CHECK(loaded.data.treatments()[0] == 1);
  CHECK(loaded.data.treatments()[1] == 0);
  CHECK(loaded.data.outcomes()[0] == 2.0);
  CHECK(loaded.data.features()(1, 0) == -0.5);
  CHECK_FALSE(loaded.truth.has_value());
}

TEST_CASE("parse_csv reads ground-truth columns") {
  const auto loaded = parse_csv("t,y,mu0,mu1,x1,x2\n1,2,1,3,0,0\n0,1,1,2,1,1\n");
  REQUIRE(loaded.truth.has_value());
  CHECK(loaded.truth->tau[0] == 2.0);
  CHECK(loaded.truth->tau[1] == 1.0);
  CHECK_FALSE(loaded.truth->propensity.has_value());
}

TEST_CASE("parse_csv reports the failing line") {
  try {
    parse_csv("t,y,x1\n1,2.0,0.5\n2,1.0,-0.5\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
  }
  CHECK_THROWS_AS(parse_csv("t,y,x1\n1,abc,0.5\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("t,y,x1\n1,2.0\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("y,t,x1\n1,2.0,0.5\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("t,y,x1\n"), ParseError);
  CHECK_THROWS_AS(parse_csv(""), ParseError);
}

TEST_CASE("csv round trip is exact") {
  DgpConfig cfg;
  cfg.n = 747;
  cfg.d = 25;
  cfg.seed = 11;
  const auto sample = generate_synthetic(cfg);
  const auto path = std::filesystem::temp_directory_path() / "cfcv_roundtrip.csv";
  write_csv(path, sample.data, sample.truth);
  const auto loaded = load_csv(path);
  std::filesystem::remove(path);
  CHECK(loaded.data.size() == 747);
  CHECK(loaded.data.dim() == 25);
  CHECK(loaded.data.features() == sample.data.features());
  CHECK(loaded.data.outcomes() == sample.data.outcomes());
  CHECK(loaded.data.treatments() == sample.data.treatments());
  REQUIRE(loaded.truth.has_value());
  CHECK(loaded.truth->mu0 == sample.truth.mu0);
  CHECK(loaded.truth->mu1 == sample.truth.mu1);
}

TEST_CASE("synthetic data is a pure function of its config") {
  const auto a = testing::small_sample(300, 5);
  const auto b = testing::small_sample(300, 5);
  const auto c = testing::small_sample(300, 6);
  CHECK(a.data.features() == b.data.features());
  CHECK(a.data.outcomes() == b.data.outcomes());
  CHECK(a.data.treatments() == b.data.treatments());
  CHECK(a.data.outcomes() != c.data.outcomes());
}

TEST_CASE("synthetic ground truth is consistent") {
  for (auto surface : {ResponseSurface::Linear, ResponseSurface::NonlinearExponential}) {
    DgpConfig cfg;
    cfg.n = 2000;
    cfg.confounding_strength = 3.0;
    cfg.response_surface = surface;
    cfg.seed = 3;
    const auto s = generate_synthetic(cfg);
    CHECK((s.truth.tau - (s.truth.mu1 - s.truth.mu0)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(s.truth.propensity.has_value());
    CHECK(s.truth.propensity->minCoeff() >= 0.05);
    CHECK(s.truth.propensity->maxCoeff() <= 0.95);
    CHECK(s.data.has_both_arms());
  }
}

TEST_CASE("no confounding gives constant propensity") {
  const auto s = testing::small_sample(500, 1, 0.0);
  CHECK(s.truth.propensity->minCoeff() == 0.5);
  CHECK(s.truth.propensity->maxCoeff() == 0.5);
}

TEST_CASE("tiny noise makes outcomes match the factual surface") {
  DgpConfig cfg;
  cfg.n = 200;
  cfg.noise_scale = 1e-6;
  cfg.response_surface = ResponseSurface::Linear;
  const auto s = generate_synthetic(cfg);
  for (Eigen::Index i = 0; i < s.data.size(); ++i) {
    const double mu = s.data.treatments()[i] == 1 ? s.truth.mu1[i] : s.truth.mu0[i];
    CHECK(std::abs(s.data.outcomes()[i] - mu) < 1e-4);
  }
}

TEST_CASE("treatment frequency tracks the propensity") {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.seed = 7;
  const auto s = generate_synthetic(cfg);
  const double treated = static_cast<double>(s.data.treated_count()) / static_cast<double>(cfg.n);
  const double expected = s.truth.propensity->mean();
  CHECK(std::abs(treated - expected) < 3.0 * std::sqrt(0.25 / static_cast<double>(cfg.n)));
}

TEST_CASE("surface evaluation matches the generated truth") {
  const auto s = testing::small_sample(100, 9);
  CHECK(s.surface.mu0(s.data.features()) == s.truth.mu0);
  CHECK(s.surface.mu1(s.data.features()) == s.truth.mu1);
}

TEST_CASE("dgp config validation") {
  DgpConfig cfg;
  cfg.noise_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = DgpConfig{};
  cfg.confounding_strength = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(response_surface_from_string("quadratic"), ConfigError);
  CHECK(response_surface_from_string(to_string(ResponseSurface::Linear)) == ResponseSurface::Linear);
}

TEST_CASE("split sizes follow the fractions") {
  const auto s = testing::small_sample(100, 2);
  const auto parts = split(s.data, s.truth, SplitSpec{});
  CHECK(parts.train.data.size() == 35);
  CHECK(parts.validation.data.size() == 35);
  CHECK(parts.test.data.size() == 30);
  CHECK(parts.train.data.has_both_arms());
  CHECK(parts.validation.data.has_both_arms());
  REQUIRE(parts.validation.truth.has_value());
  CHECK(parts.validation.truth->size() == 35);
}

TEST_CASE("split is a seeded partition") {
  const auto s = testing::small_sample(747, 4);
  SplitSpec spec;
  spec.seed = 123;
  const auto a = split(s.data, s.truth, spec);
  const auto b = split(s.data, s.truth, spec);
  CHECK(a.train.indices == b.train.indices);
  CHECK(a.test.indices == b.test.indices);

  std::vector<Eigen::Index> all;
  for (const auto* part : {&a.train, &a.validation, &a.test}) all.insert(all.end(), part->indices.begin(), part->indices.end());
  std::sort(all.begin(), all.end());
  CHECK(all.size() == 747);
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(all.front() == 0);
  CHECK(all.back() == 746);

  for (std::size_t k = 0; k < a.validation.indices.size(); ++k) {
    const auto i = a.validation.indices[k];
    CHECK(a.validation.data.outcomes()[static_cast<Eigen::Index>(k)] == s.data.outcomes()[i]);
    CHECK(a.validation.truth->tau[static_cast<Eigen::Index>(k)] == s.truth.tau[i]);
  }

  spec.seed = 124;
  CHECK(split(s.data, s.truth, spec).train.indices != a.train.indices);
}

TEST_CASE("split validation and failure modes") {
  SplitSpec bad;
  bad.train_frac = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Matrix x = Matrix::Zero(20, 1);
  IntVector t = IntVector::Zero(20);
  t[0] = 1;
  ObservationalDataset lone(x, t, Vector::Zero(20));
  CHECK_THROWS_AS(split(lone, std::nullopt, SplitSpec{}), DataError);
  ObservationalDataset tiny(Matrix::Zero(3, 1), IntVector::Zero(3), Vector::Zero(3));
  CHECK_THROWS_AS(split(tiny, std::nullopt, SplitSpec{}), DataError);
}
