#include "cfcv/sinkhorn.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace cfcv;

namespace {

double sorted_w2(Vector a, Vector b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("single points cost their squared distance") {
  Matrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  const auto r = sinkhorn(a, b, 0.1, 10);
  CHECK(std::abs(r.cost - 25.0) < 1e-12);
  CHECK(std::abs(r.plan(0, 0) - 1.0) < 1e-12);
}

TEST_CASE("identical clouds cost at most reg log m") {
  Matrix a(4, 1);
  a << 0, 1, 2, 3;
  const double reg = 0.05;
  const auto r = sinkhorn(a, a, reg, 1000);
  CHECK(r.cost >= 0.0);
  CHECK(r.cost <= reg * std::log(4.0) + 1e-9);
}

TEST_CASE("sinkhorn is symmetric and meets its marginals") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix a = testing::gaussian_matrix(7, 3, rng);
    const Matrix b = testing::gaussian_matrix(5, 3, rng).array() + 1.0;
    const auto ab = sinkhorn(a, b, 0.5, 2000, 1e-10);
    const auto ba = sinkhorn(b, a, 0.5, 2000, 1e-10);
    CHECK(std::abs(ab.cost - ba.cost) < 1e-9);
    CHECK((ab.plan - ba.plan.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ab.plan.rowwise().sum().array() - 1.0 / 7).abs().sum() < 1e-6);
    CHECK((ab.plan.colwise().sum().array() - 1.0 / 5).abs().sum() < 1e-6);
    CHECK(ab.marginal_violation < 1e-6);
  }
}

TEST_CASE("small regularization approaches the sorted 1-d optimum") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const Vector a = testing::gaussian_vector(8, rng);
    const Vector b = (testing::gaussian_vector(8, rng).array() + 2.0).matrix();
    const double exact = sorted_w2(a, b);
    const auto r = sinkhorn(a, b, 0.01, 20000, 1e-9);
    CHECK(std::abs(r.cost - exact) < 0.05 * exact);
    CHECK(r.marginal_violation < 1e-9);
  }
}

TEST_CASE("sinkhorn input validation") {
  Matrix a(2, 1), b(2, 2);
  a << 0, 1;
  b << 0, 1, 2, 3;
  CHECK_THROWS_AS(sinkhorn(a, b, 0.1, 10), InvalidArgument);
  CHECK_THROWS_AS(sinkhorn(a, a, 0.0, 10), InvalidArgument);
  CHECK_THROWS_AS(sinkhorn(a, a, 0.1, 0), InvalidArgument);
  CHECK_THROWS_AS(sinkhorn(Matrix(0, 1), a, 0.1, 10), InvalidArgument);
}

TEST_CASE("squared euclidean cost") {
  Matrix a(2, 2), b(1, 2);
  a << 0, 0, 1, 1;
  b << 1, 0;
  const Matrix c = squared_euclidean_cost(a, b);
  CHECK(c(0, 0) == 1.0);
  CHECK(c(1, 0) == 1.0);
}
