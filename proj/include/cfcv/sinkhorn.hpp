#pragma once

#include "cfcv/common.hpp"

namespace cfcv {

struct SinkhornResult {
  double cost = 0.0;  // <P, C>
  Matrix plan;        // rows index A, columns index B
  int iterations = 0;
  double marginal_violation = 0.0;  // L1 error of the row marginals
};

// Pairwise squared Euclidean distances between the rows of a and b.
Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b);

// Entropic optimal transport between the uniform empirical measures on the
// rows of a and b with squared Euclidean ground cost. Log-domain Sinkhorn with
// the regularization annealed from the largest cost down to reg, for at most
// max_iters rounds in total, stopping once the summed row and column marginal
// violation at reg falls below tolerance. Small problems finish with Newton
// steps on the dual. The inputs are processed in a canonical order, so
// sinkhorn(a, b) and sinkhorn(b, a) agree exactly.
SinkhornResult sinkhorn(const Matrix& a, const Matrix& b, double reg, int max_iters, double tolerance = 1e-6);

// Fixed-regularization Sinkhorn on a precomputed cost matrix (no reordering,
// no annealing); cheap enough for per-minibatch use.
SinkhornResult sinkhorn_from_cost(const Matrix& cost, double reg, int max_iters, double tolerance = 1e-6);

// Annealed variant on a precomputed cost matrix; reaches small reg quickly.
SinkhornResult sinkhorn_annealed(const Matrix& cost, double reg, int max_iters, double tolerance = 1e-6);

double sinkhorn_distance(const Matrix& a, const Matrix& b, double reg, int max_iters);

}  // namespace cfcv
