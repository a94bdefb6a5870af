#pragma once

#include <vector>

#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// Canonical correlations between the row spaces of A and B (both K x T,
/// rows are variables), descending.
Vector canonical_correlations(const Matrix& A, const Matrix& B);

/// Rotates est (K x T) onto truth by orthogonal Procrustes on the row-centered
/// matrices, then averages the per-component Pearson correlations. In [-1, 1].
double aligned_recovery_score(const Matrix& truth, const Matrix& est);

/// Minimum-cost one-to-one assignment (Hungarian). cost is n x n; returns
/// assignment[i] = column matched to row i.
std::vector<int> min_cost_assignment(const Matrix& cost);

/// Mean Euclidean distance between matched rows of two K x d center sets.
double matched_center_error(const Matrix& truth, const Matrix& est);

double rmse(const Matrix& A, const Matrix& B);

}  // namespace neuropgm
