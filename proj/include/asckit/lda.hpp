#pragma once

#include <string>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::lda {

/// Fisher discriminant projection. Rows of `projection` are generalized
/// eigenvector directions of (Sb, Sw + shrinkage), unit length, ordered by
/// descending eigenvalue.
struct LdaModel {
  int input_dim = 0;
  int requested_dim = 0;
  int effective_rank = 0;  // rank of the between-class scatter, <= classes-1
  std::vector<double> mean;         // input_dim
  std::vector<double> eigenvalues;  // requested_dim, descending
  std::vector<double> projection;   // requested_dim x input_dim, row-major
  bool rank_warning = false;  // requested_dim exceeded the class-rank bound
};

inline constexpr double kShrinkage = 1e-4;

/// Fits LDA on row-major X (n x dim) with integer labels. When strict_rank is
/// set, the output dimension is capped at classes-1; otherwise directions
/// beyond the rank bound are kept (near-zero eigenvalues) and flagged.
LdaModel fit_lda(const std::vector<double>& X, int n, int dim, const std::vector<int>& y,
                 int target_dim, bool strict_rank = false);

/// (X - mean) * P^T; returns n x model-dim, row-major.
std::vector<double> transform(const LdaModel& model, const std::vector<double>& X, int n, int dim);

void save_lda(const LdaModel& model, const std::string& path);
LdaModel load_lda(const std::string& path);

}  // namespace asckit::lda
