#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::gbm {

struct GbmConfig {
  double learning_rate = 0.1;
  int max_bins = 255;
  int num_leaves = 31;
  int min_data_in_leaf = 20;
  int num_rounds = 100;
  double lambda_l2 = 0.0;
  int n_classes = 15;
};

/// Quantile-binned training matrix: per-feature cut points plus bin indices.
/// bin(x) = number of cut points <= x, which makes the mapping monotone.
struct BinnedDataset {
  int n = 0;
  int n_features = 0;
  std::vector<std::vector<double>> cut_points;  // strictly increasing per feature
  std::vector<std::uint16_t> bins;              // n x n_features, row-major
  std::vector<int> labels;

  int bin_count(int feature) const { return static_cast<int>(cut_points[feature].size()) + 1; }
  std::uint16_t bin_at(int row, int feature) const {
    return bins[static_cast<std::size_t>(row) * n_features + feature];
  }
};

/// Regression tree over bin indices. Internal nodes route on
/// `bin <= threshold`; leaves carry the Newton output value.
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    int threshold = 0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;  // node 0 is the root
  int leaf_count = 1;

  double predict_bins(const std::uint16_t* row) const;
};

struct Ensemble {
  GbmConfig config;
  std::vector<std::vector<double>> cut_points;  // copied from training time
  std::vector<double> base_scores;              // per-class log prior
  std::vector<Tree> trees;                      // round-major: trees[r * n_classes + k]

  int n_features() const { return static_cast<int>(cut_points.size()); }
};

/// Optional training diagnostics: per-round training log-loss and a record of
/// every structural split (used by the split-gain oracle tests).
struct SplitRecord {
  int round = 0;
  int klass = 0;
  std::vector<int> sample_idx;  // samples in the split leaf
  int feature = 0;
  int threshold = 0;
  double gain = 0.0;
};

struct FitDiagnostics {
  std::vector<double> round_loss;  // multiclass log-loss after each round
  std::vector<SplitRecord> splits;
  bool record_splits = false;
};

BinnedDataset bin_features(const std::vector<double>& X, int n, int n_features, int max_bins,
                           const std::vector<int>& labels);

/// Maps raw features through stored cut points.
std::vector<std::uint16_t> apply_bins(const std::vector<std::vector<double>>& cut_points,
                                      const std::vector<double>& X, int n);

Ensemble fit_gbm(const BinnedDataset& data, const GbmConfig& config,
                 FitDiagnostics* diag = nullptr);

/// Softmax class probabilities, n x n_classes row-major.
std::vector<double> predict_proba(const Ensemble& ensemble, const std::vector<double>& X, int n);

std::vector<double> raw_scores(const Ensemble& ensemble, const std::vector<double>& X, int n);

void save_gbm(const Ensemble& ensemble, const std::string& path);
Ensemble load_gbm(const std::string& path);

/// One grid-search candidate and its cross-validated recording accuracy.
struct GridPoint {
  GbmConfig config;
  std::optional<int> lda_dim;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

struct GridSpec {
  std::vector<double> learning_rate{0.01, 0.05, 0.1};
  std::vector<int> max_bins{128, 256, 512};
  std::vector<int> num_leaves{64, 128, 256};
  std::vector<int> min_data_in_leaf{500, 1000, 2000};
  std::vector<int> lda_dim{64, 128, 256, 512};  // used only when use_lda
};

/// Enumerates the grid in a fixed order; `evaluate` returns per-fold accuracy
/// for one candidate. Ties on mean accuracy prefer the simpler model: lower
/// num_leaves, then max_bins, then learning_rate, then min_data_in_leaf,
/// then lda dimension.
std::vector<GridPoint> grid_search(
    const GridSpec& grid, bool use_lda,
    const std::function<std::vector<double>(const GbmConfig&, std::optional<int>)>& evaluate,
    std::size_t* best_index);

}  // namespace asckit::gbm
