#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::fuse {

/// One row of the probability interchange table:
/// `recording_id,label,p0..p14,model_tag` (label empty when unknown).
struct ProbRow {
  std::string recording_id;
  int label = -1;  // -1 when unknown
  std::vector<double> probs;
  std::string model_tag;
};

using ProbTable = std::vector<ProbRow>;

void write_prob_csv(const std::string& path, const ProbTable& table);
ProbTable read_prob_csv(const std::string& path);

/// Validates non-negativity and sum 1 within 1e-6.
bool is_distribution(const std::vector<double>& p);

enum class FusionMethod { arithmetic, geometric, rank, stacking };

FusionMethod parse_fusion_method(const std::string& name);
std::string fusion_method_name(FusionMethod m);

/// Non-learned fusion of two probability vectors for the same recording.
/// Returns the fused distribution and the argmax label (lowest index on
/// ties). `stacking` is not valid here.
std::pair<std::vector<double>, int> fuse_simple(FusionMethod method, const ProbRow& p_cnn,
                                                const ProbRow& p_gbm);

enum class MetaKind { logistic, svm_linear, svm_rbf };

MetaKind parse_meta_kind(const std::string& name);
std::string meta_kind_name(MetaKind k);

/// Stacking meta learner over the 30-dim [cnn probs | gbm probs] features.
/// Logistic regression stores dense weights; the SVMs store their support
/// data per one-vs-rest class.
struct MetaLearner {
  MetaKind kind = MetaKind::logistic;
  int n_classes = 0;
  int input_dim = 0;
  bool fitted = false;
  double regularization = 0.0;  // lambda for logistic, C for SVM
  double gamma = 0.0;           // rbf only

  std::vector<double> weights;  // logistic: n_classes x (input_dim+1), bias last

  struct SvmClass {
    std::vector<double> coeff;  // alpha_i * y_i per support vector
    std::vector<double> support;  // row-major support vectors
    double bias = 0.0;
  };
  std::vector<SvmClass> svm;  // one-vs-rest, indexed by class
};

/// Joins the two out-of-fold tables by recording id (error if a recording is
/// missing on either side), grid-searches the regularization strength by
/// stratified 4-fold CV accuracy on a strong-regularization grid, then refits
/// on all rows. Ties prefer the stronger regularization.
MetaLearner fit_meta_learner(MetaKind kind, const ProbTable& dev_cnn, const ProbTable& dev_gbm,
                             std::uint64_t seed);

/// Class scores of a fitted meta learner (higher is better).
std::vector<double> meta_scores(const MetaLearner& meta, const std::vector<double>& features);

int predict_stacked(const MetaLearner& meta, const ProbRow& p_cnn, const ProbRow& p_gbm);

void save_meta(const MetaLearner& meta, const std::string& path);
MetaLearner load_meta(const std::string& path);

// exposed for tests: multinomial logistic regression on raw features
struct LogisticFit {
  std::vector<double> weights;
  std::vector<double> loss_trace;  // loss after each Newton iteration
};
LogisticFit fit_multinomial_logistic(const std::vector<double>& X, int n, int dim,
                                     const std::vector<int>& y, int n_classes, double lambda,
                                     double tol = 1e-8, int max_iter = 200);

}  // namespace asckit::fuse
