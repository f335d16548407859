#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "asckit/common.hpp"
#include "asckit/dataset.hpp"
#include "asckit/dsp.hpp"
#include "asckit/features.hpp"
#include "asckit/fusion.hpp"
#include "asckit/gbm.hpp"
#include "asckit/lda.hpp"
#include "asckit/nn.hpp"

namespace asckit::eval {

// ---------------------------------------------------------------------------
// metrics

struct RecordingPrediction {
  std::string recording_id;
  std::vector<double> probs;  // segment-averaged
  int predicted = -1;
  int true_label = -1;
};

/// Elementwise mean of the 7 per-segment distributions; argmax label with the
/// lowest class index winning ties.
RecordingPrediction aggregate_recording(const std::vector<std::vector<double>>& seg_probs,
                                        const std::string& recording_id, int true_label = -1);

double accuracy(const std::vector<RecordingPrediction>& predictions);

struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<int> counts;  // rows true, columns predicted

  int& at(int t, int p) { return counts[static_cast<std::size_t>(t) * n_classes + p]; }
  int at(int t, int p) const { return counts[static_cast<std::size_t>(t) * n_classes + p]; }
  int total() const;
};

ConfusionMatrix confusion(const std::vector<RecordingPrediction>& predictions, int n_classes);

/// Entrywise A - B; both must cover the same number of recordings per class.
std::vector<int> confusion_diff(const ConfusionMatrix& a, const ConfusionMatrix& b);

void write_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& class_names,
                         const std::string& path);

struct TrialStatistics {
  std::vector<double> accuracies;
  double mean = 0.0;
  double half_width_95 = 0.0;  // Student-t, 0 when a single trial
};

TrialStatistics trial_statistics(const std::vector<double>& accuracies);
double student_t_975(int dof);

/// Runs `experiment(seed)` for trials t = 0..n-1 with seed base_seed + t.
TrialStatistics run_trials(const std::function<double(std::uint64_t)>& experiment, int n_trials,
                           std::uint64_t base_seed);

// ---------------------------------------------------------------------------
// branch pipelines

/// Per-recording inputs shared across folds: raw (unstandardized) log-mel
/// patches for the CNN branch and raw 820-dim segment features for the GBM
/// branch. Both are pure functions of the audio, so they are computed once.
struct RecordingData {
  std::string id;
  int label = -1;
  std::vector<dsp::FrameMatrix> patches;  // 7 x (75 x 128)
  std::vector<features::SegmentFeatureVector> segments;  // 7 x 820
};

struct PrepareOptions {
  bool cnn_normalize_waveform = true;  // peak normalization before the CNN front-end
  bool want_patches = true;
  bool want_features = true;
};

std::vector<RecordingData> prepare_recordings(const dataset::DatasetManifest& manifest,
                                              const PrepareOptions& options);

void save_patch_cache(const std::string& path, const std::vector<RecordingData>& data,
                      bool normalized_waveform);
void load_patch_cache(const std::string& path, std::vector<RecordingData>& data);
void save_feature_cache(const std::string& path, const std::vector<RecordingData>& data);
void load_feature_cache(const std::string& path, std::vector<RecordingData>& data);

struct CnnBranchConfig {
  nn::NetworkConfig network;
  nn::TrainingConfig training;
  dsp::StandardizationScaler::Scope scaler_scope = dsp::StandardizationScaler::Scope::per_band;
};

struct GbmBranchConfig {
  gbm::GbmConfig gbm;
  bool use_lda = true;
  int lda_dim = 64;
  bool lda_strict = false;
};

using BranchConfig = std::variant<CnnBranchConfig, GbmBranchConfig>;

std::string branch_tag(const BranchConfig& branch);

struct CnnModel {
  nn::Network<float> net;
  dsp::StandardizationScaler scaler;
  nn::TrainingHistory history;
};

CnnModel fit_cnn_branch(const std::vector<const RecordingData*>& train,
                        const CnnBranchConfig& config);
std::vector<std::vector<double>> predict_cnn_branch(CnnModel& model, const RecordingData& rec);

struct GbmModel {
  features::FeatureScaler scaler;
  std::optional<lda::LdaModel> lda;
  gbm::Ensemble ensemble;
};

GbmModel fit_gbm_branch(const std::vector<const RecordingData*>& train,
                        const GbmBranchConfig& config);
std::vector<std::vector<double>> predict_gbm_branch(const GbmModel& model,
                                                    const RecordingData& rec);

// ---------------------------------------------------------------------------
// workflows

struct CvOutcome {
  std::string tag;
  std::vector<double> fold_accuracy;
  double mean_fold_accuracy = 0.0;
  double pooled_accuracy = 0.0;  // over the concatenated out-of-fold predictions
  fuse::ProbTable out_of_fold;   // exactly one row per dev recording
  std::string train_hash;        // fnv64 over per-fold training id sets
};

/// Development-mode workflow: per fold, fit scalers/LDA/models on the fold's
/// training recordings only and predict its test recordings. A hard error is
/// raised if any test recording reaches the fit inputs.
CvOutcome run_cv(const std::vector<RecordingData>& data,
                 const std::vector<dataset::FoldSplit>& folds, const BranchConfig& branch,
                 std::uint64_t seed);

struct EvalOutcome {
  std::string tag;
  fuse::ProbTable probabilities;
  std::vector<RecordingPrediction> predictions;
  double accuracy = -1.0;  // -1 when the eval set has no labels
  ConfusionMatrix confusion;
};

/// Evaluation-mode workflow: fit on the full development data, predict the
/// disjoint evaluation data.
EvalOutcome run_eval(const std::vector<RecordingData>& dev,
                     const std::vector<RecordingData>& evl, const BranchConfig& branch,
                     std::uint64_t seed, int n_classes);

/// Fold-respecting stacking accuracy on out-of-fold tables: for each fold the
/// meta learner is fitted on the other folds' rows and scored on this fold's.
/// Also returns a final learner fitted on all rows.
std::pair<double, fuse::MetaLearner> stacked_cv_accuracy(
    const fuse::ProbTable& oof_cnn, const fuse::ProbTable& oof_gbm,
    const std::vector<dataset::FoldSplit>& folds, fuse::MetaKind kind, std::uint64_t seed);

}  // namespace asckit::eval
