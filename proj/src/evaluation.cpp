#include "asckit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "asckit/serialize.hpp"

namespace asckit::eval {

// ---------------------------------------------------------------------------
// metrics

RecordingPrediction aggregate_recording(const std::vector<std::vector<double>>& seg_probs,
                                        const std::string& recording_id, int true_label) {
  if (seg_probs.size() != 7) {
    throw DataError("aggregate_recording expects 7 segment vectors, got " +
                    std::to_string(seg_probs.size()));
  }
  const std::size_t k = seg_probs[0].size();
  RecordingPrediction pred;
  pred.recording_id = recording_id;
  pred.true_label = true_label;
  pred.probs.assign(k, 0.0);
  for (const auto& p : seg_probs) {
    if (p.size() != k) throw DataError("segment probability size mismatch");
    for (std::size_t i = 0; i < k; ++i) pred.probs[i] += p[i];
  }
  for (double& v : pred.probs) v /= 7.0;
  pred.predicted = 0;
  for (std::size_t i = 1; i < k; ++i) {
    if (pred.probs[i] > pred.probs[pred.predicted]) pred.predicted = static_cast<int>(i);
  }
  return pred;
}

double accuracy(const std::vector<RecordingPrediction>& predictions) {
  if (predictions.empty()) throw DataError("accuracy over an empty prediction set");
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    if (p.true_label < 0) throw DataError("accuracy needs true labels on every prediction");
    if (p.predicted == p.true_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

int ConfusionMatrix::total() const {
  int t = 0;
  for (int c : counts) t += c;
  return t;
}

ConfusionMatrix confusion(const std::vector<RecordingPrediction>& predictions, int n_classes) {
  ConfusionMatrix m;
  m.n_classes = n_classes;
  m.counts.assign(static_cast<std::size_t>(n_classes) * n_classes, 0);
  for (const auto& p : predictions) {
    if (p.true_label < 0 || p.true_label >= n_classes || p.predicted < 0 ||
        p.predicted >= n_classes) {
      throw DataError("confusion: label out of range");
    }
    ++m.at(p.true_label, p.predicted);
  }
  return m;
}

std::vector<int> confusion_diff(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  if (a.n_classes != b.n_classes) throw DataError("confusion_diff: size mismatch");
  for (int t = 0; t < a.n_classes; ++t) {
    int ra = 0, rb = 0;
    for (int p = 0; p < a.n_classes; ++p) {
      ra += a.at(t, p);
      rb += b.at(t, p);
    }
    if (ra != rb) {
      throw DataError("confusion_diff: matrices cover different recordings for class " +
                      std::to_string(t));
    }
  }
  std::vector<int> d(a.counts.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.counts[i] - b.counts[i];
  return d;
}

void write_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& class_names,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write confusion csv: " + path);
  out << "true\\predicted";
  for (int p = 0; p < m.n_classes; ++p) {
    out << ',' << (p < static_cast<int>(class_names.size()) ? class_names[p] : std::to_string(p));
  }
  out << '\n';
  for (int t = 0; t < m.n_classes; ++t) {
    out << (t < static_cast<int>(class_names.size()) ? class_names[t] : std::to_string(t));
    for (int p = 0; p < m.n_classes; ++p) out << ',' << m.at(t, p);
    out << '\n';
  }
}

double student_t_975(int dof) {
  // two-sided 95% quantiles; beyond the table the normal limit is close
  static constexpr double kTable[] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof < 1) throw ConfigError("t quantile needs dof >= 1");
  if (dof <= 30) return kTable[dof - 1];
  if (dof <= 40) return 2.021;
  if (dof <= 60) return 2.000;
  if (dof <= 120) return 1.980;
  return 1.960;
}

TrialStatistics trial_statistics(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw DataError("trial statistics over zero trials");
  TrialStatistics s;
  s.accuracies = accuracies;
  const double n = static_cast<double>(accuracies.size());
  for (double a : accuracies) s.mean += a;
  s.mean /= n;
  if (accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
    const double stddev = std::sqrt(ss / (n - 1.0));
    s.half_width_95 = student_t_975(static_cast<int>(accuracies.size()) - 1) * stddev /
                      std::sqrt(n);
  }
  return s;
}

TrialStatistics run_trials(const std::function<double(std::uint64_t)>& experiment, int n_trials,
                           std::uint64_t base_seed) {
  if (n_trials < 1) throw ConfigError("run_trials needs n_trials >= 1");
  std::vector<double> accs;
  accs.reserve(n_trials);
  for (int t = 0; t < n_trials; ++t) accs.push_back(experiment(base_seed + t));
  return trial_statistics(accs);
}

// ---------------------------------------------------------------------------
// data preparation and caches

std::vector<RecordingData> prepare_recordings(const dataset::DatasetManifest& manifest,
                                              const PrepareOptions& options) {
  std::vector<RecordingData> data(manifest.entries.size());
  parallel_for_blocks(manifest.entries.size(), [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t i = lo; i < hi; ++i) {
      const audio::Recording rec = dataset::load_entry(manifest, i);
      RecordingData& d = data[i];
      d.id = rec.id;
      d.label = rec.label.value_or(-1);
      if (options.want_patches) {
        const audio::Recording side =
            options.cnn_normalize_waveform ? dsp::normalize_waveform(rec) : rec;
        const dsp::PowerSpectrogram power = dsp::stft_power(side);
        static const dsp::MelFilterbank bank = dsp::build_mel_filterbank();
        const dsp::LogMelSpectrogram lm = dsp::log_mel(power, bank);
        for (auto& patch : dsp::segment_patches(lm, d.id)) {
          d.patches.push_back(std::move(patch.grid));
        }
      }
      if (options.want_features) {
        d.segments = features::extract_recording_features(rec);
      }
    }
  });
  return data;
}

void save_patch_cache(const std::string& path, const std::vector<RecordingData>& data,
                      bool normalized_waveform) {
  io::json ids = io::json::array(), labels = io::json::array();
  for (const auto& d : data) {
    ids.push_back(d.id);
    labels.push_back(d.label);
  }
  io::json head{{"format", "asckit-patches"},
                {"version", 1},
                {"patch_shape", {dsp::kPatchesPerRecording, dsp::kPatchFrames, dsp::kMelBands}},
                {"normalized_waveform", normalized_waveform},
                {"ids", ids},
                {"labels", labels}};
  io::BlobWriter w("ASCKPCH1", head);
  std::vector<double> flat;
  flat.reserve(data.size() * dsp::kPatchesPerRecording * dsp::kPatchFrames * dsp::kMelBands);
  for (const auto& d : data) {
    if (static_cast<int>(d.patches.size()) != dsp::kPatchesPerRecording) {
      throw DataError("patch cache: recording " + d.id + " lacks patches");
    }
    for (const auto& p : d.patches) flat.insert(flat.end(), p.values.begin(), p.values.end());
  }
  w.add_f64("patches", flat);
  w.write(path);
}

void load_patch_cache(const std::string& path, std::vector<RecordingData>& data) {
  io::BlobReader r(path, "ASCKPCH1");
  const auto ids = r.header().at("ids");
  const auto labels = r.header().at("labels");
  const std::vector<double> flat = r.f64("patches");
  const std::size_t per_patch = static_cast<std::size_t>(dsp::kPatchFrames) * dsp::kMelBands;
  const std::size_t per_rec = per_patch * dsp::kPatchesPerRecording;
  if (flat.size() != per_rec * ids.size()) throw DataError("patch cache: size mismatch");

  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < data.size(); ++i) pos[data[i].id] = i;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string id = ids[i].get<std::string>();
    const auto it = pos.find(id);
    if (it == pos.end()) continue;
    RecordingData& d = data[it->second];
    d.label = labels[i].get<int>();
    d.patches.assign(dsp::kPatchesPerRecording, {});
    for (int s = 0; s < dsp::kPatchesPerRecording; ++s) {
      dsp::FrameMatrix& m = d.patches[s];
      m.frames = dsp::kPatchFrames;
      m.width = dsp::kMelBands;
      const double* src = flat.data() + i * per_rec + s * per_patch;
      m.values.assign(src, src + per_patch);
    }
  }
}

void save_feature_cache(const std::string& path, const std::vector<RecordingData>& data) {
  io::json ids = io::json::array(), labels = io::json::array();
  for (const auto& d : data) {
    ids.push_back(d.id);
    labels.push_back(d.label);
  }
  io::json blocks = io::json::array();
  for (const auto& b : features::kBlockLayout) {
    blocks.push_back({{"name", b.name}, {"dim", b.dim}});
  }
  io::json head{{"format", "asckit-features"},
                {"version", 1},
                {"segments", features::kSegmentsPerRecording},
                {"segment_dim", features::kSegmentDim},
                {"block_layout", blocks},
                {"aggregations", {"mean", "var", "dmean", "dvar"}},
                {"ids", ids},
                {"labels", labels}};
  io::BlobWriter w("ASCKFEA1", head);
  std::vector<double> flat;
  flat.reserve(data.size() * features::kSegmentsPerRecording * features::kSegmentDim);
  for (const auto& d : data) {
    if (static_cast<int>(d.segments.size()) != features::kSegmentsPerRecording) {
      throw DataError("feature cache: recording " + d.id + " lacks segments");
    }
    for (const auto& s : d.segments) flat.insert(flat.end(), s.values.begin(), s.values.end());
  }
  w.add_f64("features", flat);
  w.write(path);
}

void load_feature_cache(const std::string& path, std::vector<RecordingData>& data) {
  io::BlobReader r(path, "ASCKFEA1");
  if (r.header().at("segment_dim").get<int>() != features::kSegmentDim) {
    throw DataError("feature cache: incompatible segment dimension");
  }
  // verify the embedded block layout before trusting the payload
  const auto blocks = r.header().at("block_layout");
  if (blocks.size() != features::kBlockLayout.size()) {
    throw DataError("feature cache: incompatible block layout");
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].at("name").get<std::string>() != features::kBlockLayout[b].name ||
        blocks[b].at("dim").get<int>() != features::kBlockLayout[b].dim) {
      throw DataError("feature cache: block layout mismatch at '" +
                      std::string(features::kBlockLayout[b].name) + "'");
    }
  }
  const auto ids = r.header().at("ids");
  const auto labels = r.header().at("labels");
  const std::vector<double> flat = r.f64("features");
  const std::size_t per_rec =
      static_cast<std::size_t>(features::kSegmentsPerRecording) * features::kSegmentDim;
  if (flat.size() != per_rec * ids.size()) throw DataError("feature cache: size mismatch");

  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < data.size(); ++i) pos[data[i].id] = i;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string id = ids[i].get<std::string>();
    const auto it = pos.find(id);
    if (it == pos.end()) continue;
    RecordingData& d = data[it->second];
    d.label = labels[i].get<int>();
    d.segments.assign(features::kSegmentsPerRecording, {});
    for (int s = 0; s < features::kSegmentsPerRecording; ++s) {
      features::SegmentFeatureVector& seg = d.segments[s];
      seg.recording_id = id;
      seg.segment_index = s;
      const double* src = flat.data() + i * per_rec + static_cast<std::size_t>(s) * features::kSegmentDim;
      std::copy_n(src, features::kSegmentDim, seg.values.begin());
    }
  }
}

// ---------------------------------------------------------------------------
// branches

std::string branch_tag(const BranchConfig& branch) {
  return std::holds_alternative<CnnBranchConfig>(branch) ? "cnn" : "gbm";
}

CnnModel fit_cnn_branch(const std::vector<const RecordingData*>& train,
                        const CnnBranchConfig& config) {
  if (train.empty()) throw DataError("cnn branch: empty training set");

  CnnModel model;
  model.scaler = dsp::StandardizationScaler(config.scaler_scope);
  std::vector<const dsp::FrameMatrix*> frames;
  for (const auto* rec : train) {
    for (const auto& p : rec->patches) frames.push_back(&p);
  }
  model.scaler.fit(frames);

  const int per_rec = dsp::kPatchesPerRecording;
  nn::Tensor4<float> patches(static_cast<int>(train.size()) * per_rec, 1, dsp::kPatchFrames,
                             dsp::kMelBands);
  std::vector<int> labels(patches.n);
  for (std::size_t r = 0; r < train.size(); ++r) {
    if (train[r]->label < 0) throw DataError("cnn branch: unlabeled training recording");
    for (int s = 0; s < per_rec; ++s) {
      const dsp::FrameMatrix std_patch = model.scaler.apply(train[r]->patches[s]);
      float* dst = patches.sample(static_cast<int>(r) * per_rec + s);
      for (std::size_t j = 0; j < std_patch.values.size(); ++j) {
        dst[j] = static_cast<float>(std_patch.values[j]);
      }
      labels[r * per_rec + s] = train[r]->label;
    }
  }

  model.net = nn::build_network<float>(config.network, config.training.seed);
  model.history = nn::train(model.net, patches, labels, config.training);
  return model;
}

std::vector<std::vector<double>> predict_cnn_branch(CnnModel& model, const RecordingData& rec) {
  nn::Tensor4<float> patches(dsp::kPatchesPerRecording, 1, dsp::kPatchFrames, dsp::kMelBands);
  for (int s = 0; s < dsp::kPatchesPerRecording; ++s) {
    const dsp::FrameMatrix std_patch = model.scaler.apply(rec.patches[s]);
    float* dst = patches.sample(s);
    for (std::size_t j = 0; j < std_patch.values.size(); ++j) {
      dst[j] = static_cast<float>(std_patch.values[j]);
    }
  }
  return nn::predict_segments(model.net, patches);
}

GbmModel fit_gbm_branch(const std::vector<const RecordingData*>& train,
                        const GbmBranchConfig& config) {
  if (train.empty()) throw DataError("gbm branch: empty training set");

  GbmModel model;
  std::vector<const features::SegmentFeatureVector*> segs;
  for (const auto* rec : train) {
    for (const auto& s : rec->segments) segs.push_back(&s);
  }
  model.scaler.fit(segs);

  const int n = static_cast<int>(segs.size());
  std::vector<double> X;
  X.reserve(static_cast<std::size_t>(n) * features::kSegmentDim);
  std::vector<int> y;
  y.reserve(n);
  for (const auto* rec : train) {
    if (rec->label < 0) throw DataError("gbm branch: unlabeled training recording");
    for (const auto& s : rec->segments) {
      const features::SegmentFeatureVector scaled = model.scaler.apply(s);
      X.insert(X.end(), scaled.values.begin(), scaled.values.end());
      y.push_back(rec->label);
    }
  }

  int dim = features::kSegmentDim;
  if (config.use_lda) {
    model.lda = lda::fit_lda(X, n, dim, y, config.lda_dim, config.lda_strict);
    X = lda::transform(*model.lda, X, n, dim);
    dim = model.lda->requested_dim;
  }

  const gbm::BinnedDataset binned = gbm::bin_features(X, n, dim, config.gbm.max_bins, y);
  model.ensemble = gbm::fit_gbm(binned, config.gbm);
  return model;
}

std::vector<std::vector<double>> predict_gbm_branch(const GbmModel& model,
                                                    const RecordingData& rec) {
  const int n = static_cast<int>(rec.segments.size());
  std::vector<double> X;
  X.reserve(static_cast<std::size_t>(n) * features::kSegmentDim);
  for (const auto& s : rec.segments) {
    const features::SegmentFeatureVector scaled = model.scaler.apply(s);
    X.insert(X.end(), scaled.values.begin(), scaled.values.end());
  }
  int dim = features::kSegmentDim;
  if (model.lda.has_value()) {
    X = lda::transform(*model.lda, X, n, dim);
    dim = model.lda->requested_dim;
  }
  const std::vector<double> probs = gbm::predict_proba(model.ensemble, X, n);
  const int k = model.ensemble.config.n_classes;
  std::vector<std::vector<double>> out(n);
  for (int s = 0; s < n; ++s) {
    out[s].assign(probs.begin() + static_cast<std::size_t>(s) * k,
                  probs.begin() + static_cast<std::size_t>(s + 1) * k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// workflows

namespace {

std::vector<std::vector<double>> predict_branch(const BranchConfig& branch, CnnModel* cnn,
                                                GbmModel* gbm_model, const RecordingData& rec) {
  if (std::holds_alternative<CnnBranchConfig>(branch)) return predict_cnn_branch(*cnn, rec);
  return predict_gbm_branch(*gbm_model, rec);
}

}  // namespace

CvOutcome run_cv(const std::vector<RecordingData>& data,
                 const std::vector<dataset::FoldSplit>& folds, const BranchConfig& branch,
                 std::uint64_t seed) {
  std::map<std::string, const RecordingData*> by_id;
  for (const auto& d : data) by_id[d.id] = &d;

  CvOutcome outcome;
  outcome.tag = branch_tag(branch);

  std::string hash_input;
  std::size_t pooled_correct = 0;

  for (const auto& fold : folds) {
    // leakage guard: the fit inputs must not contain any test recording
    std::set<std::string> test_set(fold.test_ids.begin(), fold.test_ids.end());
    for (const auto& id : fold.train_ids) {
      if (test_set.count(id)) {
        throw DataError("leakage: recording '" + id + "' is in both train and test of fold " +
                        std::to_string(fold.fold_index));
      }
    }

    std::vector<const RecordingData*> train;
    for (const auto& id : fold.train_ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("fold references unknown recording: " + id);
      train.push_back(it->second);
      hash_input += id;
      hash_input += '\n';
    }
    hash_input += "--fold--\n";

    CnnModel cnn;
    GbmModel gbm_model;
    if (const auto* cc = std::get_if<CnnBranchConfig>(&branch)) {
      CnnBranchConfig fold_cfg = *cc;
      fold_cfg.training.seed = seed + static_cast<std::uint64_t>(fold.fold_index) * 7919;
      cnn = fit_cnn_branch(train, fold_cfg);
    } else {
      gbm_model = fit_gbm_branch(train, std::get<GbmBranchConfig>(branch));
    }

    std::vector<RecordingPrediction> fold_preds;
    for (const auto& id : fold.test_ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("fold references unknown recording: " + id);
      const RecordingData& rec = *it->second;
      const auto seg_probs = predict_branch(branch, &cnn, &gbm_model, rec);
      RecordingPrediction pred = aggregate_recording(seg_probs, rec.id, rec.label);
      if (pred.predicted == pred.true_label) ++pooled_correct;
      fold_preds.push_back(pred);

      fuse::ProbRow row;
      row.recording_id = rec.id;
      row.label = rec.label;
      row.probs = pred.probs;
      row.model_tag = outcome.tag;
      outcome.out_of_fold.push_back(std::move(row));
    }
    outcome.fold_accuracy.push_back(accuracy(fold_preds));
  }

  // the union of fold test sets must cover the data exactly once
  std::set<std::string> covered;
  for (const auto& row : outcome.out_of_fold) {
    if (!covered.insert(row.recording_id).second) {
      throw DataError("out-of-fold coverage: duplicate recording " + row.recording_id);
    }
  }
  if (covered.size() != data.size()) {
    throw DataError("out-of-fold coverage: folds do not cover the dataset exactly once");
  }

  double sum = 0.0;
  for (double a : outcome.fold_accuracy) sum += a;
  outcome.mean_fold_accuracy = sum / static_cast<double>(outcome.fold_accuracy.size());
  outcome.pooled_accuracy = static_cast<double>(pooled_correct) / static_cast<double>(data.size());
  outcome.train_hash = hex64(fnv1a64(hash_input.data(), hash_input.size()));
  return outcome;
}

EvalOutcome run_eval(const std::vector<RecordingData>& dev, const std::vector<RecordingData>& evl,
                     const BranchConfig& branch, std::uint64_t seed, int n_classes) {
  std::set<std::string> dev_ids;
  for (const auto& d : dev) dev_ids.insert(d.id);
  for (const auto& e : evl) {
    if (dev_ids.count(e.id)) {
      throw DataError("dev/eval overlap on recording '" + e.id + "'");
    }
  }

  std::vector<const RecordingData*> train;
  for (const auto& d : dev) train.push_back(&d);

  CnnModel cnn;
  GbmModel gbm_model;
  if (const auto* cc = std::get_if<CnnBranchConfig>(&branch)) {
    CnnBranchConfig cfg = *cc;
    cfg.training.seed = seed;
    cnn = fit_cnn_branch(train, cfg);
  } else {
    gbm_model = fit_gbm_branch(train, std::get<GbmBranchConfig>(branch));
  }

  EvalOutcome outcome;
  outcome.tag = branch_tag(branch);
  bool all_labeled = true;
  for (const auto& rec : evl) {
    const auto seg_probs = predict_branch(branch, &cnn, &gbm_model, rec);
    RecordingPrediction pred = aggregate_recording(seg_probs, rec.id, rec.label);
    all_labeled = all_labeled && rec.label >= 0;

    fuse::ProbRow row;
    row.recording_id = rec.id;
    row.label = rec.label;
    row.probs = pred.probs;
    row.model_tag = outcome.tag;
    outcome.probabilities.push_back(std::move(row));
    outcome.predictions.push_back(std::move(pred));
  }
  if (all_labeled && !outcome.predictions.empty()) {
    outcome.accuracy = accuracy(outcome.predictions);
    outcome.confusion = confusion(outcome.predictions, n_classes);
  }
  return outcome;
}

std::pair<double, fuse::MetaLearner> stacked_cv_accuracy(
    const fuse::ProbTable& oof_cnn, const fuse::ProbTable& oof_gbm,
    const std::vector<dataset::FoldSplit>& folds, fuse::MetaKind kind, std::uint64_t seed) {
  std::map<std::string, const fuse::ProbRow*> cnn_by_id, gbm_by_id;
  for (const auto& r : oof_cnn) cnn_by_id[r.recording_id] = &r;
  for (const auto& r : oof_gbm) gbm_by_id[r.recording_id] = &r;

  std::size_t correct = 0, total = 0;
  for (const auto& fold : folds) {
    std::set<std::string> test_set(fold.test_ids.begin(), fold.test_ids.end());
    fuse::ProbTable train_cnn, train_gbm;
    for (const auto& r : oof_cnn) {
      if (!test_set.count(r.recording_id)) train_cnn.push_back(r);
    }
    for (const auto& r : oof_gbm) {
      if (!test_set.count(r.recording_id)) train_gbm.push_back(r);
    }
    const fuse::MetaLearner meta = fuse::fit_meta_learner(kind, train_cnn, train_gbm, seed);
    for (const auto& id : fold.test_ids) {
      const auto ci = cnn_by_id.find(id);
      const auto gi = gbm_by_id.find(id);
      if (ci == cnn_by_id.end() || gi == gbm_by_id.end()) {
        throw DataError("stacking: recording '" + id + "' missing from a probability table");
      }
      const int label = fuse::predict_stacked(meta, *ci->second, *gi->second);
      if (label == ci->second->label) ++correct;
      ++total;
    }
  }
  const double acc = total > 0 ? static_cast<double>(correct) / total : 0.0;
  fuse::MetaLearner final_meta = fuse::fit_meta_learner(kind, oof_cnn, oof_gbm, seed);
  return {acc, std::move(final_meta)};
}

}  // namespace asckit::eval
