#include "asckit/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "asckit/serialize.hpp"

namespace fs = std::filesystem;

namespace asckit::cli {

namespace {

using io::json;

struct Context {
  Config cfg;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string command;
  std::vector<std::string> outputs;
};

void note_output(Context& ctx, const std::string& path) { ctx.outputs.push_back(path); }

void write_run_manifest(const Context& ctx) {
  json outputs = json::array();
  for (const auto& p : ctx.outputs) {
    outputs.push_back({{"path", p}, {"fnv64", hex64(fnv1a64_file(p))}});
  }
  json cfg_snapshot = json::object();
  for (const auto& [k, v] : ctx.cfg.snapshot()) cfg_snapshot[k] = v;
  json manifest{{"command", ctx.command},
                {"version", kVersion},
                {"seed", ctx.seed},
                {"threads", ctx.threads},
                {"config", cfg_snapshot},
                {"outputs", outputs}};
  const std::string path = (fs::path(ctx.out_dir) / "run_manifest.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write run manifest: " + path);
  out << manifest.dump(2) << '\n';
}

dataset::DatasetManifest dev_manifest(const Context& ctx) {
  const std::string kind = ctx.cfg.get_str("dataset.kind", "synthetic");
  if (kind == "synthetic") {
    const std::string dir = ctx.cfg.get_str("dataset.dir", "data/synth");
    const std::string path = (fs::path(dir) / "manifest.txt").string();
    if (!fs::exists(path)) {
      throw DataError("synthetic corpus manifest not found at " + path +
                      "; produce it with `asckit gen-synthetic`");
    }
    return dataset::load_manifest(path);
  }
  if (kind == "manifest") {
    return dataset::load_manifest(ctx.cfg.require_str("dataset.dev_manifest"));
  }
  throw ConfigError("dataset.kind must be `synthetic` or `manifest`, got " + kind);
}

dataset::DatasetManifest eval_manifest(const Context& ctx) {
  const std::string kind = ctx.cfg.get_str("dataset.kind", "synthetic");
  if (kind == "synthetic") {
    const std::string dir = ctx.cfg.require_str("dataset.eval_dir");
    const std::string path = (fs::path(dir) / "manifest.txt").string();
    if (!fs::exists(path)) {
      throw DataError("synthetic eval manifest not found at " + path +
                      "; produce it with `asckit gen-synthetic` (dataset.dir = " + dir + ")");
    }
    return dataset::load_manifest(path);
  }
  return dataset::load_manifest(ctx.cfg.require_str("dataset.eval_manifest"));
}

std::vector<dataset::FoldSplit> folds_for(const Context& ctx,
                                          const dataset::DatasetManifest& manifest) {
  const int k = static_cast<int>(ctx.cfg.get_int("dataset.folds", 4));
  std::string fold_dir = ctx.cfg.get_str("dataset.fold_dir", "");
  if (fold_dir.empty() && ctx.cfg.get_str("dataset.kind", "synthetic") == "synthetic") {
    fold_dir = (fs::path(ctx.cfg.get_str("dataset.dir", "data/synth")) / "folds").string();
  }
  if (!fold_dir.empty() && fs::exists(fs::path(fold_dir) / "fold1_train.txt")) {
    return dataset::load_folds(fold_dir, manifest, k);
  }
  return dataset::make_folds(manifest, k,
                             static_cast<std::uint64_t>(ctx.cfg.get_int("dataset.seed", 0)));
}

std::vector<eval::RecordingData> prepared_data(const Context& ctx,
                                               const dataset::DatasetManifest& manifest,
                                               bool want_patches, bool want_features) {
  std::vector<eval::RecordingData> data(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    data[i].id = manifest.recording_id(i);
    data[i].label = manifest.class_index(manifest.entries[i].scene_label);
  }

  bool need_patches = want_patches, need_features = want_features;
  const std::string patch_cache = (fs::path(ctx.out_dir) / "patches.ascp").string();
  const std::string feature_cache = (fs::path(ctx.out_dir) / "features.ascf").string();
  if (need_patches && fs::exists(patch_cache)) {
    eval::load_patch_cache(patch_cache, data);
    need_patches = false;
    for (const auto& d : data) {
      if (d.patches.empty()) {
        need_patches = true;  // cache does not cover this manifest
        break;
      }
    }
  }
  if (need_features && fs::exists(feature_cache)) {
    eval::load_feature_cache(feature_cache, data);
    need_features = false;
    for (const auto& d : data) {
      if (d.segments.empty()) {
        need_features = true;
        break;
      }
    }
  }
  if (need_patches || need_features) {
    eval::PrepareOptions opts;
    opts.cnn_normalize_waveform = ctx.cfg.get_bool("cnn.normalize_waveform", true);
    opts.want_patches = need_patches;
    opts.want_features = need_features;
    std::vector<eval::RecordingData> fresh = eval::prepare_recordings(manifest, opts);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (need_patches) data[i].patches = std::move(fresh[i].patches);
      if (need_features) data[i].segments = std::move(fresh[i].segments);
    }
  }
  return data;
}

json branch_outcome_json(const eval::CvOutcome& o) {
  return json{{"fold_accuracy", o.fold_accuracy},
              {"mean_fold_accuracy", o.mean_fold_accuracy},
              {"pooled_accuracy", o.pooled_accuracy},
              {"train_hash", o.train_hash}};
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_synthetic(Context& ctx) {
  dataset::SyntheticSceneSpec spec;
  spec.n_classes = static_cast<int>(ctx.cfg.get_int("dataset.classes", 15));
  spec.recordings_per_class = static_cast<int>(ctx.cfg.get_int("dataset.recordings_per_class", 4));
  spec.duration_s = ctx.cfg.get_double("dataset.duration_s", 10.0);
  spec.seed = static_cast<std::uint64_t>(ctx.cfg.get_int("dataset.seed", 0));
  const std::string dir = ctx.cfg.get_str("dataset.dir", "data/synth");

  const dataset::DatasetManifest manifest = dataset::generate_synthetic_dataset(spec, dir);
  const auto folds = dataset::make_folds(
      manifest, static_cast<int>(ctx.cfg.get_int("dataset.folds", 4)), spec.seed);
  dataset::save_folds((fs::path(dir) / "folds").string(), manifest, folds);

  note_output(ctx, (fs::path(dir) / "manifest.txt").string());
  for (const auto& f : folds) {
    note_output(ctx,
                (fs::path(dir) / "folds" / ("fold" + std::to_string(f.fold_index) + "_test.txt"))
                    .string());
  }
  std::cerr << "generated " << manifest.entries.size() << " recordings in " << dir << "\n";
  return 0;
}

int cmd_extract(Context& ctx, const std::string& kind) {
  const dataset::DatasetManifest manifest = dev_manifest(ctx);
  eval::PrepareOptions opts;
  opts.cnn_normalize_waveform = ctx.cfg.get_bool("cnn.normalize_waveform", true);
  opts.want_patches = kind == "mel";
  opts.want_features = kind == "features";
  const auto data = eval::prepare_recordings(manifest, opts);
  if (kind == "mel") {
    const std::string path = (fs::path(ctx.out_dir) / "patches.ascp").string();
    eval::save_patch_cache(path, data, opts.cnn_normalize_waveform);
    note_output(ctx, path);
  } else {
    const std::string path = (fs::path(ctx.out_dir) / "features.ascf").string();
    eval::save_feature_cache(path, data);
    note_output(ctx, path);
  }
  return 0;
}

int cmd_train(Context& ctx, const std::string& branch) {
  const dataset::DatasetManifest manifest = dev_manifest(ctx);
  const int n_classes = static_cast<int>(manifest.class_names.size());
  const auto data = prepared_data(ctx, manifest, branch == "cnn", branch == "gbm");
  std::vector<const eval::RecordingData*> train;
  for (const auto& d : data) train.push_back(&d);

  if (branch == "cnn") {
    eval::CnnBranchConfig cfg = cnn_branch_from_config(ctx.cfg, n_classes);
    cfg.training.seed = ctx.seed;
    eval::CnnModel model = eval::fit_cnn_branch(train, cfg);
    const std::string model_path = (fs::path(ctx.out_dir) / "cnn_model.ascnn").string();
    nn::save_checkpoint(model.net, model_path, model.scaler.mean(), model.scaler.stddev());
    const std::string hist_path = (fs::path(ctx.out_dir) / "cnn_history.jsonl").string();
    nn::write_history_jsonl(model.history, hist_path);
    note_output(ctx, model_path);
    note_output(ctx, hist_path);
    std::cerr << "cnn trained: best epoch " << model.history.best_epoch << ", best val loss "
              << model.history.best_val_loss << "\n";
  } else {
    eval::GbmModel model = eval::fit_gbm_branch(train, gbm_branch_from_config(ctx.cfg, n_classes));
    const std::string model_path = (fs::path(ctx.out_dir) / "gbm_model.ascgbm").string();
    save_gbm_model(model, model_path);
    note_output(ctx, model_path);
    std::cerr << "gbm trained: " << model.ensemble.trees.size() << " trees\n";
  }
  return 0;
}

int cmd_predict(Context& ctx, const std::string& branch, const std::string& model_path,
                const std::string& input_manifest, const std::string& tag,
                const std::string& out_csv) {
  if (!fs::exists(model_path)) {
    throw DataError("model file not found: " + model_path + "; produce it with `asckit train " +
                    branch + "`");
  }
  const dataset::DatasetManifest manifest = input_manifest.empty()
                                                ? eval_manifest(ctx)
                                                : dataset::load_manifest(input_manifest);

  eval::PrepareOptions opts;
  opts.cnn_normalize_waveform = ctx.cfg.get_bool("cnn.normalize_waveform", true);
  opts.want_patches = branch == "cnn";
  opts.want_features = branch == "gbm";
  const auto data = eval::prepare_recordings(manifest, opts);

  fuse::ProbTable table;
  if (branch == "cnn") {
    eval::CnnModel model;
    std::vector<double> mean, stddev;
    model.net = nn::load_checkpoint(model_path, &mean, &stddev);
    model.scaler.set_stats(std::move(mean), std::move(stddev));
    for (const auto& rec : data) {
      const auto seg_probs = eval::predict_cnn_branch(model, rec);
      const auto pred = eval::aggregate_recording(seg_probs, rec.id, rec.label);
      table.push_back({rec.id, rec.label, pred.probs, tag});
    }
  } else {
    const eval::GbmModel model = load_gbm_model(model_path);
    for (const auto& rec : data) {
      const auto seg_probs = eval::predict_gbm_branch(model, rec);
      const auto pred = eval::aggregate_recording(seg_probs, rec.id, rec.label);
      table.push_back({rec.id, rec.label, pred.probs, tag});
    }
  }
  const std::string out_path =
      out_csv.empty() ? (fs::path(ctx.out_dir) / (tag + "_probs.csv")).string() : out_csv;
  fuse::write_prob_csv(out_path, table);
  note_output(ctx, out_path);
  std::cerr << "wrote " << table.size() << " probability rows to " << out_path << "\n";
  return 0;
}

int cmd_grid_search(Context& ctx) {
  const dataset::DatasetManifest manifest = dev_manifest(ctx);
  const int n_classes = static_cast<int>(manifest.class_names.size());
  const auto folds = folds_for(ctx, manifest);
  const auto data = prepared_data(ctx, manifest, false, true);

  gbm::GridSpec grid;
  grid.learning_rate = ctx.cfg.get_double_list("grid.learning_rate", grid.learning_rate);
  grid.max_bins = ctx.cfg.get_int_list("grid.max_bins", grid.max_bins);
  grid.num_leaves = ctx.cfg.get_int_list("grid.num_leaves", grid.num_leaves);
  grid.min_data_in_leaf = ctx.cfg.get_int_list("grid.min_data_in_leaf", grid.min_data_in_leaf);
  grid.lda_dim = ctx.cfg.get_int_list("grid.lda_dim", grid.lda_dim);
  const bool use_lda = ctx.cfg.get_bool("gbm.use_lda", true);
  const eval::GbmBranchConfig base = gbm_branch_from_config(ctx.cfg, n_classes);

  std::size_t best = 0;
  const auto points = gbm::grid_search(
      grid, use_lda,
      [&](const gbm::GbmConfig& gc, std::optional<int> lda_dim) {
        eval::GbmBranchConfig branch = base;
        branch.gbm = gc;
        branch.gbm.num_rounds = base.gbm.num_rounds;
        branch.gbm.lambda_l2 = base.gbm.lambda_l2;
        branch.gbm.n_classes = n_classes;
        branch.use_lda = lda_dim.has_value();
        if (lda_dim.has_value()) branch.lda_dim = *lda_dim;
        return eval::run_cv(data, folds, branch, ctx.seed).fold_accuracy;
      },
      &best);

  const std::string report_path = (fs::path(ctx.out_dir) / "grid_search.csv").string();
  std::ofstream out(report_path, std::ios::trunc);
  out << "learning_rate,max_bins,num_leaves,min_data_in_leaf,lda_dim";
  for (std::size_t f = 0; f < folds.size(); ++f) out << ",fold" << (f + 1);
  out << ",mean\n";
  char buf[32];
  for (const auto& p : points) {
    out << p.config.learning_rate << ',' << p.config.max_bins << ',' << p.config.num_leaves << ','
        << p.config.min_data_in_leaf << ',';
    if (p.lda_dim.has_value()) out << *p.lda_dim;
    for (double a : p.fold_accuracy) {
      std::snprintf(buf, sizeof(buf), "%.17g", a);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", p.mean_accuracy);
    out << ',' << buf << '\n';
  }
  out.close();
  note_output(ctx, report_path);

  const auto& b = points[best];
  json best_json{{"learning_rate", b.config.learning_rate},
                 {"max_bins", b.config.max_bins},
                 {"num_leaves", b.config.num_leaves},
                 {"min_data_in_leaf", b.config.min_data_in_leaf},
                 {"mean_accuracy", b.mean_accuracy}};
  if (b.lda_dim.has_value()) best_json["lda_dim"] = *b.lda_dim;
  const std::string best_path = (fs::path(ctx.out_dir) / "grid_best.json").string();
  std::ofstream bout(best_path, std::ios::trunc);
  bout << best_json.dump(2) << '\n';
  bout.close();
  note_output(ctx, best_path);
  std::cerr << "grid search: " << points.size() << " points, best mean accuracy "
            << b.mean_accuracy << "\n";
  return 0;
}

int cmd_fuse(Context& ctx, std::string method_name, std::string cnn_csv, std::string gbm_csv,
             std::string meta_path, bool fit_meta, std::string out_csv) {
  if (method_name.empty()) method_name = ctx.cfg.get_str("fusion.method", "arithmetic");
  const fuse::FusionMethod method = fuse::parse_fusion_method(method_name);
  if (cnn_csv.empty()) cnn_csv = (fs::path(ctx.out_dir) / "cnn_oof.csv").string();
  if (gbm_csv.empty()) gbm_csv = (fs::path(ctx.out_dir) / "gbm_oof.csv").string();
  for (const auto& p : {cnn_csv, gbm_csv}) {
    if (!fs::exists(p)) {
      throw DataError("probability file not found: " + p +
                      "; produce it with `asckit predict` or `asckit evaluate cv`");
    }
  }
  const fuse::ProbTable cnn = fuse::read_prob_csv(cnn_csv);
  const fuse::ProbTable gbm_t = fuse::read_prob_csv(gbm_csv);
  std::map<std::string, const fuse::ProbRow*> gbm_by_id;
  for (const auto& r : gbm_t) gbm_by_id[r.recording_id] = &r;

  std::size_t correct = 0, labeled = 0;
  fuse::ProbTable fused_table;
  std::vector<std::pair<std::string, int>> stacked;

  if (method == fuse::FusionMethod::stacking) {
    fuse::MetaLearner meta;
    if (fit_meta) {
      meta = fuse::fit_meta_learner(
          fuse::parse_meta_kind(ctx.cfg.get_str("fusion.meta_learner", "logistic")), cnn, gbm_t,
          ctx.seed);
      if (meta_path.empty()) meta_path = (fs::path(ctx.out_dir) / "meta_model.ascmeta").string();
      fuse::save_meta(meta, meta_path);
      note_output(ctx, meta_path);
    } else {
      if (meta_path.empty()) meta_path = ctx.cfg.get_str("fusion.meta_model", "");
      if (meta_path.empty() || !fs::exists(meta_path)) {
        throw DataError("stacking needs a fitted meta learner; pass --meta or fit one with "
                        "`asckit fuse --method stacking --fit-meta`");
      }
      meta = fuse::load_meta(meta_path);
    }
    for (const auto& row : cnn) {
      const auto it = gbm_by_id.find(row.recording_id);
      if (it == gbm_by_id.end()) {
        throw DataError("recording '" + row.recording_id + "' missing from " + gbm_csv);
      }
      const int label = fuse::predict_stacked(meta, row, *it->second);
      stacked.emplace_back(row.recording_id, label);
      if (row.label >= 0) {
        ++labeled;
        if (label == row.label) ++correct;
      }
    }
  } else {
    for (const auto& row : cnn) {
      const auto it = gbm_by_id.find(row.recording_id);
      if (it == gbm_by_id.end()) {
        throw DataError("recording '" + row.recording_id + "' missing from " + gbm_csv);
      }
      auto [probs, label] = fuse::fuse_simple(method, row, *it->second);
      if (row.label >= 0) {
        ++labeled;
        if (label == row.label) ++correct;
      }
      fused_table.push_back({row.recording_id, row.label, std::move(probs),
                             "fused_" + method_name});
    }
  }

  if (out_csv.empty()) out_csv = (fs::path(ctx.out_dir) / ("fused_" + method_name + ".csv")).string();
  if (method == fuse::FusionMethod::stacking) {
    std::ofstream out(out_csv, std::ios::trunc);
    out << "recording_id,predicted\n";
    for (const auto& [id, label] : stacked) out << id << ',' << label << '\n';
  } else {
    fuse::write_prob_csv(out_csv, fused_table);
  }
  note_output(ctx, out_csv);

  json metrics{{"method", method_name}, {"rows", cnn.size()}};
  if (labeled > 0) {
    metrics["accuracy"] = static_cast<double>(correct) / static_cast<double>(labeled);
  }
  const std::string metrics_path = (fs::path(ctx.out_dir) / "fuse_metrics.json").string();
  std::ofstream mout(metrics_path, std::ios::trunc);
  mout << metrics.dump(2) << '\n';
  mout.close();
  note_output(ctx, metrics_path);
  if (labeled > 0) {
    std::cerr << "fusion (" << method_name
              << ") accuracy: " << static_cast<double>(correct) / labeled << "\n";
  }
  return 0;
}

int cmd_evaluate_cv(Context& ctx) {
  const dataset::DatasetManifest manifest = dev_manifest(ctx);
  const int n_classes = static_cast<int>(manifest.class_names.size());
  const auto folds = folds_for(ctx, manifest);
  const auto branches = ctx.cfg.get_list("evaluation.branches", {"cnn", "gbm"});
  const int n_trials = static_cast<int>(ctx.cfg.get_int("evaluation.n_trials", 1));

  const bool want_cnn = std::find(branches.begin(), branches.end(), "cnn") != branches.end();
  const bool want_gbm = std::find(branches.begin(), branches.end(), "gbm") != branches.end();
  const auto data = prepared_data(ctx, manifest, want_cnn, want_gbm);

  json trials = json::array();
  std::map<std::string, std::vector<double>> branch_trial_acc;
  std::map<std::string, std::vector<double>> fusion_trial_acc;

  for (int t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = ctx.seed + static_cast<std::uint64_t>(t);
    json trial{{"seed", trial_seed}};
    json branch_json = json::object();

    std::optional<eval::CvOutcome> cnn_out, gbm_out;
    if (want_cnn) {
      cnn_out = eval::run_cv(data, folds, cnn_branch_from_config(ctx.cfg, n_classes), trial_seed);
      branch_json["cnn"] = branch_outcome_json(*cnn_out);
      branch_trial_acc["cnn"].push_back(cnn_out->mean_fold_accuracy);
    }
    if (want_gbm) {
      gbm_out = eval::run_cv(data, folds, gbm_branch_from_config(ctx.cfg, n_classes), trial_seed);
      branch_json["gbm"] = branch_outcome_json(*gbm_out);
      branch_trial_acc["gbm"].push_back(gbm_out->mean_fold_accuracy);
    }
    trial["branches"] = branch_json;

    if (cnn_out && gbm_out) {
      json fusion = json::object();
      std::map<std::string, const fuse::ProbRow*> gbm_by_id;
      for (const auto& r : gbm_out->out_of_fold) gbm_by_id[r.recording_id] = &r;
      for (const auto& m : {fuse::FusionMethod::arithmetic, fuse::FusionMethod::geometric,
                            fuse::FusionMethod::rank}) {
        std::size_t correct = 0;
        for (const auto& row : cnn_out->out_of_fold) {
          const auto [probs, label] = fuse::fuse_simple(m, row, *gbm_by_id.at(row.recording_id));
          if (label == row.label) ++correct;
        }
        const double acc = static_cast<double>(correct) / cnn_out->out_of_fold.size();
        fusion[fuse::fusion_method_name(m)] = acc;
        fusion_trial_acc[fuse::fusion_method_name(m)].push_back(acc);
      }
      const fuse::MetaKind kind =
          fuse::parse_meta_kind(ctx.cfg.get_str("fusion.meta_learner", "logistic"));
      const auto [stack_acc, meta] = eval::stacked_cv_accuracy(
          cnn_out->out_of_fold, gbm_out->out_of_fold, folds, kind, trial_seed);
      fusion["stacking"] = stack_acc;
      fusion_trial_acc["stacking"].push_back(stack_acc);
      trial["fusion"] = fusion;

      if (t == 0) {
        const std::string meta_path = (fs::path(ctx.out_dir) / "meta_model.ascmeta").string();
        fuse::save_meta(meta, meta_path);
        note_output(ctx, meta_path);
      }
    }

    if (t == 0) {
      for (const auto* out : {cnn_out ? &*cnn_out : nullptr, gbm_out ? &*gbm_out : nullptr}) {
        if (out == nullptr) continue;
        const std::string oof_path =
            (fs::path(ctx.out_dir) / (out->tag + "_oof.csv")).string();
        fuse::write_prob_csv(oof_path, out->out_of_fold);
        note_output(ctx, oof_path);

        std::vector<eval::RecordingPrediction> preds;
        for (const auto& r : out->out_of_fold) {
          eval::RecordingPrediction p;
          p.recording_id = r.recording_id;
          p.probs = r.probs;
          p.true_label = r.label;
          p.predicted = 0;
          for (std::size_t i = 1; i < r.probs.size(); ++i) {
            if (r.probs[i] > r.probs[p.predicted]) p.predicted = static_cast<int>(i);
          }
          preds.push_back(std::move(p));
        }
        const auto cm = eval::confusion(preds, n_classes);
        const std::string cm_path =
            (fs::path(ctx.out_dir) / (out->tag + "_confusion.csv")).string();
        eval::write_confusion_csv(cm, manifest.class_names, cm_path);
        note_output(ctx, cm_path);
      }
    }
    trials.push_back(std::move(trial));
  }

  json summary = json::object();
  for (const auto& [tag, accs] : branch_trial_acc) {
    const auto stats = eval::trial_statistics(accs);
    summary[tag] = {{"mean", stats.mean}, {"ci95_half_width", stats.half_width_95}};
  }
  for (const auto& [tag, accs] : fusion_trial_acc) {
    const auto stats = eval::trial_statistics(accs);
    summary["fusion_" + tag] = {{"mean", stats.mean}, {"ci95_half_width", stats.half_width_95}};
  }

  json metrics{{"mode", "cv"},
               {"n_classes", n_classes},
               {"folds", folds.size()},
               {"n_trials", n_trials},
               {"trials", trials},
               {"summary", summary}};
  const std::string metrics_path = (fs::path(ctx.out_dir) / "metrics.json").string();
  std::ofstream out(metrics_path, std::ios::trunc);
  out << metrics.dump(2) << '\n';
  out.close();
  note_output(ctx, metrics_path);
  std::cerr << "cv metrics written to " << metrics_path << "\n";
  return 0;
}

int cmd_evaluate_eval(Context& ctx) {
  const dataset::DatasetManifest dev_m = dev_manifest(ctx);
  const dataset::DatasetManifest eval_m = eval_manifest(ctx);
  const int n_classes = static_cast<int>(dev_m.class_names.size());
  const auto branches = ctx.cfg.get_list("evaluation.branches", {"cnn", "gbm"});
  const bool want_cnn = std::find(branches.begin(), branches.end(), "cnn") != branches.end();
  const bool want_gbm = std::find(branches.begin(), branches.end(), "gbm") != branches.end();

  const auto dev_data = prepared_data(ctx, dev_m, want_cnn, want_gbm);
  eval::PrepareOptions opts;
  opts.cnn_normalize_waveform = ctx.cfg.get_bool("cnn.normalize_waveform", true);
  opts.want_patches = want_cnn;
  opts.want_features = want_gbm;
  const auto eval_data = eval::prepare_recordings(eval_m, opts);

  json branch_json = json::object();
  std::optional<eval::EvalOutcome> cnn_out, gbm_out;
  if (want_cnn) {
    cnn_out = eval::run_eval(dev_data, eval_data, cnn_branch_from_config(ctx.cfg, n_classes),
                             ctx.seed, n_classes);
  }
  if (want_gbm) {
    gbm_out = eval::run_eval(dev_data, eval_data, gbm_branch_from_config(ctx.cfg, n_classes),
                             ctx.seed, n_classes);
  }

  for (const auto* out : {cnn_out ? &*cnn_out : nullptr, gbm_out ? &*gbm_out : nullptr}) {
    if (out == nullptr) continue;
    const std::string probs_path =
        (fs::path(ctx.out_dir) / (out->tag + "_eval_probs.csv")).string();
    fuse::write_prob_csv(probs_path, out->probabilities);
    note_output(ctx, probs_path);
    json bj{{"rows", out->probabilities.size()}};
    if (out->accuracy >= 0.0) {
      bj["accuracy"] = out->accuracy;
      const std::string cm_path =
          (fs::path(ctx.out_dir) / (out->tag + "_eval_confusion.csv")).string();
      eval::write_confusion_csv(out->confusion, dev_m.class_names, cm_path);
      note_output(ctx, cm_path);
    }
    branch_json[out->tag] = bj;
  }

  json metrics{{"mode", "eval"}, {"n_classes", n_classes}, {"branches", branch_json}};

  if (cnn_out && gbm_out && cnn_out->accuracy >= 0.0) {
    json fusion = json::object();
    std::map<std::string, const fuse::ProbRow*> gbm_by_id;
    for (const auto& r : gbm_out->probabilities) gbm_by_id[r.recording_id] = &r;
    for (const auto& m : {fuse::FusionMethod::arithmetic, fuse::FusionMethod::geometric,
                          fuse::FusionMethod::rank}) {
      std::size_t correct = 0;
      for (const auto& row : cnn_out->probabilities) {
        const auto [probs, label] = fuse::fuse_simple(m, row, *gbm_by_id.at(row.recording_id));
        if (label == row.label) ++correct;
      }
      fusion[fuse::fusion_method_name(m)] =
          static_cast<double>(correct) / cnn_out->probabilities.size();
    }
    // confusion-matrix difference between the branch systems
    const auto diff = eval::confusion_diff(cnn_out->confusion, gbm_out->confusion);
    const std::string diff_path = (fs::path(ctx.out_dir) / "confusion_diff.csv").string();
    std::ofstream dout(diff_path, std::ios::trunc);
    for (int t = 0; t < n_classes; ++t) {
      for (int p = 0; p < n_classes; ++p) {
        dout << diff[static_cast<std::size_t>(t) * n_classes + p]
             << (p + 1 == n_classes ? '\n' : ',');
      }
    }
    dout.close();
    note_output(ctx, diff_path);

    const std::string meta_path = ctx.cfg.get_str(
        "fusion.meta_model", (fs::path(ctx.out_dir) / "meta_model.ascmeta").string());
    if (fs::exists(meta_path)) {
      const fuse::MetaLearner meta = fuse::load_meta(meta_path);
      std::size_t correct = 0;
      for (const auto& row : cnn_out->probabilities) {
        const int label = fuse::predict_stacked(meta, row, *gbm_by_id.at(row.recording_id));
        if (label == row.label) ++correct;
      }
      fusion["stacking"] = static_cast<double>(correct) / cnn_out->probabilities.size();
    }
    metrics["fusion"] = fusion;
  }

  const std::string metrics_path = (fs::path(ctx.out_dir) / "metrics.json").string();
  std::ofstream out(metrics_path, std::ios::trunc);
  out << metrics.dump(2) << '\n';
  out.close();
  note_output(ctx, metrics_path);
  std::cerr << "eval metrics written to " << metrics_path << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const std::string metrics_path = (fs::path(run_dir) / "metrics.json").string();
  if (!fs::exists(metrics_path)) {
    throw DataError("no metrics.json in " + run_dir + "; run `asckit evaluate` first");
  }
  std::ifstream in(metrics_path);
  json metrics = json::parse(in);

  std::cout << "run: " << run_dir << "\n";
  std::cout << "mode: " << metrics.value("mode", std::string("?")) << "\n";
  if (metrics.contains("summary")) {
    std::cout << "-- summary over " << metrics.value("n_trials", 1) << " trial(s)\n";
    for (const auto& [key, val] : metrics["summary"].items()) {
      std::cout << "  " << key << ": " << val["mean"].get<double>();
      const double hw = val["ci95_half_width"].get<double>();
      if (hw > 0.0) std::cout << " +- " << hw;
      std::cout << "\n";
    }
  }
  if (metrics.contains("branches")) {
    for (const auto& [key, val] : metrics["branches"].items()) {
      std::cout << "  " << key << ": ";
      if (val.contains("accuracy")) {
        std::cout << "accuracy " << val["accuracy"].get<double>();
      } else {
        std::cout << val["rows"].get<std::size_t>() << " unlabeled rows";
      }
      std::cout << "\n";
    }
  }
  if (metrics.contains("fusion")) {
    std::cout << "-- fusion\n";
    for (const auto& [key, val] : metrics["fusion"].items()) {
      std::cout << "  " << key << ": " << val.get<double>() << "\n";
    }
  }
  const std::string manifest_path = (fs::path(run_dir) / "run_manifest.json").string();
  if (fs::exists(manifest_path)) {
    std::ifstream min(manifest_path);
    const json manifest = json::parse(min);
    std::cout << "-- run manifest: command `" << manifest.value("command", std::string("?"))
              << "`, seed " << manifest.value("seed", 0) << ", " << manifest["outputs"].size()
              << " output file(s)\n";
  }
  return 0;
}

}  // namespace

eval::CnnBranchConfig cnn_branch_from_config(const Config& cfg, int n_classes) {
  eval::CnnBranchConfig out;
  out.network.filter_configuration = cfg.get_str("cnn.filter_configuration", "CNN_4");
  out.network.pre_activation = cfg.get_bool("cnn.pre_activation", true);
  out.network.preact_inner = cfg.get_bool("cnn.preact_inner", false);
  out.network.classes = n_classes;
  out.network.l2 = cfg.get_double("cnn.l2", 1e-5);
  out.training.initial_lr = cfg.get_double("cnn.initial_lr", 0.002);
  out.training.plateau_patience = static_cast<int>(cfg.get_int("cnn.plateau_patience", 5));
  out.training.early_stop_patience = static_cast<int>(cfg.get_int("cnn.early_stop_patience", 15));
  out.training.max_epochs = static_cast<int>(cfg.get_int("cnn.max_epochs", 200));
  out.training.batch_size = static_cast<int>(cfg.get_int("cnn.batch_size", 64));
  out.training.val_fraction = cfg.get_double("cnn.val_fraction", 0.15);
  out.training.restore_best = cfg.get_str("cnn.restore", "best") == "best";
  const std::string scope = cfg.get_str("cnn.scaler_scope", "per_band");
  if (scope == "per_band") {
    out.scaler_scope = dsp::StandardizationScaler::Scope::per_band;
  } else if (scope == "global") {
    out.scaler_scope = dsp::StandardizationScaler::Scope::global;
  } else {
    throw ConfigError("cnn.scaler_scope must be per_band or global, got " + scope);
  }
  return out;
}

eval::GbmBranchConfig gbm_branch_from_config(const Config& cfg, int n_classes) {
  eval::GbmBranchConfig out;
  out.gbm.learning_rate = cfg.get_double("gbm.learning_rate", 0.05);
  out.gbm.max_bins = static_cast<int>(cfg.get_int("gbm.max_bins", 128));
  out.gbm.num_leaves = static_cast<int>(cfg.get_int("gbm.num_leaves", 128));
  out.gbm.min_data_in_leaf = static_cast<int>(cfg.get_int("gbm.min_data_in_leaf", 500));
  out.gbm.num_rounds = static_cast<int>(cfg.get_int("gbm.num_rounds", 100));
  out.gbm.lambda_l2 = cfg.get_double("gbm.lambda_l2", 0.0);
  out.gbm.n_classes = n_classes;
  out.use_lda = cfg.get_bool("gbm.use_lda", true);
  out.lda_dim = static_cast<int>(cfg.get_int("gbm.lda_dim", 64));
  out.lda_strict = cfg.get_bool("gbm.lda_strict", false);
  return out;
}

void save_gbm_model(const eval::GbmModel& model, const std::string& path) {
  // bundle: feature scaler + optional LDA + ensemble in one container
  io::json head{{"format", "asckit-gbm-bundle"},
                {"version", 1},
                {"has_lda", model.lda.has_value()},
                {"n_classes", model.ensemble.config.n_classes},
                {"learning_rate", model.ensemble.config.learning_rate},
                {"max_bins", model.ensemble.config.max_bins},
                {"num_leaves", model.ensemble.config.num_leaves},
                {"min_data_in_leaf", model.ensemble.config.min_data_in_leaf},
                {"num_rounds", model.ensemble.config.num_rounds},
                {"lambda_l2", model.ensemble.config.lambda_l2}};
  if (model.lda.has_value()) {
    head["lda_input_dim"] = model.lda->input_dim;
    head["lda_requested_dim"] = model.lda->requested_dim;
    head["lda_effective_rank"] = model.lda->effective_rank;
    head["lda_rank_warning"] = model.lda->rank_warning;
  }
  io::BlobWriter w("ASCKGBB1", head);
  w.add_f64("scaler_mean", model.scaler.mean());
  w.add_f64("scaler_std", model.scaler.stddev());
  if (model.lda.has_value()) {
    w.add_f64("lda_mean", model.lda->mean);
    w.add_f64("lda_eigenvalues", model.lda->eigenvalues);
    w.add_f64("lda_projection", model.lda->projection);
  }
  w.add_f64("base_scores", model.ensemble.base_scores);
  std::vector<double> edges;
  std::vector<std::int32_t> edge_counts;
  for (const auto& cuts : model.ensemble.cut_points) {
    edge_counts.push_back(static_cast<std::int32_t>(cuts.size()));
    edges.insert(edges.end(), cuts.begin(), cuts.end());
  }
  w.add_i32("edge_counts", edge_counts);
  w.add_f64("edges", edges);
  std::vector<std::int32_t> topo, node_counts;
  std::vector<double> values;
  for (const auto& t : model.ensemble.trees) {
    node_counts.push_back(static_cast<std::int32_t>(t.nodes.size()));
    for (const auto& nd : t.nodes) {
      topo.push_back(nd.feature);
      topo.push_back(nd.threshold);
      topo.push_back(nd.left);
      topo.push_back(nd.right);
      values.push_back(nd.value);
    }
  }
  w.add_i32("node_counts", node_counts);
  w.add_i32("topology", topo);
  w.add_f64("values", values);
  w.write(path);
}

eval::GbmModel load_gbm_model(const std::string& path) {
  io::BlobReader r(path, "ASCKGBB1");
  const auto& h = r.header();
  eval::GbmModel model;
  model.scaler.set_stats(r.f64("scaler_mean"), r.f64("scaler_std"));
  if (h.at("has_lda").get<bool>()) {
    lda::LdaModel m;
    m.input_dim = h.at("lda_input_dim").get<int>();
    m.requested_dim = h.at("lda_requested_dim").get<int>();
    m.effective_rank = h.at("lda_effective_rank").get<int>();
    m.rank_warning = h.at("lda_rank_warning").get<bool>();
    m.mean = r.f64("lda_mean");
    m.eigenvalues = r.f64("lda_eigenvalues");
    m.projection = r.f64("lda_projection");
    model.lda = std::move(m);
  }
  gbm::Ensemble& ens = model.ensemble;
  ens.config.n_classes = h.at("n_classes").get<int>();
  ens.config.learning_rate = h.at("learning_rate").get<double>();
  ens.config.max_bins = h.at("max_bins").get<int>();
  ens.config.num_leaves = h.at("num_leaves").get<int>();
  ens.config.min_data_in_leaf = h.at("min_data_in_leaf").get<int>();
  ens.config.num_rounds = h.at("num_rounds").get<int>();
  ens.config.lambda_l2 = h.at("lambda_l2").get<double>();
  ens.base_scores = r.f64("base_scores");
  const auto edge_counts = r.i32("edge_counts");
  const auto edges = r.f64("edges");
  std::size_t off = 0;
  for (std::int32_t c : edge_counts) {
    ens.cut_points.emplace_back(edges.begin() + off, edges.begin() + off + c);
    off += c;
  }
  const auto node_counts = r.i32("node_counts");
  const auto topo = r.i32("topology");
  const auto values = r.f64("values");
  std::size_t ni = 0;
  for (std::int32_t count : node_counts) {
    gbm::Tree t;
    t.leaf_count = 0;
    for (std::int32_t j = 0; j < count; ++j, ++ni) {
      gbm::Tree::Node nd;
      nd.feature = topo[4 * ni];
      nd.threshold = topo[4 * ni + 1];
      nd.left = topo[4 * ni + 2];
      nd.right = topo[4 * ni + 3];
      nd.value = values[ni];
      if (nd.feature < 0) ++t.leaf_count;
      t.nodes.push_back(nd);
    }
    ens.trees.push_back(std::move(t));
  }
  return model;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"acoustic scene classification toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::vector<std::string> overrides;
  long long seed_flag = -1;
  int threads_flag = 0;
  app.add_option("--config", config_path, "configuration file (ini-style sections)");
  app.add_option("--set", overrides, "override a config key, e.g. --set gbm.num_leaves=31")
      ->take_all();
  app.add_option("--seed", seed_flag, "override evaluation.seed");
  app.add_option("--threads", threads_flag, "worker cap; 1 guarantees bit-determinism");
  app.add_option("--out", out_override, "override output.dir");

  auto* gen = app.add_subcommand("gen-synthetic", "generate the synthetic scene corpus");
  std::string extract_kind;
  auto* extract = app.add_subcommand("extract", "extract cached inputs (mel | features)");
  extract->add_option("kind", extract_kind, "mel or features")->required();
  std::string train_branch;
  auto* train = app.add_subcommand("train", "train one branch on the full development set");
  train->add_option("branch", train_branch, "cnn or gbm")->required();
  auto* grid = app.add_subcommand("grid-search", "grid search (gbm)");
  std::string grid_what;
  grid->add_option("what", grid_what, "gbm")->required();

  auto* predict = app.add_subcommand("predict", "predict recording probabilities with a model");
  std::string pr_branch, pr_model, pr_input, pr_tag, pr_out;
  predict->add_option("--branch", pr_branch, "cnn or gbm")->required();
  predict->add_option("--model", pr_model, "model file")->required();
  predict->add_option("--input", pr_input, "manifest to predict (default: eval manifest)");
  predict->add_option("--tag", pr_tag, "model tag written into the csv");
  predict->add_option("--out-csv", pr_out, "output csv path");

  auto* fuse_cmd = app.add_subcommand("fuse", "fuse two probability tables");
  std::string fu_method, fu_cnn, fu_gbm, fu_meta, fu_out;
  bool fu_fit_meta = false;
  fuse_cmd->add_option("--method", fu_method, "arithmetic|geometric|rank|stacking");
  fuse_cmd->add_option("--cnn", fu_cnn, "cnn probability csv");
  fuse_cmd->add_option("--gbm", fu_gbm, "gbm probability csv");
  fuse_cmd->add_option("--meta", fu_meta, "meta learner model file");
  fuse_cmd->add_flag("--fit-meta", fu_fit_meta, "fit the meta learner on the given tables");
  fuse_cmd->add_option("--out-csv", fu_out, "output csv path");

  std::string eval_mode;
  auto* evaluate = app.add_subcommand("evaluate", "run a workflow (cv | eval)");
  evaluate->add_option("mode", eval_mode, "cv or eval")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--run", report_dir, "run directory (default: output.dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.cfg.load_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
      ctx.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    ctx.out_dir = out_override.empty() ? ctx.cfg.get_str("output.dir", "runs/default")
                                       : out_override;
    ctx.seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                              : static_cast<std::uint64_t>(ctx.cfg.get_int("evaluation.seed", 0));
    ctx.threads = threads_flag > 0 ? threads_flag
                                   : static_cast<int>(ctx.cfg.get_int("evaluation.threads", 0));
    if (ctx.threads > 0) set_max_threads(ctx.threads);
    ctx.threads = max_threads();
    fs::create_directories(ctx.out_dir);

    int rc = 0;
    if (gen->parsed()) {
      ctx.command = "gen-synthetic";
      rc = cmd_gen_synthetic(ctx);
    } else if (extract->parsed()) {
      if (extract_kind != "mel" && extract_kind != "features") {
        throw ConfigError("extract expects `mel` or `features`, got " + extract_kind);
      }
      ctx.command = "extract " + extract_kind;
      rc = cmd_extract(ctx, extract_kind);
    } else if (train->parsed()) {
      if (train_branch != "cnn" && train_branch != "gbm") {
        throw ConfigError("train expects `cnn` or `gbm`, got " + train_branch);
      }
      ctx.command = "train " + train_branch;
      rc = cmd_train(ctx, train_branch);
    } else if (grid->parsed()) {
      if (grid_what != "gbm") throw ConfigError("grid-search supports only `gbm`");
      ctx.command = "grid-search gbm";
      rc = cmd_grid_search(ctx);
    } else if (predict->parsed()) {
      if (pr_branch != "cnn" && pr_branch != "gbm") {
        throw ConfigError("--branch expects cnn or gbm, got " + pr_branch);
      }
      ctx.command = "predict";
      if (pr_tag.empty()) pr_tag = pr_branch;
      rc = cmd_predict(ctx, pr_branch, pr_model, pr_input, pr_tag, pr_out);
    } else if (fuse_cmd->parsed()) {
      ctx.command = "fuse";
      rc = cmd_fuse(ctx, fu_method, fu_cnn, fu_gbm, fu_meta, fu_fit_meta, fu_out);
    } else if (evaluate->parsed()) {
      if (eval_mode != "cv" && eval_mode != "eval") {
        throw ConfigError("evaluate expects `cv` or `eval`, got " + eval_mode);
      }
      ctx.command = "evaluate " + eval_mode;
      rc = eval_mode == "cv" ? cmd_evaluate_cv(ctx) : cmd_evaluate_eval(ctx);
    } else if (report->parsed()) {
      ctx.command = "report";
      return cmd_report(report_dir.empty() ? ctx.out_dir : report_dir);
    }
    if (rc == 0) write_run_manifest(ctx);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace asckit::cli
