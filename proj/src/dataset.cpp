#include "asckit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace asckit::dataset {

int DatasetManifest::class_index(const std::string& label) const {
  const auto it = std::lower_bound(class_names.begin(), class_names.end(), label);
  if (it == class_names.end() || *it != label) throw DataError("unknown scene label: " + label);
  return static_cast<int>(it - class_names.begin());
}

std::string DatasetManifest::recording_id(std::size_t entry_idx) const {
  return fs::path(entries.at(entry_idx).audio_path).stem().string();
}

std::string DatasetManifest::audio_file(std::size_t entry_idx) const {
  return (fs::path(base_dir) / entries.at(entry_idx).audio_path).string();
}

DatasetManifest load_manifest(const std::string& path,
                              const std::vector<std::string>& fixed_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);

  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  if (m.base_dir.empty()) m.base_dir = ".";

  std::set<std::string> labels(fixed_classes.begin(), fixed_classes.end());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      throw DataError("manifest parse error at line " + std::to_string(line_no) +
                      ": expected `path<TAB>label`");
    }
    ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
    if (!fixed_classes.empty() &&
        std::find(fixed_classes.begin(), fixed_classes.end(), e.scene_label) ==
            fixed_classes.end()) {
      throw DataError("label '" + e.scene_label + "' at line " + std::to_string(line_no) +
                      " is not in the supplied class list");
    }
    labels.insert(e.scene_label);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw DataError("empty manifest: " + path);
  m.class_names.assign(labels.begin(), labels.end());  // std::set iterates sorted
  return m;
}

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2");

  std::map<std::string, std::vector<std::string>> per_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    per_class[manifest.entries[i].scene_label].push_back(manifest.recording_id(i));
  }
  for (const auto& [label, ids] : per_class) {
    if (static_cast<int>(ids.size()) < k) {
      throw DataError("class '" + label + "' has " + std::to_string(ids.size()) +
                      " recordings, fewer than k=" + std::to_string(k));
    }
  }

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) folds[f].fold_index = f + 1;

  RngStream rng(seed);
  std::vector<std::vector<std::string>> test_ids(k);
  for (auto& [label, ids] : per_class) {  // std::map: sorted label order
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      test_ids[i % k].push_back(ids[i]);
    }
  }
  for (int f = 0; f < k; ++f) {
    std::sort(test_ids[f].begin(), test_ids[f].end());
    folds[f].test_ids = test_ids[f];
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      folds[f].train_ids.insert(folds[f].train_ids.end(), test_ids[g].begin(), test_ids[g].end());
    }
    std::sort(folds[f].train_ids.begin(), folds[f].train_ids.end());
  }
  return folds;
}

namespace {

void write_id_file(const std::string& path, const DatasetManifest& manifest,
                   const std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_id[manifest.recording_id(i)] = i;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write fold file: " + path);
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("fold id not in manifest: " + id);
    out << manifest.entries[it->second].audio_path << '\t'
        << manifest.entries[it->second].scene_label << '\n';
  }
}

}  // namespace

void save_folds(const std::string& dir, const DatasetManifest& manifest,
                const std::vector<FoldSplit>& folds) {
  fs::create_directories(dir);
  for (const auto& f : folds) {
    const std::string stem = (fs::path(dir) / ("fold" + std::to_string(f.fold_index))).string();
    write_id_file(stem + "_train.txt", manifest, f.train_ids);
    write_id_file(stem + "_test.txt", manifest, f.test_ids);
  }
}

std::vector<FoldSplit> load_folds(const std::string& dir, const DatasetManifest& manifest, int k) {
  std::vector<FoldSplit> folds;
  for (int f = 1; f <= k; ++f) {
    const std::string stem = (fs::path(dir) / ("fold" + std::to_string(f))).string();
    FoldSplit split;
    split.fold_index = f;
    for (const char* part : {"_train.txt", "_test.txt"}) {
      const std::string path = stem + part;
      DatasetManifest sub = load_manifest(path);
      auto& dst = std::string(part) == "_train.txt" ? split.train_ids : split.test_ids;
      for (std::size_t i = 0; i < sub.entries.size(); ++i) dst.push_back(sub.recording_id(i));
      std::sort(dst.begin(), dst.end());
    }
    folds.push_back(std::move(split));
  }
  // the test sides must partition the manifest
  std::set<std::string> seen;
  for (const auto& f : folds) {
    for (const auto& id : f.test_ids) {
      if (!seen.insert(id).second) throw DataError("fold files overlap on id: " + id);
    }
  }
  if (seen.size() != manifest.entries.size()) {
    throw DataError("fold files do not cover the manifest exactly once");
  }
  return folds;
}

ClassSignature synthetic_signature(int class_idx) {
  ClassSignature sig;
  // Tones spaced log-uniformly across classes; inharmonic ratios so that
  // chroma/tonal descriptors vary too.
  const double f1 = 220.0 * std::pow(2.0, class_idx / 5.0);
  sig.tone_hz = {f1, f1 * 2.7, f1 * 5.9};
  sig.noise_tilt = 0.55 + 0.08 * (class_idx % 5);
  sig.am_rate_hz = 1.5 + 0.45 * class_idx;
  return sig;
}

std::vector<double> synthesize_recording(const SyntheticSceneSpec& spec, int class_idx,
                                         int rec_idx) {
  const ClassSignature sig = synthetic_signature(class_idx);
  const int n = static_cast<int>(std::llround(spec.duration_s * audio::kSampleRate));

  // Stream seeded by (seed, class, index) so corpora are order-independent.
  std::uint64_t mix = spec.seed;
  mix = fnv1a64(&mix, sizeof(mix)) ^ (0x9e3779b97f4a7c15ull * (class_idx + 1));
  mix = fnv1a64(&mix, sizeof(mix)) ^ (0xbf58476d1ce4e5b9ull * (rec_idx + 1));
  RngStream rng(mix);

  const double two_pi = 6.283185307179586476925286766559;
  const int n_tones = static_cast<int>(sig.tone_hz.size());
  std::vector<double> phase(n_tones), amp(n_tones);
  for (int t = 0; t < n_tones; ++t) {
    phase[t] = rng.uniform(0.0, two_pi);
    amp[t] = 0.22 * (1.0 + 0.1 * (2.0 * rng.uniform() - 1.0));
  }
  const double am_phase = rng.uniform(0.0, two_pi);

  std::vector<double> x(n, 0.0);
  double lp = 0.0;  // one-pole state shaping the noise tilt
  const double pole = sig.noise_tilt;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / audio::kSampleRate;
    const double env = 1.0 + 0.7 * std::sin(two_pi * sig.am_rate_hz * t + am_phase);
    double s = 0.0;
    for (int k = 0; k < n_tones; ++k) {
      s += amp[k] * std::sin(two_pi * sig.tone_hz[k] * t + phase[k]);
    }
    const double white = 2.0 * rng.uniform() - 1.0;
    lp = pole * lp + (1.0 - pole) * white;
    x[i] = 0.5 * env * s + 0.08 * lp + 0.02 * white;
  }

  // keep clear of the 16-bit clip point
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double g = 0.9 / peak;
    for (double& v : x) v *= g;
  }
  return x;
}

DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec,
                                           const std::string& out_dir) {
  if (spec.duration_s <= 1.5) throw ConfigError("synthetic duration must exceed 1.5 s");
  if (spec.n_classes < 2) throw ConfigError("synthetic corpus needs >= 2 classes");

  fs::create_directories(fs::path(out_dir) / "audio");
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest: " + manifest_path);

  for (int c = 0; c < spec.n_classes; ++c) {
    char label[16];
    std::snprintf(label, sizeof(label), "scene%02d", c);
    for (int r = 0; r < spec.recordings_per_class; ++r) {
      char name[32];
      std::snprintf(name, sizeof(name), "%s_r%03d.wav", label, r);
      const std::string rel = (fs::path("audio") / name).string();
      audio::write_wav16((fs::path(out_dir) / rel).string(),
                         synthesize_recording(spec, c, r));
      manifest << rel << '\t' << label << '\n';
    }
  }
  manifest.close();
  return load_manifest(manifest_path);
}

audio::Recording load_entry(const DatasetManifest& manifest, std::size_t entry_idx) {
  audio::Recording rec = audio::load_recording(manifest.audio_file(entry_idx));
  rec.id = manifest.recording_id(entry_idx);
  rec.label = manifest.class_index(manifest.entries.at(entry_idx).scene_label);
  return rec;
}

}  // namespace asckit::dataset
