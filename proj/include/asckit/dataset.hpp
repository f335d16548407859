#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asckit/audio.hpp"
#include "asckit/common.hpp"

namespace asckit::dataset {

struct ManifestEntry {
  std::string audio_path;  // relative to the manifest's directory
  std::string scene_label;
};

/// Tab-separated `path<TAB>label` manifest plus the ordered class list.
/// Class index == rank of the label in the lexicographically sorted class
/// names, which keeps the label<->index map stable across modules.
struct DatasetManifest {
  std::string base_dir;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  int class_index(const std::string& label) const;
  std::string recording_id(std::size_t entry_idx) const;
  std::string audio_file(std::size_t entry_idx) const;
};

struct FoldSplit {
  int fold_index = 0;  // 1-based
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct SyntheticSceneSpec {
  int n_classes = 15;
  int recordings_per_class = 4;
  double duration_s = 10.0;
  std::uint64_t seed = 0;
};

/// Parses a manifest file. When `fixed_classes` is given, any label outside it
/// is an error; otherwise class names are the sorted distinct labels seen.
DatasetManifest load_manifest(const std::string& path,
                              const std::vector<std::string>& fixed_classes = {});

/// Stratified k-fold split with per-class counts balanced to +-1.
std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

/// Writes fold definition files (fold<i>_train.txt / fold<i>_test.txt, same
/// tab-separated format as the manifest) into `dir`.
void save_folds(const std::string& dir, const DatasetManifest& manifest,
                const std::vector<FoldSplit>& folds);

/// Loads fold files previously written by save_folds (or provided externally
/// in the same format). Returns folds 1..k.
std::vector<FoldSplit> load_folds(const std::string& dir, const DatasetManifest& manifest, int k);

/// Per-class generative signature of the synthetic corpus. Classes differ in
/// noise spectral tilt, tone center frequencies and amplitude-modulation rate,
/// so both long-term spectra and spectro-temporal patterns carry the label.
struct ClassSignature {
  double noise_tilt = 0.0;  // one-pole lowpass coefficient shaping the noise
  std::vector<double> tone_hz;
  double am_rate_hz = 0.0;
};

ClassSignature synthetic_signature(int class_idx);

/// Renders one synthetic recording deterministically from (spec.seed, class,
/// index); the per-recording stream is independent of generation order.
std::vector<double> synthesize_recording(const SyntheticSceneSpec& spec, int class_idx,
                                         int rec_idx);

/// Generates WAV files plus manifest under out_dir. Deterministic per
/// spec+seed (byte-identical output across runs).
DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec,
                                           const std::string& out_dir);

/// Loads the audio for one manifest entry, attaching id and label index.
audio::Recording load_entry(const DatasetManifest& manifest, std::size_t entry_idx);

}  // namespace asckit::dataset
