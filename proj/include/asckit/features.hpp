#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asckit/audio.hpp"
#include "asckit/common.hpp"
#include "asckit/dsp.hpp"

namespace asckit::features {

// Frame-level pool: named blocks with fixed dimensions, 205 in total.
struct BlockSpec {
  const char* name;
  int dim;
};

inline constexpr std::array<BlockSpec, 10> kBlockLayout = {{
    {"bark_bands", 32},
    {"erb_bands", 23},
    {"mel_bands", 45},
    {"mfcc", 13},
    {"hpcp", 38},
    {"tonal", 3},
    {"pitch", 3},
    {"silence_rate", 3},
    {"spectral", 32},
    {"gfcc", 13},
}};

inline constexpr int kFrameDim = 205;
inline constexpr int kSegmentDim = kFrameDim * 4;  // mean|var|dmean|dvar
inline constexpr int kSegmentsPerRecording = 7;

int block_offset(const std::string& name);

using FeatureFrame = std::array<double, kFrameDim>;

struct SegmentFeatureVector {
  std::array<double, kSegmentDim> values{};
  std::string recording_id;
  int segment_index = 0;
};

/// The 7 segment spans of a 10 s recording: six of 1.5 s and a final 1 s.
std::vector<std::pair<double, double>> segment_boundaries(double duration_s = 10.0);

/// Stateful frame extractor; banks and DCT tables are built once. `prev_power`
/// (for spectral flux) may be null on the first frame of a segment.
class FrameFeatureExtractor {
 public:
  FrameFeatureExtractor();

  FeatureFrame compute(const double* frame_wave, int frame_len, const double* power,
                       const double* prev_power) const;

 private:
  dsp::MelFilterbank mel45_;
  std::vector<double> erb_weights_;  // 23 x kBins, squared triangles on the ERB-rate axis
  std::vector<int> bark_band_of_bin_;
  std::vector<double> dct45_;  // 13 x 45 orthonormal DCT-II
  std::vector<double> dct23_;  // 13 x 23
  std::vector<double> bin_hz_;
};

/// mean, population variance, and mean/variance of the first-order difference,
/// laid out as [mean | var | dmean | dvar] in block order.
SegmentFeatureVector aggregate_segment(const std::vector<FeatureFrame>& frames,
                                       const std::string& recording_id, int segment_index);

/// Full per-recording pipeline: STFT at the shared 1764/882 framing, frame
/// features, then aggregation over the 7 segment spans.
std::vector<SegmentFeatureVector> extract_recording_features(const audio::Recording& rec);

/// Mean/std scaler over the 820 dimensions, fitted on training segments only.
class FeatureScaler {
 public:
  void fit(const std::vector<const SegmentFeatureVector*>& train);
  SegmentFeatureVector apply(const SegmentFeatureVector& x) const;
  void apply_in_place(std::vector<double>& row_major, std::size_t n_rows) const;

  bool fitted() const { return fitted_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  void set_stats(std::vector<double> mean, std::vector<double> stddev);

 private:
  bool fitted_ = false;
  std::vector<double> mean_, std_;
};

}  // namespace asckit::features
