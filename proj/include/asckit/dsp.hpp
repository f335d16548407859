#pragma once

#include <complex>
#include <string>
#include <vector>

#include "asckit/audio.hpp"
#include "asckit/common.hpp"

namespace asckit::dsp {

// 40 ms Hamming windows with 50% overlap at 44.1 kHz, zero-padded to 2048.
inline constexpr int kWindow = 1764;
inline constexpr int kHop = 882;
inline constexpr int kFftSize = 2048;
inline constexpr int kBins = kFftSize / 2 + 1;
inline constexpr int kMelBands = 128;
inline constexpr int kPatchFrames = 75;
inline constexpr int kPatchesPerRecording = 7;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdFloor = 1e-8;

/// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a);

/// Row-major frames x values grid shared by spectrograms and patches.
struct FrameMatrix {
  int frames = 0;
  int width = 0;
  std::vector<double> values;  // frames * width

  double* row(int f) { return values.data() + static_cast<std::size_t>(f) * width; }
  const double* row(int f) const { return values.data() + static_cast<std::size_t>(f) * width; }
  double& at(int f, int w) { return values[static_cast<std::size_t>(f) * width + w]; }
  double at(int f, int w) const { return values[static_cast<std::size_t>(f) * width + w]; }
};

struct PowerSpectrogram {
  FrameMatrix grid;  // frames x kBins, squared STFT magnitudes
  int hop = kHop;
  int window = kWindow;
};

struct MelFilterbank {
  int n_mels = 0;
  int bins = 0;
  std::vector<double> weights;  // n_mels x bins, row peaks exactly 1
  std::vector<double> center_hz;

  const double* row(int m) const { return weights.data() + static_cast<std::size_t>(m) * bins; }
};

using LogMelSpectrogram = FrameMatrix;  // frames x n_mels

/// One standardized 75x128 log-mel segment.
struct TFPatch {
  FrameMatrix grid;  // kPatchFrames x kMelBands
  std::string recording_id;
  int segment_index = 0;  // 0..6
};

// Slaney mel scale: linear below 1 kHz (3/200 mel per Hz), logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

PowerSpectrogram stft_power(const audio::Recording& rec);

MelFilterbank build_mel_filterbank(int n_mels = kMelBands, double f_lo = 0.0,
                                   double f_hi = 22050.0, int fft_size = kFftSize);

LogMelSpectrogram log_mel(const PowerSpectrogram& power, const MelFilterbank& bank);

/// Per-column mean/std standardization fitted on training frames only.
/// Scope is per band by default; `global` pools all columns.
class StandardizationScaler {
 public:
  enum class Scope { per_band, global };

  explicit StandardizationScaler(Scope scope = Scope::per_band) : scope_(scope) {}

  void fit(const std::vector<const FrameMatrix*>& train);
  FrameMatrix apply(const FrameMatrix& x) const;

  bool fitted() const { return fitted_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  Scope scope() const { return scope_; }

  void set_stats(std::vector<double> mean, std::vector<double> stddev);

 private:
  Scope scope_;
  bool fitted_ = false;
  std::vector<double> mean_, std_;
};

/// Splits a 10 s spectrogram into 7 non-overlapping 75-frame patches; the
/// last patch repeats the final original frame to fill up.
std::vector<TFPatch> segment_patches(const FrameMatrix& logmel, const std::string& recording_id);

/// Peak normalization of the waveform; all-zero input is returned unchanged.
audio::Recording normalize_waveform(const audio::Recording& rec);

}  // namespace asckit::dsp
