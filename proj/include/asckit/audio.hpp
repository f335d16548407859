#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::audio {

inline constexpr int kSampleRate = 44100;

/// One audio recording: mono waveform in [-1,1] at 44.1 kHz plus metadata.
struct Recording {
  std::string id;
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  std::optional<int> label;  // scene class index, 0..n_classes-1
};

/// Reads a PCM WAV file (16-bit integer or 32-bit float, 1 or 2 channels).
/// Stereo is down-mixed by the per-sample mean of the channels. The file must
/// already be at 44.1 kHz; there is no resampling.
Recording load_recording(const std::string& path);

/// Writes a mono 16-bit PCM WAV at 44.1 kHz. Samples are clipped to [-1,1].
void write_wav16(const std::string& path, const std::vector<double>& samples,
                 int sample_rate = kSampleRate);

}  // namespace asckit::audio
