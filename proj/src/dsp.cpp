#include "asckit/dsp.hpp"

#include <algorithm>
#include <cmath>

namespace asckit::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw NumericError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

double hz_to_mel(double hz) {
  constexpr double lin_slope = 3.0 / 200.0;
  constexpr double break_hz = 1000.0;
  constexpr double break_mel = 15.0;
  if (hz < break_hz) return hz * lin_slope;
  const double log_step = std::log(6.4) / 27.0;
  return break_mel + std::log(hz / break_hz) / log_step;
}

double mel_to_hz(double mel) {
  constexpr double lin_slope = 3.0 / 200.0;
  constexpr double break_mel = 15.0;
  if (mel < break_mel) return mel / lin_slope;
  const double log_step = std::log(6.4) / 27.0;
  return 1000.0 * std::exp(log_step * (mel - break_mel));
}

PowerSpectrogram stft_power(const audio::Recording& rec) {
  if (rec.sample_rate != audio::kSampleRate) {
    throw DataError("stft expects 44100 Hz input, got " + std::to_string(rec.sample_rate));
  }
  const auto n = static_cast<long long>(rec.samples.size());
  if (n < kWindow) throw DataError("waveform shorter than one analysis window");

  // no centering: frame f covers samples [f*hop, f*hop + window)
  const int frames = static_cast<int>((n - kWindow) / kHop) + 1;

  std::vector<double> window(kWindow);
  for (int i = 0; i < kWindow; ++i) {
    window[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (kWindow - 1));
  }

  PowerSpectrogram out;
  out.grid.frames = frames;
  out.grid.width = kBins;
  out.grid.values.resize(static_cast<std::size_t>(frames) * kBins);

  std::vector<std::complex<double>> buf(kFftSize);
  for (int f = 0; f < frames; ++f) {
    const double* src = rec.samples.data() + static_cast<std::size_t>(f) * kHop;
    for (int i = 0; i < kWindow; ++i) buf[i] = src[i] * window[i];
    std::fill(buf.begin() + kWindow, buf.end(), std::complex<double>(0.0, 0.0));
    fft(buf);
    double* row = out.grid.row(f);
    for (int b = 0; b < kBins; ++b) row[b] = std::norm(buf[b]);
  }
  return out;
}

MelFilterbank build_mel_filterbank(int n_mels, double f_lo, double f_hi, int fft_size) {
  if (f_hi > audio::kSampleRate / 2.0 + 1e-9) throw ConfigError("mel upper edge above Nyquist");
  if (n_mels < 1) throw ConfigError("mel band count must be positive");

  const int bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(f_lo);
  const double mel_hi = hz_to_mel(f_hi);

  // n_mels triangles need n_mels + 2 edge frequencies
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  MelFilterbank bank;
  bank.n_mels = n_mels;
  bank.bins = bins;
  bank.weights.assign(static_cast<std::size_t>(n_mels) * bins, 0.0);
  bank.center_hz.resize(n_mels);

  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    bank.center_hz[m] = center;
    double* row = bank.weights.data() + static_cast<std::size_t>(m) * bins;
    double peak = 0.0;
    for (int b = 0; b < bins; ++b) {
      const double hz = static_cast<double>(b) * audio::kSampleRate / fft_size;
      double w = 0.0;
      if (hz > left && hz < right) {
        w = hz <= center ? (hz - left) / (center - left) : (right - hz) / (right - center);
      }
      row[b] = w;
      peak = std::max(peak, w);
    }
    if (peak <= 0.0) {
      throw ConfigError("fft size " + std::to_string(fft_size) +
                        " too small to resolve mel filter " + std::to_string(m));
    }
    for (int b = 0; b < bins; ++b) row[b] /= peak;  // peak exactly 1
  }
  return bank;
}

LogMelSpectrogram log_mel(const PowerSpectrogram& power, const MelFilterbank& bank) {
  if (power.grid.width != bank.bins) throw DataError("filterbank/spectrogram bin mismatch");
  LogMelSpectrogram out;
  out.frames = power.grid.frames;
  out.width = bank.n_mels;
  out.values.resize(static_cast<std::size_t>(out.frames) * out.width);
  for (int f = 0; f < out.frames; ++f) {
    const double* p = power.grid.row(f);
    double* dst = out.row(f);
    for (int m = 0; m < bank.n_mels; ++m) {
      const double* w = bank.row(m);
      double acc = 0.0;
      for (int b = 0; b < bank.bins; ++b) acc += w[b] * p[b];
      dst[m] = std::log(std::max(acc, kLogFloor));
    }
  }
  return out;
}

void StandardizationScaler::fit(const std::vector<const FrameMatrix*>& train) {
  if (train.empty() || train[0]->width == 0) throw DataError("scaler fit on empty training data");
  const int width = train[0]->width;

  std::vector<double> sum(width, 0.0), sumsq(width, 0.0);
  std::size_t count = 0;
  for (const FrameMatrix* m : train) {
    if (m->width != width) throw DataError("scaler fit: inconsistent band counts");
    for (int f = 0; f < m->frames; ++f) {
      const double* row = m->row(f);
      for (int w = 0; w < width; ++w) {
        sum[w] += row[w];
        sumsq[w] += row[w] * row[w];
      }
    }
    count += static_cast<std::size_t>(m->frames);
  }
  if (count == 0) throw DataError("scaler fit on zero frames");

  mean_.assign(width, 0.0);
  std_.assign(width, 1.0);
  if (scope_ == Scope::global) {
    double s = 0.0, ss = 0.0;
    for (int w = 0; w < width; ++w) {
      s += sum[w];
      ss += sumsq[w];
    }
    const double n = static_cast<double>(count) * width;
    const double mu = s / n;
    const double var = std::max(ss / n - mu * mu, 0.0);
    std::fill(mean_.begin(), mean_.end(), mu);
    std::fill(std_.begin(), std_.end(), std::max(std::sqrt(var), kStdFloor));
  } else {
    for (int w = 0; w < width; ++w) {
      const double mu = sum[w] / static_cast<double>(count);
      const double var = std::max(sumsq[w] / static_cast<double>(count) - mu * mu, 0.0);
      mean_[w] = mu;
      std_[w] = std::max(std::sqrt(var), kStdFloor);
    }
  }
  fitted_ = true;
}

FrameMatrix StandardizationScaler::apply(const FrameMatrix& x) const {
  if (!fitted_) throw NumericError("scaler applied before fit");
  if (x.width != static_cast<int>(mean_.size())) throw DataError("scaler width mismatch");
  FrameMatrix out = x;
  for (int f = 0; f < out.frames; ++f) {
    double* row = out.row(f);
    for (int w = 0; w < out.width; ++w) row[w] = (row[w] - mean_[w]) / std_[w];
  }
  return out;
}

void StandardizationScaler::set_stats(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != stddev.size() || mean.empty()) throw DataError("bad scaler stats");
  mean_ = std::move(mean);
  std_ = std::move(stddev);
  fitted_ = true;
}

std::vector<TFPatch> segment_patches(const FrameMatrix& logmel, const std::string& recording_id) {
  if (logmel.frames < kPatchFrames) {
    throw DataError("too few frames to form one patch: " + std::to_string(logmel.frames));
  }
  std::vector<TFPatch> patches(kPatchesPerRecording);
  for (int s = 0; s < kPatchesPerRecording; ++s) {
    TFPatch& p = patches[s];
    p.recording_id = recording_id;
    p.segment_index = s;
    p.grid.frames = kPatchFrames;
    p.grid.width = logmel.width;
    p.grid.values.resize(static_cast<std::size_t>(kPatchFrames) * logmel.width);
    for (int f = 0; f < kPatchFrames; ++f) {
      // past the end: repeat the final original frame
      const int src = std::min(s * kPatchFrames + f, logmel.frames - 1);
      std::copy_n(logmel.row(src), logmel.width, p.grid.row(f));
    }
  }
  return patches;
}

audio::Recording normalize_waveform(const audio::Recording& rec) {
  double peak = 0.0;
  for (double s : rec.samples) peak = std::max(peak, std::abs(s));
  if (peak <= 0.0) return rec;  // silent input passes through
  audio::Recording out = rec;
  for (double& s : out.samples) s /= peak;
  return out;
}

}  // namespace asckit::dsp
