#include "asckit/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace asckit::features {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTiny = 1e-12;

double bark_of_hz(double f) {
  return 13.0 * std::atan(0.00076 * f) + 3.5 * std::atan((f / 7500.0) * (f / 7500.0));
}

double erb_rate_of_hz(double f) { return 21.4 * std::log10(1.0 + 0.00437 * f); }
double hz_of_erb_rate(double e) { return (std::pow(10.0, e / 21.4) - 1.0) / 0.00437; }

// orthonormal DCT-II, `rows` coefficients of an `n`-point input
std::vector<double> make_dct(int rows, int n) {
  std::vector<double> m(static_cast<std::size_t>(rows) * n);
  for (int k = 0; k < rows; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      m[static_cast<std::size_t>(k) * n + i] = scale * std::cos(kPi * k * (2 * i + 1) / (2.0 * n));
    }
  }
  return m;
}

struct Peak {
  int bin;
  double hz;
  double power;
};

std::vector<Peak> spectral_peaks(const double* power, const std::vector<double>& bin_hz) {
  const int bins = static_cast<int>(bin_hz.size());
  double pmax = 0.0;
  for (int b = 0; b < bins; ++b) pmax = std::max(pmax, power[b]);
  std::vector<Peak> peaks;
  if (pmax <= 0.0) return peaks;
  const double thresh = 1e-6 * pmax;
  for (int b = 1; b + 1 < bins; ++b) {
    if (power[b] > thresh && power[b] > power[b - 1] && power[b] >= power[b + 1]) {
      peaks.push_back({b, bin_hz[b], power[b]});
    }
  }
  return peaks;
}

}  // namespace

int block_offset(const std::string& name) {
  int off = 0;
  for (const auto& b : kBlockLayout) {
    if (name == b.name) return off;
    off += b.dim;
  }
  throw ConfigError("unknown feature block: " + name);
}

std::vector<std::pair<double, double>> segment_boundaries(double duration_s) {
  if (duration_s < 10.0 - 1e-9) {
    throw DataError("segment boundaries need a >= 10 s recording");
  }
  std::vector<std::pair<double, double>> spans;
  for (int s = 0; s < 6; ++s) spans.emplace_back(1.5 * s, 1.5 * (s + 1));
  spans.emplace_back(9.0, 10.0);
  return spans;
}

FrameFeatureExtractor::FrameFeatureExtractor() {
  mel45_ = dsp::build_mel_filterbank(45, 0.0, 22050.0, dsp::kFftSize);
  // unit-sum rows: a flat power spectrum yields equal band energies, so the
  // cepstra of a flat spectrum collapse onto coefficient 0
  for (int m = 0; m < mel45_.n_mels; ++m) {
    double* row = mel45_.weights.data() + static_cast<std::size_t>(m) * mel45_.bins;
    const double s = std::accumulate(row, row + mel45_.bins, 0.0);
    for (int b = 0; b < mel45_.bins; ++b) row[b] /= s;
  }
  dct45_ = make_dct(13, 45);
  dct23_ = make_dct(13, 23);

  bin_hz_.resize(dsp::kBins);
  for (int b = 0; b < dsp::kBins; ++b) {
    bin_hz_[b] = static_cast<double>(b) * audio::kSampleRate / dsp::kFftSize;
  }

  // 32 rectangular bands equally spaced on the Bark axis
  bark_band_of_bin_.resize(dsp::kBins);
  const double bark_max = bark_of_hz(22050.0);
  for (int b = 0; b < dsp::kBins; ++b) {
    const int band = static_cast<int>(32.0 * bark_of_hz(bin_hz_[b]) / bark_max);
    bark_band_of_bin_[b] = std::min(band, 31);
  }

  // 23 squared triangles equally spaced on the ERB-rate axis
  erb_weights_.assign(static_cast<std::size_t>(23) * dsp::kBins, 0.0);
  const double erb_max = erb_rate_of_hz(22050.0);
  std::vector<double> edges(25);
  for (int i = 0; i < 25; ++i) edges[i] = erb_max * i / 24.0;
  for (int m = 0; m < 23; ++m) {
    double* row = erb_weights_.data() + static_cast<std::size_t>(m) * dsp::kBins;
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int b = 0; b < dsp::kBins; ++b) {
      const double r = erb_rate_of_hz(bin_hz_[b]);
      if (r > left && r < right) {
        const double tri =
            r <= center ? (r - left) / (center - left) : (right - r) / (right - center);
        row[b] = tri * tri;
      }
    }
    const double s = std::accumulate(row, row + dsp::kBins, 0.0);
    if (s > 0.0) {
      for (int b = 0; b < dsp::kBins; ++b) row[b] /= s;
    }
  }
}

FeatureFrame FrameFeatureExtractor::compute(const double* frame_wave, int frame_len,
                                            const double* power,
                                            const double* prev_power) const {
  FeatureFrame out{};
  double* bark = out.data() + block_offset("bark_bands");
  double* erb = out.data() + block_offset("erb_bands");
  double* mel = out.data() + block_offset("mel_bands");
  double* mfcc = out.data() + block_offset("mfcc");
  double* hpcp = out.data() + block_offset("hpcp");
  double* tonal = out.data() + block_offset("tonal");
  double* pitch = out.data() + block_offset("pitch");
  double* silence = out.data() + block_offset("silence_rate");
  double* spectral = out.data() + block_offset("spectral");
  double* gfcc = out.data() + block_offset("gfcc");

  const int bins = dsp::kBins;

  // --- band energies ---------------------------------------------------
  for (int b = 0; b < bins; ++b) bark[bark_band_of_bin_[b]] += power[b];
  for (int m = 0; m < 23; ++m) {
    const double* w = erb_weights_.data() + static_cast<std::size_t>(m) * bins;
    double acc = 0.0;
    for (int b = 0; b < bins; ++b) acc += w[b] * power[b];
    erb[m] = acc;
  }
  for (int m = 0; m < 45; ++m) {
    const double* w = mel45_.row(m);
    double acc = 0.0;
    for (int b = 0; b < bins; ++b) acc += w[b] * power[b];
    mel[m] = acc;
  }

  // --- cepstra -----------------------------------------------------------
  {
    double logmel[45], logerb[23];
    for (int m = 0; m < 45; ++m) logmel[m] = std::log(std::max(mel[m], dsp::kLogFloor));
    for (int m = 0; m < 23; ++m) logerb[m] = std::log(std::max(erb[m], dsp::kLogFloor));
    for (int k = 0; k < 13; ++k) {
      double a = 0.0, g = 0.0;
      for (int m = 0; m < 45; ++m) a += dct45_[static_cast<std::size_t>(k) * 45 + m] * logmel[m];
      for (int m = 0; m < 23; ++m) g += dct23_[static_cast<std::size_t>(k) * 23 + m] * logerb[m];
      mfcc[k] = a;
      gfcc[k] = g;
    }
  }

  // --- time-domain scalars -------------------------------------------
  double rms = 0.0;
  int zc = 0;
  for (int i = 0; i < frame_len; ++i) {
    rms += frame_wave[i] * frame_wave[i];
    if (i > 0 && ((frame_wave[i] >= 0.0) != (frame_wave[i - 1] >= 0.0))) ++zc;
  }
  rms = std::sqrt(rms / frame_len);
  const double zcr = frame_len > 1 ? static_cast<double>(zc) / (frame_len - 1) : 0.0;

  silence[0] = rms < 0.1 ? 1.0 : 0.0;          // -20 dBFS
  silence[1] = rms < 0.03162277660168379 ? 1.0 : 0.0;  // -30 dBFS
  silence[2] = rms < 0.001 ? 1.0 : 0.0;        // -60 dBFS

  // --- pitch via FFT autocorrelation ----------------------------------
  double f0 = 0.0;
  {
    const int n = 4096;  // >= frame_len + max lag, keeps the autocorr linear
    std::vector<std::complex<double>> buf(n, {0.0, 0.0});
    for (int i = 0; i < frame_len; ++i) buf[i] = frame_wave[i];
    dsp::fft(buf);
    for (auto& v : buf) v = std::norm(v);
    dsp::fft(buf);  // forward FFT of a real even sequence: n * autocorrelation
    const double r0 = buf[0].real();
    if (r0 > kTiny) {
      const int lag_min = 44;    // ~1000 Hz
      const int lag_max = 1102;  // 40 Hz
      int best = 0;
      double best_r = 0.0, pos_sum = 0.0;
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        const double r = buf[lag].real() / r0;
        pos_sum += std::max(r, 0.0);
        if (r > best_r) {
          best_r = r;
          best = lag;
        }
      }
      if (best > 0) {
        f0 = static_cast<double>(audio::kSampleRate) / best;
        const double conf = std::clamp(best_r, 0.0, 1.0);
        pitch[0] = f0;
        pitch[1] = conf;
        pitch[2] = std::max(0.0, conf - pos_sum / (lag_max - lag_min + 1));
      }
    }
  }

  // --- spectral peaks, HPCP, tonal -------------------------------------
  const std::vector<Peak> peaks = spectral_peaks(power, bin_hz_);
  {
    double* profile = hpcp;  // 36 bins, then crest and entropy
    double peak_power = 0.0, tuning_acc = 0.0, tuning_w = 0.0, inharm_acc = 0.0,
           inharm_w = 0.0;
    for (const Peak& p : peaks) {
      peak_power += p.power;
      if (p.hz >= 40.0 && p.hz <= 5000.0) {
        const double pc = std::fmod(std::fmod(36.0 * std::log2(p.hz / 440.0), 36.0) + 36.0, 36.0);
        for (int b = 0; b < 36; ++b) {
          double d = std::fabs(pc - b);
          d = std::min(d, 36.0 - d);
          if (d <= 4.0 / 3.0) {
            const double c = std::cos(0.5 * kPi * d / (4.0 / 3.0));
            profile[b] += p.power * c * c;
          }
        }
        const double semis = 12.0 * std::log2(p.hz / 440.0);
        const double dev = semis - std::round(semis);
        tuning_acc += p.power * dev;
        tuning_w += p.power;
      }
      if (f0 > 0.0) {
        const double harmonic = std::round(p.hz / f0);
        if (harmonic >= 1.0) {
          inharm_acc += p.power * std::min(1.0, 2.0 * std::fabs(p.hz - harmonic * f0) / f0);
          inharm_w += p.power;
        }
      }
    }
    double pmax = 0.0, psum = 0.0;
    for (int b = 0; b < 36; ++b) {
      pmax = std::max(pmax, profile[b]);
      psum += profile[b];
    }
    if (pmax > 0.0) {
      for (int b = 0; b < 36; ++b) profile[b] /= pmax;
      double norm_sum = 0.0;
      for (int b = 0; b < 36; ++b) norm_sum += profile[b];
      hpcp[36] = 36.0 / norm_sum;  // crest: max(=1) over mean
      double ent = 0.0;
      for (int b = 0; b < 36; ++b) {
        const double q = profile[b] / norm_sum;
        if (q > 0.0) ent -= q * std::log(q);
      }
      hpcp[37] = ent;
    }

    double total_power = 0.0;
    for (int b = 0; b < bins; ++b) total_power += power[b];
    tonal[0] = tuning_w > 0.0 ? tuning_acc / tuning_w : 0.0;
    tonal[1] = total_power > kTiny ? std::min(1.0, peak_power / total_power) : 0.0;
    tonal[2] = inharm_w > 0.0 ? inharm_acc / inharm_w : 0.0;
  }

  // --- 32 spectral descriptors ----------------------------------------
  {
    double total = 0.0, pmax = 0.0;
    int argmax = 0;
    for (int b = 0; b < bins; ++b) {
      total += power[b];
      if (power[b] > pmax) {
        pmax = power[b];
        argmax = b;
      }
    }

    double centroid = 0.0, spread = 0.0, skew = 0.0, kurt = 0.0;
    if (total > kTiny) {
      for (int b = 0; b < bins; ++b) centroid += bin_hz_[b] * power[b];
      centroid /= total;
      double m2 = 0.0, m3 = 0.0, m4 = 0.0;
      for (int b = 0; b < bins; ++b) {
        const double d = bin_hz_[b] - centroid;
        const double w = power[b] / total;
        m2 += d * d * w;
        m3 += d * d * d * w;
        m4 += d * d * d * d * w;
      }
      spread = std::sqrt(m2);
      if (spread > kTiny) {
        skew = m3 / (spread * spread * spread);
        kurt = m4 / (m2 * m2);
      }
    }

    double log_acc = 0.0;
    for (int b = 0; b < bins; ++b) log_acc += std::log(power[b] + kTiny);
    const double mean_p = total / bins;
    const double flatness = std::exp(log_acc / bins) / (mean_p + kTiny);
    const double crest = mean_p > kTiny ? pmax / mean_p : 0.0;

    double dec_num = 0.0, dec_den = 0.0;
    for (int b = 1; b < bins; ++b) {
      dec_num += (power[b] - power[0]) / b;
      dec_den += power[b];
    }
    const double decrease = dec_den > kTiny ? dec_num / dec_den : 0.0;

    double roll85 = 0.0, roll95 = 0.0;
    if (total > kTiny) {
      double cum = 0.0;
      for (int b = 0; b < bins; ++b) {
        cum += power[b];
        if (roll85 == 0.0 && cum >= 0.85 * total) roll85 = bin_hz_[b];
        if (cum >= 0.95 * total) {
          roll95 = bin_hz_[b];
          break;
        }
      }
    }

    double flux = 0.0;
    if (prev_power != nullptr) {
      for (int b = 0; b < bins; ++b) {
        const double d = std::sqrt(power[b]) - std::sqrt(prev_power[b]);
        flux += d * d;
      }
      flux = std::sqrt(flux);
    }

    double entropy = 0.0;
    if (total > kTiny) {
      for (int b = 0; b < bins; ++b) {
        const double q = power[b] / total;
        if (q > 0.0) entropy -= q * std::log(q);
      }
    }

    double hfc = 0.0;
    for (int b = 0; b < bins; ++b) hfc += static_cast<double>(b) * power[b];

    double strong_peak = 0.0;
    if (pmax > 0.0) {
      int lo = argmax, hi = argmax;
      while (lo > 0 && power[lo - 1] >= 0.5 * pmax) --lo;
      while (hi + 1 < bins && power[hi + 1] >= 0.5 * pmax) ++hi;
      const double width_hz = (hi - lo + 1) * (bin_hz_[1] - bin_hz_[0]);
      strong_peak = pmax / width_hz;
    }

    int i = 0;
    spectral[i++] = centroid;
    spectral[i++] = spread;
    spectral[i++] = skew;
    spectral[i++] = kurt;
    spectral[i++] = flatness;
    spectral[i++] = crest;
    spectral[i++] = decrease;
    spectral[i++] = roll85;
    spectral[i++] = roll95;
    spectral[i++] = flux;
    spectral[i++] = entropy;
    spectral[i++] = total;
    spectral[i++] = rms;
    spectral[i++] = zcr;
    spectral[i++] = hfc;
    spectral[i++] = strong_peak;

    // 6-band spectral contrast (log peak-to-valley) and the valleys
    static constexpr double kContrastEdges[7] = {0.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 22051.0};
    for (int band = 0; band < 6; ++band) {
      std::vector<double> vals;
      for (int b = 0; b < bins; ++b) {
        if (bin_hz_[b] >= kContrastEdges[band] && bin_hz_[b] < kContrastEdges[band + 1]) {
          vals.push_back(power[b]);
        }
      }
      double peak_m = 0.0, valley_m = 0.0;
      if (!vals.empty()) {
        std::sort(vals.begin(), vals.end());
        const int m = std::max<int>(1, static_cast<int>(std::lround(0.2 * vals.size())));
        for (int j = 0; j < m; ++j) {
          valley_m += vals[j];
          peak_m += vals[vals.size() - 1 - j];
        }
        peak_m /= m;
        valley_m /= m;
      }
      const double lp = std::log(peak_m + kTiny), lv = std::log(valley_m + kTiny);
      spectral[i + band] = lp - lv;
      spectral[i + 6 + band] = lv;
    }
    i += 12;

    // low / mid-low / mid-high / high energy ratios
    static constexpr double kRatioEdges[5] = {0.0, 250.0, 1000.0, 4000.0, 22051.0};
    for (int band = 0; band < 4; ++band) {
      double acc = 0.0;
      for (int b = 0; b < bins; ++b) {
        if (bin_hz_[b] >= kRatioEdges[band] && bin_hz_[b] < kRatioEdges[band + 1]) acc += power[b];
      }
      spectral[i++] = total > kTiny ? acc / total : 0.0;
    }
  }

  for (double v : out) {
    if (!std::isfinite(v)) throw NumericError("non-finite frame feature");
  }
  return out;
}

SegmentFeatureVector aggregate_segment(const std::vector<FeatureFrame>& frames,
                                       const std::string& recording_id, int segment_index) {
  const std::size_t n = frames.size();
  if (n < 2) throw DataError("segment aggregation needs >= 2 frames (derivative undefined)");

  SegmentFeatureVector out;
  out.recording_id = recording_id;
  out.segment_index = segment_index;

  for (int d = 0; d < kFrameDim; ++d) {
    double sum = 0.0, sumsq = 0.0;
    for (const auto& f : frames) {
      sum += f[d];
      sumsq += f[d] * f[d];
    }
    const double mean = sum / n;
    const double var = std::max(sumsq / n - mean * mean, 0.0);

    double dsum = 0.0, dsumsq = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double diff = frames[i][d] - frames[i - 1][d];
      dsum += diff;
      dsumsq += diff * diff;
    }
    const double dmean = dsum / (n - 1);
    const double dvar = std::max(dsumsq / (n - 1) - dmean * dmean, 0.0);

    out.values[d] = mean;
    out.values[kFrameDim + d] = var;
    out.values[2 * kFrameDim + d] = dmean;
    out.values[3 * kFrameDim + d] = dvar;
  }
  return out;
}

std::vector<SegmentFeatureVector> extract_recording_features(const audio::Recording& rec) {
  const dsp::PowerSpectrogram power = dsp::stft_power(rec);
  const auto spans = segment_boundaries(static_cast<double>(rec.samples.size()) / rec.sample_rate);

  static const FrameFeatureExtractor extractor;  // immutable after construction

  std::vector<SegmentFeatureVector> segments;
  segments.reserve(spans.size());
  for (std::size_t s = 0; s < spans.size(); ++s) {
    // frames assigned by their start time
    const int f_begin = static_cast<int>(std::ceil(spans[s].first * audio::kSampleRate / dsp::kHop - 1e-9));
    int f_end = static_cast<int>(std::ceil(spans[s].second * audio::kSampleRate / dsp::kHop - 1e-9));
    f_end = std::min(f_end, power.grid.frames);
    if (f_end - f_begin < 2) throw DataError("segment too short for aggregation");

    std::vector<FeatureFrame> frames;
    frames.reserve(f_end - f_begin);
    for (int f = f_begin; f < f_end; ++f) {
      const double* prev = f > f_begin ? power.grid.row(f - 1) : nullptr;
      frames.push_back(extractor.compute(rec.samples.data() + static_cast<std::size_t>(f) * dsp::kHop,
                                         dsp::kWindow, power.grid.row(f), prev));
    }
    segments.push_back(aggregate_segment(frames, rec.id, static_cast<int>(s)));
  }
  return segments;
}

void FeatureScaler::fit(const std::vector<const SegmentFeatureVector*>& train) {
  if (train.empty()) throw DataError("feature scaler fit on empty training data");
  mean_.assign(kSegmentDim, 0.0);
  std_.assign(kSegmentDim, 1.0);
  const double n = static_cast<double>(train.size());
  for (int d = 0; d < kSegmentDim; ++d) {
    double sum = 0.0, sumsq = 0.0;
    for (const auto* seg : train) {
      sum += seg->values[d];
      sumsq += seg->values[d] * seg->values[d];
    }
    const double mu = sum / n;
    const double var = std::max(sumsq / n - mu * mu, 0.0);
    mean_[d] = mu;
    std_[d] = std::max(std::sqrt(var), dsp::kStdFloor);
  }
  fitted_ = true;
}

SegmentFeatureVector FeatureScaler::apply(const SegmentFeatureVector& x) const {
  if (!fitted_) throw NumericError("feature scaler applied before fit");
  SegmentFeatureVector out = x;
  for (int d = 0; d < kSegmentDim; ++d) out.values[d] = (out.values[d] - mean_[d]) / std_[d];
  return out;
}

void FeatureScaler::apply_in_place(std::vector<double>& row_major, std::size_t n_rows) const {
  if (!fitted_) throw NumericError("feature scaler applied before fit");
  if (row_major.size() != n_rows * kSegmentDim) throw DataError("feature matrix shape mismatch");
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = row_major.data() + r * kSegmentDim;
    for (int d = 0; d < kSegmentDim; ++d) row[d] = (row[d] - mean_[d]) / std_[d];
  }
}

void FeatureScaler::set_stats(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != kSegmentDim || stddev.size() != kSegmentDim) {
    throw DataError("bad feature scaler stats");
  }
  mean_ = std::move(mean);
  std_ = std::move(stddev);
  fitted_ = true;
}

}  // namespace asckit::features
