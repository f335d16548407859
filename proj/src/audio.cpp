#include "asckit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace asckit::audio {

namespace {

std::uint32_t rd_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
std::uint16_t rd_u16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

}  // namespace

Recording load_recording(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file: " + path);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const std::uint32_t len = rd_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw DataError("corrupt WAV chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("corrupt fmt chunk in " + path);
      format = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      rate = rd_u32(bytes.data() + body + 4);
      bits = rd_u16(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (data == nullptr || channels == 0) throw DataError("missing fmt/data chunk in " + path);
  if (channels > 2) throw DataError("unsupported channel count in " + path);
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw DataError("unsupported sample rate " + std::to_string(rate) + " in " + path +
                    " (expected 44100, no resampling in scope)");
  }

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw DataError("unsupported WAV encoding in " + path + " (PCM16 or float32 only)");
  }

  const std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  const std::size_t n_frames = data_len / (bytes_per_sample * channels);
  if (n_frames == 0) throw DataError("empty audio data in " + path);

  Recording rec;
  rec.id = std::filesystem::path(path).stem().string();
  rec.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const char* p = data + (i * channels + c) * bytes_per_sample;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        acc += static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        acc += static_cast<double>(s);
      }
    }
    rec.samples[i] = acc / channels;
  }
  return rec;
}

void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write audio file: " + path);

  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  const std::uint32_t riff_len = 36 + data_len;
  const std::uint16_t channels = 1, bits = 16, format = 1;
  const std::uint32_t rate = static_cast<std::uint32_t>(sample_rate);
  const std::uint32_t byte_rate = rate * channels * bits / 8;
  const std::uint16_t block_align = channels * bits / 8;
  const std::uint32_t fmt_len = 16;

  out.write("RIFF", 4);
  out.write(reinterpret_cast<const char*>(&riff_len), 4);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  out.write(reinterpret_cast<const char*>(&fmt_len), 4);
  out.write(reinterpret_cast<const char*>(&format), 2);
  out.write(reinterpret_cast<const char*>(&channels), 2);
  out.write(reinterpret_cast<const char*>(&rate), 4);
  out.write(reinterpret_cast<const char*>(&byte_rate), 4);
  out.write(reinterpret_cast<const char*>(&block_align), 2);
  out.write(reinterpret_cast<const char*>(&bits), 2);
  out.write("data", 4);
  out.write(reinterpret_cast<const char*>(&data_len), 4);
  for (double s : samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lrint(clipped * 32767.0));
    out.write(reinterpret_cast<const char*>(&q), 2);
  }
  if (!out) throw DataError("short write: " + path);
}

}  // namespace asckit::audio
