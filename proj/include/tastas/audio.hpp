// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Waveform type, 16-bit PCM WAV I/O, power and gain arithmetic, and
// fixed-length segmentation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tastas/error.hpp"
#include "tastas/rng.hpp"

namespace tastas {

inline constexpr int kDefaultSampleRate = 8000;
inline constexpr double kPcmScale = 32768.0;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  Waveform() = default;
  explicit Waveform(std::vector<double> s, int rate = kDefaultSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double operator[](size_t i) const { return samples[i]; }
  double &operator[](size_t i) { return samples[i]; }

  bool AllFinite() const {
    return std::all_of(samples.begin(), samples.end(),
                       [](double x) { return std::isfinite(x); });
  }
};

// Total number of samples clipped by SaveWav since process start.
inline std::atomic<uint64_t> &ClipWarningCount() {
  static std::atomic<uint64_t> count{0};
  return count;
}

namespace internal {

inline uint32_t ReadLe32(const unsigned char *p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}
inline uint16_t ReadLe16(const unsigned char *p) {
  return uint16_t(p[0] | (p[1] << 8));
}
inline void PutLe32(std::string *out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void PutLe16(std::string *out, uint16_t v) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace internal

// Reads a mono 16-bit PCM RIFF/WAVE file. Samples are divided by 32768.
inline Waveform LoadWav(const std::string &path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw MissingFileError("no such file: " + path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
  const size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  uint16_t channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t pos = 12;
  while (pos + 8 <= n) {
    const unsigned char *chunk = p + pos;
    uint32_t size = internal::ReadLe32(chunk + 4);
    size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > n) throw FormatError("truncated fmt chunk: " + path);
      uint16_t format = internal::ReadLe16(p + body);
      channels = internal::ReadLe16(p + body + 2);
      rate = internal::ReadLe32(p + body + 4);
      bits = internal::ReadLe16(p + body + 14);
      if (format == 0xFFFE && size >= 26) format = internal::ReadLe16(p + body + 24);
      if (channels != 1) throw MultiChannelError(path);
      if (format != 1 || bits != 16)
        throw UnsupportedEncodingError("unsupported encoding (need 16-bit PCM): " + path);
      if (rate == 0) throw FormatError("zero sample rate: " + path);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk: " + path);
      size_t avail = std::min<size_t>(size, n - body);
      size_t count = avail / 2;
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        auto v = static_cast<int16_t>(internal::ReadLe16(p + body + 2 * i));
        w.samples[i] = v / kPcmScale;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError("no data chunk: " + path);
}

// Writes 16-bit PCM mono. Samples outside [-1, 1] are clipped and counted;
// the number clipped in this call is returned.
inline size_t SaveWav(const std::string &path, const Waveform &w) {
  if (w.sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  size_t clipped = 0;
  std::string out;
  const uint32_t data_bytes = static_cast<uint32_t>(w.size() * 2);
  out.reserve(44 + data_bytes);
  out += "RIFF";
  internal::PutLe32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  internal::PutLe32(&out, 16);
  internal::PutLe16(&out, 1);
  internal::PutLe16(&out, 1);
  internal::PutLe32(&out, static_cast<uint32_t>(w.sample_rate));
  internal::PutLe32(&out, static_cast<uint32_t>(w.sample_rate) * 2);
  internal::PutLe16(&out, 2);
  internal::PutLe16(&out, 16);
  out += "data";
  internal::PutLe32(&out, data_bytes);
  for (double x : w.samples) {
    if (!std::isfinite(x)) throw NumericError("non-finite sample in " + path);
    if (x > 1.0 || x < -1.0) ++clipped;
    long q = std::lround(x * kPcmScale);
    q = std::clamp(q, -32768L, 32767L);
    internal::PutLe16(&out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write: " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("write failed: " + path);
  ClipWarningCount() += clipped;
  return clipped;
}

// Mean-square amplitude.
inline double Power(const Waveform &w) {
  if (w.empty()) throw InvalidArgument("power of empty waveform");
  double acc = 0.0;
  for (double x : w.samples) acc += x * x;
  return acc / static_cast<double>(w.size());
}

// Gain g with 10 log10(g^2 signal / reference) == target_snr_db.
inline double GainForSnr(double signal_power, double reference_power, double target_snr_db) {
  if (!(signal_power > 0.0) || !(reference_power > 0.0))
    throw InvalidArgument("gain_for_snr needs positive powers");
  return std::sqrt(reference_power / signal_power * std::pow(10.0, target_snr_db / 10.0));
}

inline double SnrDb(double signal_power, double reference_power) {
  return 10.0 * std::log10(signal_power / reference_power);
}

enum class FixMode { kPadZeros, kRandomCrop };

// Output has exactly n_samples. Pad mode keeps the head and appends zeros
// (truncating longer input); crop mode takes a seed-determined window.
inline Waveform FixLength(const Waveform &w, size_t n_samples, FixMode mode, uint64_t seed = 0) {
  if (n_samples == 0) throw InvalidArgument("fix_length needs n_samples > 0");
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (w.size() == n_samples) {
    out.samples = w.samples;
    return out;
  }
  if (mode == FixMode::kPadZeros) {
    out.samples.assign(n_samples, 0.0);
    std::copy_n(w.samples.begin(), std::min(n_samples, w.size()), out.samples.begin());
    return out;
  }
  if (w.size() < n_samples)
    throw InvalidArgument("random-crop input shorter than requested length");
  Rng rng(seed);
  size_t offset = static_cast<size_t>(rng.Below(w.size() - n_samples + 1));
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(offset + n_samples));
  return out;
}

}  // namespace tastas
