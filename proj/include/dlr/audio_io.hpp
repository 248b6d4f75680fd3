#pragma once

// RIFF/WAVE decode (PCM 16-bit LE and IEEE-float 32-bit LE), stereo downmix,
// and band-limited resampling to the 8 kHz pipeline rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dlr/tensor.hpp"

namespace dlr {

constexpr int kPipelineRate = 8000;

struct AudioClip {
  std::vector<float> samples;  // interleaved when channels > 1
  int sample_rate = 0;
  int channels = 1;

  int64_t frames() const {
    return static_cast<int64_t>(samples.size()) / std::max(1, channels);
  }
  void validate(const char* who) const {
    if (sample_rate <= 0) throw std::runtime_error(std::string(who) + ": sample rate must be positive");
    if (samples.empty()) throw std::runtime_error(std::string(who) + ": empty audio");
    for (float s : samples)
      if (!std::isfinite(s)) throw std::runtime_error(std::string(who) + ": non-finite sample");
  }
};

namespace detail {

inline uint32_t read_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t read_u16le(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// 16-bit samples are scaled by 1/32768 (symmetric full-scale convention).
inline AudioClip load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("wav: cannot open file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  size_t data_off = 0, data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t len = detail::read_u32le(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + len > bytes.size())
      throw std::runtime_error("wav: truncated chunk in " + path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (len < 16) throw std::runtime_error("wav: malformed fmt chunk in " + path);
      format = detail::read_u16le(bytes.data() + body);
      channels = detail::read_u16le(bytes.data() + body + 2);
      rate = detail::read_u32le(bytes.data() + body + 4);
      bits = detail::read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw std::runtime_error("wav: missing fmt chunk in " + path);
  if (data_off == 0) throw std::runtime_error("wav: missing data chunk in " + path);
  if (channels < 1 || channels > 2)
    throw std::runtime_error("wav: unsupported channel count " + std::to_string(channels) +
                             " in " + path);
  if (rate == 0) throw std::runtime_error("wav: zero sample rate in " + path);

  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32)
    throw std::runtime_error("wav: unsupported encoding (format " + std::to_string(format) +
                             ", " + std::to_string(bits) + " bits) in " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.channels = channels;
  if (pcm16) {
    const size_t n = data_len / 2;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t v = static_cast<int16_t>(detail::read_u16le(bytes.data() + data_off + 2 * i));
      clip.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else {
    const size_t n = data_len / 4;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t u = detail::read_u32le(bytes.data() + data_off + 4 * i);
      float v;
      std::memcpy(&v, &u, 4);
      clip.samples[i] = v;
    }
  }
  if (clip.samples.empty()) throw std::runtime_error("wav: zero-length audio in " + path);
  clip.validate("wav");
  return clip;
}

// 16-bit PCM writer used by the corpus generator and the tests.
inline void save_wav16(const std::string& path, const AudioClip& clip) {
  clip.validate("wav-write");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("wav: cannot create file: " + path);
  const uint32_t data_len = static_cast<uint32_t>(clip.samples.size() * 2);
  const uint32_t riff_len = 36 + data_len;
  const uint16_t ch = static_cast<uint16_t>(clip.channels);
  const uint32_t rate = static_cast<uint32_t>(clip.sample_rate);
  const uint32_t byte_rate = rate * ch * 2;
  const uint16_t block = static_cast<uint16_t>(ch * 2);
  auto w16 = [&f](uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
  };
  auto w32 = [&f](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  f.write("RIFF", 4);
  w32(riff_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  w32(16);
  w16(1);  // PCM
  w16(ch);
  w32(rate);
  w32(byte_rate);
  w16(block);
  w16(16);
  f.write("data", 4);
  w32(data_len);
  for (float s : clip.samples) {
    const long q = std::lround(static_cast<double>(s) * 32768.0);
    w16(static_cast<uint16_t>(std::clamp<long>(q, -32768, 32767)));
  }
  if (!f) throw std::runtime_error("wav: write failed: " + path);
}

// Per-sample arithmetic mean across channels; mono input is passed through.
inline AudioClip downmix(const AudioClip& clip) {
  clip.validate("downmix");
  if (clip.channels == 1) return clip;
  if (clip.channels != 2) throw std::runtime_error("downmix: only 1 or 2 channels supported");
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.channels = 1;
  const int64_t n = clip.frames();
  out.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    out.samples[static_cast<size_t>(i)] =
        0.5f * (clip.samples[static_cast<size_t>(2 * i)] +
                clip.samples[static_cast<size_t>(2 * i + 1)]);
  return out;
}

namespace detail {

// modified Bessel I0 by power series
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double half_sq = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= half_sq / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

}  // namespace detail

// Polyphase windowed-sinc resampler: Kaiser window (beta 8.6), 64 taps per
// phase, cutoff at the smaller of the two Nyquist frequencies. Each phase is
// normalized to unit sum so DC passes exactly.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  clip.validate("resample");
  if (clip.channels != 1) throw std::runtime_error("resample: expects mono input");
  if (target_rate <= 0) throw std::runtime_error("resample: target rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const int g = static_cast<int>(std::gcd(clip.sample_rate, target_rate));
  const int up = target_rate / g;      // L
  const int down = clip.sample_rate / g;  // M

  constexpr int kTapsPerPhase = 64;
  constexpr double kKaiserBeta = 8.6;
  const int half = (kTapsPerPhase * up) / 2;
  const double cutoff = 0.5 * std::min(1.0 / up, 1.0 / down);  // cycles/sample at rate L*fs
  const double i0_beta = detail::bessel_i0(kKaiserBeta);

  // h[k] for k in [-half, half), indexed by phase p = k mod up
  std::vector<std::vector<double>> phase_taps(static_cast<size_t>(up));
  std::vector<std::vector<int>> phase_offsets(static_cast<size_t>(up));
  for (int k = -half; k < half; ++k) {
    const double t = static_cast<double>(k);
    const double x = 2.0 * cutoff * t;
    const double sinc = (k == 0) ? 2.0 * cutoff : std::sin(3.14159265358979323846 * x) /
                                                      (3.14159265358979323846 * t);
    const double r = t / half;
    const double win = detail::bessel_i0(kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) /
                       i0_beta;
    int p = k % up;
    if (p < 0) p += up;
    phase_taps[static_cast<size_t>(p)].push_back(sinc * win);
    phase_offsets[static_cast<size_t>(p)].push_back((k - p) / up);  // input index offset
  }
  for (auto& taps : phase_taps) {
    double s = 0.0;
    for (double v : taps) s += v;
    if (s != 0.0)
      for (double& v : taps) v /= s;
  }

  const int64_t in_n = static_cast<int64_t>(clip.samples.size());
  const int64_t out_n =
      std::llround(static_cast<double>(in_n) * target_rate / clip.sample_rate);
  AudioClip out;
  out.sample_rate = target_rate;
  out.channels = 1;
  out.samples.resize(static_cast<size_t>(std::max<int64_t>(1, out_n)), 0.0f);

  // output sample m sits at upsampled position m*down = base*up + phase
  for (int64_t m = 0; m < out_n; ++m) {
    const int64_t pos = m * down;
    const int64_t base = pos / up;
    const int phase = static_cast<int>(pos % up);
    const auto& taps = phase_taps[static_cast<size_t>(phase)];
    const auto& offs = phase_offsets[static_cast<size_t>(phase)];
    double acc = 0.0;
    for (size_t i = 0; i < taps.size(); ++i) {
      // windowed sinc h[k] weights input sample at base - offset(k)
      const int64_t idx = base - offs[i];
      if (idx >= 0 && idx < in_n) acc += taps[i] * clip.samples[static_cast<size_t>(idx)];
    }
    out.samples[static_cast<size_t>(m)] = static_cast<float>(acc);
  }
  return out;
}

// mono 8 kHz pipeline front end
inline AudioClip load_audio_8k(const std::string& path) {
  return resample(downmix(load_wav(path)), kPipelineRate);
}

}  // namespace dlr
