#pragma once

// Classical time-frequency and rhythmic representations: Hann STFT,
// Slaney-style Mel filterbank, decibel mapping, half-wave rectified spectral
// flux with a configurable frame lag, and the autocorrelation tempogram.

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dlr/audio_io.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMelBins = 128;
constexpr int kTempogramLags = 256;
constexpr int kStftSize = 512;
constexpr int kStftHop = 256;

struct Spectrogram {
  Tensor magnitudes;  // (n_bins, n_frames), n_bins = n_fft/2 + 1
  int n_fft = 0;
  int hop = 0;
  int sample_rate = 0;

  int n_bins() const { return magnitudes.dim(0); }
  int n_frames() const { return magnitudes.dim(1); }
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
};

enum class MelScale { linear, decibel };

struct MelSpectrogram {
  Tensor values;  // (128, n_frames)
  MelScale scale = MelScale::linear;
  int hop = 0;
};

struct OnsetEnvelope {
  std::vector<float> strength;
  double frame_rate = 0.0;
  int mu = 1;
};

struct Tempogram {
  Tensor values;     // (256, n_columns)
  double lag_axis;   // seconds per lag bin
  int window;        // analysis window in envelope frames
};

namespace detail {

// in-place iterative radix-2 FFT; n must be a power of two
inline void fft_pow2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
  return w;
}

}  // namespace detail

// Hann-windowed magnitude STFT. The signal is reflection-padded by n_fft/2 on
// both ends; frame t covers padded samples [t*hop, t*hop + n_fft), giving
// floor(len/hop) + 1 frames.
inline Spectrogram stft(const AudioClip& clip, int n_fft, int hop) {
  clip.validate("stft");
  if (clip.channels != 1) throw std::runtime_error("stft: expects mono input");
  if (!detail::is_pow2(n_fft)) throw std::runtime_error("stft: n_fft must be a power of two");
  if (hop < 1 || hop > n_fft) throw std::runtime_error("stft: hop must be in [1, n_fft]");
  const int64_t len = static_cast<int64_t>(clip.samples.size());
  if (len < n_fft) throw std::runtime_error("stft: clip shorter than n_fft");

  const int pad = n_fft / 2;
  auto sample_at = [&](int64_t padded_idx) -> double {
    int64_t i = padded_idx - pad;
    if (i < 0) i = -i;                       // reflect, edge sample not repeated
    if (i >= len) i = 2 * (len - 1) - i;
    return clip.samples[static_cast<size_t>(i)];
  };

  const int n_bins = n_fft / 2 + 1;
  const int n_frames = static_cast<int>(len / hop) + 1;
  const std::vector<double> win = detail::hann_window(n_fft);
  Spectrogram spec;
  spec.magnitudes = Tensor({n_bins, n_frames});
  spec.n_fft = n_fft;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;

  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
  for (int t = 0; t < n_frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[static_cast<size_t>(i)] = win[static_cast<size_t>(i)] * sample_at(start + i);
    detail::fft_pow2(buf);
    for (int k = 0; k < n_bins; ++k)
      spec.magnitudes.at(k, t) = static_cast<float>(std::abs(buf[static_cast<size_t>(k)]));
  }
  return spec;
}

namespace detail {

inline double hz_to_mel_slaney(double f) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return f < min_log_hz ? f / f_sp : min_log_mel + std::log(f / min_log_hz) / logstep;
}

inline double mel_to_hz_slaney(double m) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return m < min_log_mel ? m * f_sp : min_log_hz * std::exp(logstep * (m - min_log_mel));
}

}  // namespace detail

// (n_mels, n_bins) triangular filterbank, area-normalized per filter.
inline Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min,
                             double f_max) {
  const int n_bins = n_fft / 2 + 1;
  std::vector<double> pts(static_cast<size_t>(n_mels) + 2);
  const double m_lo = detail::hz_to_mel_slaney(f_min);
  const double m_hi = detail::hz_to_mel_slaney(f_max);
  for (int i = 0; i < n_mels + 2; ++i)
    pts[static_cast<size_t>(i)] =
        detail::mel_to_hz_slaney(m_lo + (m_hi - m_lo) * i / (n_mels + 1));
  Tensor fb({n_mels, n_bins});
  for (int m = 0; m < n_mels; ++m) {
    const double lo = pts[static_cast<size_t>(m)];
    const double c = pts[static_cast<size_t>(m) + 1];
    const double hi = pts[static_cast<size_t>(m) + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f < hi) w = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      fb.at(m, k) = static_cast<float>(w * norm);
    }
  }
  return fb;
}

// Mel centre frequencies in Hz, matching mel_filterbank's layout.
inline std::vector<double> mel_center_frequencies(int n_mels, double f_min, double f_max) {
  const double m_lo = detail::hz_to_mel_slaney(f_min);
  const double m_hi = detail::hz_to_mel_slaney(f_max);
  std::vector<double> centers(static_cast<size_t>(n_mels));
  for (int m = 1; m <= n_mels; ++m)
    centers[static_cast<size_t>(m - 1)] =
        detail::mel_to_hz_slaney(m_lo + (m_hi - m_lo) * m / (n_mels + 1));
  return centers;
}

// 128-bin Mel spectrogram of an 8 kHz clip: power STFT (512/256) through the
// 0-4 kHz Slaney filterbank. Linear scale; callers apply db_scale as needed.
inline MelSpectrogram mel_spectrogram(const AudioClip& clip) {
  if (clip.sample_rate != kPipelineRate)
    throw std::runtime_error("mel_spectrogram: expected " + std::to_string(kPipelineRate) +
                             " Hz input, got " + std::to_string(clip.sample_rate));
  const Spectrogram spec = stft(clip, kStftSize, kStftHop);
  static const Tensor fb =
      mel_filterbank(kMelBins, kStftSize, kPipelineRate, 0.0, kPipelineRate / 2.0);
  const int n_frames = spec.n_frames(), n_bins = spec.n_bins();
  MelSpectrogram mel;
  mel.values = Tensor({kMelBins, n_frames});
  mel.scale = MelScale::linear;
  mel.hop = kStftHop;
  for (int m = 0; m < kMelBins; ++m) {
    const float* w = &fb.at(m, 0);
    for (int t = 0; t < n_frames; ++t) {
      double acc = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        const double v = spec.magnitudes.at(k, t);
        if (w[k] != 0.0f) acc += static_cast<double>(w[k]) * v * v;
      }
      mel.values.at(m, t) = static_cast<float>(acc);
    }
  }
  return mel;
}

// out = 20*log10(max(v, 1e-10)), then clipped below at (max - range); the
// maximum of the output is preserved.
inline Tensor db_scale(const Tensor& values, double dynamic_range_db = 80.0) {
  if (values.size() == 0) throw std::runtime_error("db_scale: empty input");
  constexpr double eps = 1e-10;
  Tensor out(values.shape);
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < values.data.size(); ++i) {
    if (values.data[i] < 0.0f) throw std::runtime_error("db_scale: negative input value");
    const double db = 20.0 * std::log10(std::max(static_cast<double>(values.data[i]), eps));
    out.data[i] = static_cast<float>(db);
    mx = std::max(mx, db);
  }
  const float floor_db = static_cast<float>(mx - dynamic_range_db);
  for (auto& v : out.data) v = std::max(v, floor_db);
  return out;
}

inline MelSpectrogram db_scale(const MelSpectrogram& mel, double dynamic_range_db = 80.0) {
  MelSpectrogram out;
  out.values = db_scale(mel.values, dynamic_range_db);
  out.scale = MelScale::decibel;
  out.hop = mel.hop;
  return out;
}

// strength[n] = sum_k H(M[k,n] - M[k,n-mu]) for n >= mu, zeros before that.
// max_filter_bins applies a frequency-wise maximum filter of that width to
// the reference frame before differencing (0 or 1 disables it).
inline OnsetEnvelope spectral_flux(const Spectrogram& spec, int mu, int max_filter_bins = 0) {
  if (mu < 1) throw std::runtime_error("spectral_flux: mu must be >= 1");
  const int n_bins = spec.n_bins(), n_frames = spec.n_frames();
  if (mu >= n_frames) throw std::runtime_error("spectral_flux: mu must be smaller than the frame count");
  OnsetEnvelope env;
  env.strength.assign(static_cast<size_t>(n_frames), 0.0f);
  env.frame_rate = spec.frame_rate();
  env.mu = mu;
  const int half_w = max_filter_bins > 1 ? max_filter_bins / 2 : 0;
  for (int n = mu; n < n_frames; ++n) {
    double acc = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      float ref = spec.magnitudes.at(k, n - mu);
      for (int d = -half_w; d <= half_w; ++d) {
        const int kk = k + d;
        if (kk >= 0 && kk < n_bins) ref = std::max(ref, spec.magnitudes.at(kk, n - mu));
      }
      acc += half_wave(spec.magnitudes.at(k, n) - ref);
    }
    env.strength[static_cast<size_t>(n)] = static_cast<float>(acc);
  }
  return env;
}

// Windowed local autocorrelation of the onset envelope. Columns step by
// window/2 frames; within a window starting at frame c,
//   value(tau) = sum_{t=0}^{window-1-tau} hann[t] * s[c+t] * s[c+t+tau]
// and each column is scaled so the lag-0 entry is 1 when positive.
inline Tempogram tempogram(const OnsetEnvelope& env, int window = 384) {
  const int len = static_cast<int>(env.strength.size());
  if (window < 2) throw std::runtime_error("tempogram: window must be >= 2");
  if (len < window) throw std::runtime_error("tempogram: envelope shorter than window");
  const int hop = window / 2;
  const int n_cols = (len - window) / hop + 1;
  const std::vector<double> win = detail::hann_window(window);
  Tempogram tg;
  tg.values = Tensor({kTempogramLags, n_cols});
  tg.lag_axis = 1.0 / env.frame_rate;
  tg.window = window;
  for (int col = 0; col < n_cols; ++col) {
    const int c = col * hop;
    for (int tau = 0; tau < kTempogramLags; ++tau) {
      double acc = 0.0;
      for (int t = 0; t + tau < window; ++t)
        acc += win[static_cast<size_t>(t)] *
               static_cast<double>(env.strength[static_cast<size_t>(c + t)]) *
               env.strength[static_cast<size_t>(c + t + tau)];
      tg.values.at(tau, col) = static_cast<float>(acc);
    }
    const float r0 = tg.values.at(0, col);
    if (r0 > 0.0f)
      for (int tau = 0; tau < kTempogramLags; ++tau) tg.values.at(tau, col) /= r0;
  }
  return tg;
}

// default onset-envelope lag feeding the tempogram path
constexpr int kFluxMuDefault = 3;

inline OnsetEnvelope onset_envelope(const AudioClip& clip, int mu = kFluxMuDefault) {
  return spectral_flux(stft(clip, kStftSize, kStftHop), mu);
}

}  // namespace dlr
