#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "laspa/graph.hpp"

namespace laspa {

struct Waveform {
  std::vector<float> samples;  // amplitude, nominally in [-1, 1]
  int sample_rate = 16000;     // Hz
};

struct FeatureConfig {
  int sample_rate_hz = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 40;
  int fft_size = 512;
  double fmin_hz = 20.0;
  double fmax_hz = 7600.0;
  double log_floor = 1e-10;

  int window_samples() const {
    return static_cast<int>(std::lround(window_ms * sample_rate_hz / 1000.0));
  }
  int hop_samples() const {
    return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
  }

  void validate() const {
    if (sample_rate_hz <= 0)
      throw std::invalid_argument("features: sample_rate_hz must be > 0");
    if (!(window_ms > hop_ms && hop_ms > 0))
      throw std::invalid_argument("features: require window_ms > hop_ms > 0");
    if (n_mels < 1) throw std::invalid_argument("features: n_mels must be >= 1");
    if (fft_size < window_samples())
      throw std::invalid_argument(
          "features: fft_size smaller than the window (" +
          std::to_string(fft_size) + " < " +
          std::to_string(window_samples()) + ")");
    if ((fft_size & (fft_size - 1)) != 0)
      throw std::invalid_argument("features: fft_size must be a power of two");
    if (!(fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0))
      throw std::invalid_argument(
          "features: require fmin_hz < fmax_hz <= sample_rate_hz/2");
    if (log_floor <= 0)
      throw std::invalid_argument("features: log_floor must be > 0");
  }
};

// T x M log-mel energies. No centering/padding, no pre-emphasis, no
// normalization: T = floor((N - W)/H) + 1 exactly.
struct MelSpectrogram {
  Mat<float> frames;
  FeatureConfig config;

  int n_frames() const { return static_cast<int>(frames.rows()); }
  int n_mels() const { return static_cast<int>(frames.cols()); }
};

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  double px = 3.14159265358979323846 * x;
  return std::sin(px) / px;
}

// In-place iterative radix-2 FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filterbank on FFT bin frequencies, HTK mel scale.
// Returns n_mels x (fft_size/2 + 1) weights.
inline Mat<double> mel_filterbank(const FeatureConfig& cfg) {
  const int bins = cfg.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  Mat<double> fb = Mat<double>::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    double fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      double f = static_cast<double>(k) * cfg.sample_rate_hz / cfg.fft_size;
      double w = 0.0;
      if (f > fl && f < fc)
        w = (f - fl) / (fc - fl);
      else if (f >= fc && f < fr)
        w = (fr - f) / (fr - fc);
      fb(m, k) = w;
    }
  }
  return fb;
}

}  // namespace detail

// Band-limited windowed-sinc resampling. Identity (bitwise) when the rates
// already match. Output length = round(N * target/source), so duration is
// preserved to within one sample.
inline Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.samples.empty())
    throw std::invalid_argument("resample: empty waveform");
  if (wave.sample_rate <= 0 || target_rate <= 0)
    throw std::invalid_argument("resample: sample rates must be > 0");
  if (wave.sample_rate == target_rate) return wave;

  const double ratio =
      static_cast<double>(target_rate) / wave.sample_rate;
  const double fc = std::min(1.0, ratio);  // cutoff in source Nyquist units
  const int half_taps = 32;
  const double support = half_taps / fc;
  const auto n_in = static_cast<std::int64_t>(wave.samples.size());
  const auto n_out = static_cast<std::int64_t>(std::llround(n_in * ratio));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const double t = n / ratio;
    const auto m0 = static_cast<std::int64_t>(std::ceil(t - support));
    const auto m1 = static_cast<std::int64_t>(std::floor(t + support));
    double acc = 0.0;
    for (std::int64_t m = std::max<std::int64_t>(0, m0);
         m <= std::min(n_in - 1, m1); ++m) {
      const double x = t - m;
      const double win = 0.5 * (1.0 + std::cos(3.14159265358979323846 * x /
                                               support));
      acc += wave.samples[static_cast<std::size_t>(m)] * fc *
             detail::sinc(fc * x) * win;
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

// Hamming window -> |FFT|^2 -> triangular HTK mel bank -> ln(max(e, floor)).
inline MelSpectrogram mel_spectrogram(const Waveform& wave,
                                      const FeatureConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != cfg.sample_rate_hz)
    throw std::invalid_argument(
        "mel_spectrogram: waveform rate " + std::to_string(wave.sample_rate) +
        " != config rate " + std::to_string(cfg.sample_rate_hz));
  const int W = cfg.window_samples();
  const int H = cfg.hop_samples();
  const auto N = static_cast<std::int64_t>(wave.samples.size());
  if (N < W)
    throw std::invalid_argument("mel_spectrogram: waveform shorter than one window");
  for (float s : wave.samples)
    if (!std::isfinite(s))
      throw std::invalid_argument("mel_spectrogram: non-finite sample in input");

  const auto T = static_cast<int>((N - W) / H + 1);
  const int bins = cfg.fft_size / 2 + 1;

  std::vector<double> hamming(W);
  for (int n = 0; n < W; ++n)
    hamming[n] = 0.54 - 0.46 * std::cos(2.0 * 3.14159265358979323846 * n /
                                        (W - 1));
  Mat<double> fb = detail::mel_filterbank(cfg);

  MelSpectrogram mel;
  mel.config = cfg;
  mel.frames.resize(T, cfg.n_mels);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  for (int t = 0; t < T; ++t) {
    for (int n = 0; n < cfg.fft_size; ++n) {
      double v = 0.0;
      if (n < W) v = wave.samples[static_cast<std::size_t>(t) * H + n] * hamming[n];
      buf[n] = {v, 0.0};
    }
    detail::fft_radix2(buf);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += fb(m, k) * std::norm(buf[k]);
      mel.frames(t, m) =
          static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  return mel;
}

// ---- binary container -------------------------------------------------------
// Header {magic "LSPA", version u32, T u32, M u32}, then T*M little-endian
// float32 values, row-major.

inline constexpr std::uint32_t kMelFormatVersion = 1;

inline void write_mel(const std::string& path, const MelSpectrogram& mel) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_mel: cannot open " + path);
  f.write("LSPA", 4);
  auto put_u32 = [&f](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(kMelFormatVersion);
  put_u32(static_cast<std::uint32_t>(mel.frames.rows()));
  put_u32(static_cast<std::uint32_t>(mel.frames.cols()));
  // Row-major float storage writes out directly.
  f.write(reinterpret_cast<const char*>(mel.frames.data()),
          static_cast<std::streamsize>(sizeof(float) * mel.frames.size()));
  if (!f) throw std::runtime_error("write_mel: short write to " + path);
}

inline MelSpectrogram read_mel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_mel: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "LSPA")
    throw std::runtime_error("read_mel: bad magic in " + path);
  auto get_u32 = [&f, &path] {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error("read_mel: truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::uint32_t version = get_u32();
  if (version != kMelFormatVersion)
    throw std::runtime_error("read_mel: unsupported version " +
                             std::to_string(version) + " in " + path);
  const std::uint32_t T = get_u32();
  const std::uint32_t M = get_u32();
  MelSpectrogram mel;
  mel.frames.resize(T, M);
  f.read(reinterpret_cast<char*>(mel.frames.data()),
         static_cast<std::streamsize>(sizeof(float) * mel.frames.size()));
  if (!f) throw std::runtime_error("read_mel: truncated data in " + path);
  return mel;
}

}  // namespace laspa
