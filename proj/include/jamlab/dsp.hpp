#pragma once

// Feature extraction: spectrogram image and the six-element statistics vector.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "jamlab/signal.hpp"

namespace jamlab {

inline constexpr std::size_t kStftWindow = 256;
inline constexpr std::size_t kStftHop = 13;
inline constexpr std::size_t kImageSize = 224;
inline constexpr std::size_t kStatsFftSize = 4096;
/// Half width of the circular boxcar that smooths the statistics periodogram.
inline constexpr std::size_t kStatsSmoothHalfWidth = 16;
inline constexpr double kLogPowerFloor = 1e-12;

/// Dense row-major matrix.
template <typename T>
struct Image {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Image() = default;
  Image(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const Image&) const = default;
};

/// Symmetric Hamming window of length n.
inline std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  if (n == 1) return {1.0};
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

inline std::size_t stft_frame_count(std::size_t n, std::size_t win = kStftWindow, std::size_t hop = kStftHop) {
  if (n < win) throw InvalidArgument("signal shorter than the STFT window");
  return (n - win) / hop + 1;
}

namespace detail {

inline Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

}  // namespace detail

/// Hamming-windowed sliding DFT. Row m is frame m; column k holds frequency
/// bin k - win/2, so DC sits in the middle column.
inline Image<cdouble> stft(const std::vector<cdouble>& x, std::size_t win = kStftWindow,
                           std::size_t hop = kStftHop) {
  if (win == 0 || hop == 0) throw InvalidArgument("STFT window and hop must be positive");
  const std::size_t frames = stft_frame_count(x.size(), win, hop);
  const auto w = hamming(win);
  Image<cdouble> out(frames, win);
  std::vector<cdouble> buf(win), spec(win);
  auto& fft = detail::fft_engine();
  const std::size_t half = win / 2;
  for (std::size_t m = 0; m < frames; ++m) {
    for (std::size_t n = 0; n < win; ++n) buf[n] = x[m * hop + n] * w[n];
    fft.fwd(spec, buf);
    for (std::size_t k = 0; k < win; ++k) out(m, (k + half) % win) = spec[k];
  }
  return out;
}

inline Image<cdouble> stft(const ComplexSignal& s) { return stft(s.samples); }

struct NormalizedSpectrogram {
  Image<double> image;
  bool degenerate = false;
};

/// log(max(|S|^2, eps)) followed by min-max scaling to [0, 1]. A constant
/// input has no range and maps to all zeros with `degenerate` set.
inline NormalizedSpectrogram log_psd_normalize(const Image<cdouble>& s) {
  if (s.data.empty()) throw InvalidArgument("empty STFT matrix");
  NormalizedSpectrogram out{Image<double>(s.rows, s.cols), false};
  auto& v = out.image.data;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(std::max(std::norm(s.data[i]), kLogPowerFloor));
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(v.begin(), v.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  const double range = hi - lo;
  for (auto& e : v) e = (e - lo) / range;
  return out;
}

/// Bilinear resampling with corner-aligned grids (output corners coincide
/// with input corners).
template <typename T>
Image<T> resize_bilinear(const Image<T>& src, std::size_t rows, std::size_t cols) {
  if (src.rows == 0 || src.cols == 0 || rows == 0 || cols == 0)
    throw InvalidArgument("resize needs non-empty images");
  Image<T> out(rows, cols);
  auto axis = [](std::size_t n_in, std::size_t n_out, std::size_t i, std::size_t& i0, double& frac) {
    if (n_in == 1 || n_out == 1) {
      i0 = 0;
      frac = 0.0;
      return;
    }
    const double pos = static_cast<double>(i * (n_in - 1)) / static_cast<double>(n_out - 1);
    i0 = std::min(static_cast<std::size_t>(pos), n_in - 2);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t r0;
    double fr;
    axis(src.rows, rows, r, r0, fr);
    const std::size_t r1 = std::min(r0 + 1, src.rows - 1);
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t c0;
      double fc;
      axis(src.cols, cols, c, c0, fc);
      const std::size_t c1 = std::min(c0 + 1, src.cols - 1);
      const double top = (1.0 - fc) * static_cast<double>(src(r0, c0)) + fc * static_cast<double>(src(r0, c1));
      const double bot = (1.0 - fc) * static_cast<double>(src(r1, c0)) + fc * static_cast<double>(src(r1, c1));
      double v = (1.0 - fr) * top + fr * bot;
      // Exact passthrough on grid points keeps identity resizes lossless.
      if (fr == 0.0 && fc == 0.0) v = static_cast<double>(src(r0, c0));
      out(r, c) = static_cast<T>(v);
    }
  }
  return out;
}

/// Full image pipeline: STFT, log-PSD normalization, resize to 224 x 224.
inline Image<float> spectrogram_image(const std::vector<cdouble>& x) {
  const auto n = log_psd_normalize(stft(x));
  Image<double> r = resize_bilinear(n.image, kImageSize, kImageSize);
  Image<float> out(r.rows, r.cols);
  for (std::size_t i = 0; i < r.data.size(); ++i) out.data[i] = static_cast<float>(r.data[i]);
  return out;
}

/// Writes an 8-bit binary PGM (P5); pixel = round(255 * clamp(v, 0, 1)).
template <typename T>
void write_pgm(const Image<T>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create " + path);
  out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
  for (const auto& v : img.data) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * c))));
  }
}

// ---------------------------------------------------------------------------
// Statistics

inline constexpr std::size_t kNumStats = 6;

struct StatsVector {
  double spectral_centroid_hz = 0;
  double spectral_bandwidth_hz = 0;
  double spectral_kurtosis = 0;
  double spectral_flatness = 0;
  double papr = 0;
  double envelope_std = 0;

  std::array<double, kNumStats> as_array() const {
    return {spectral_centroid_hz, spectral_bandwidth_hz, spectral_kurtosis,
            spectral_flatness,    papr,                  envelope_std};
  }
};

inline constexpr std::array<const char*, kNumStats> kStatsNames = {
    "spectral_centroid_hz", "spectral_bandwidth_hz", "spectral_kurtosis",
    "spectral_flatness",    "papr",                  "envelope_std"};

/// Zero-padded periodogram smoothed by a circular boxcar; entry k is the
/// power at frequency (k - nfft/2) * fs / nfft.
inline std::vector<double> smoothed_periodogram(const std::vector<cdouble>& x,
                                                std::size_t nfft = kStatsFftSize,
                                                std::size_t half_width = kStatsSmoothHalfWidth) {
  std::vector<cdouble> buf(nfft, cdouble{0.0, 0.0}), spec(nfft);
  std::copy_n(x.begin(), std::min(x.size(), nfft), buf.begin());
  detail::fft_engine().fwd(spec, buf);
  std::vector<double> raw(nfft), out(nfft);
  for (std::size_t k = 0; k < nfft; ++k) raw[(k + nfft / 2) % nfft] = std::norm(spec[k]);
  const std::size_t w = 2 * half_width + 1;
  double acc = 0;
  for (std::size_t d = 0; d < w; ++d) acc += raw[(nfft - half_width + d) % nfft];
  for (std::size_t k = 0; k < nfft; ++k) {
    out[k] = acc / static_cast<double>(w);
    acc += raw[(k + half_width + 1) % nfft] - raw[(k + nfft - half_width) % nfft];
  }
  return out;
}

inline StatsVector compute_stats(const std::vector<cdouble>& x) {
  if (x.empty()) throw InvalidArgument("empty signal");
  double mean_p = 0, peak_p = 0, mean_a = 0;
  for (const auto& v : x) {
    const double p = std::norm(v);
    mean_p += p;
    peak_p = std::max(peak_p, p);
    mean_a += std::sqrt(p);
  }
  const double n = static_cast<double>(x.size());
  mean_p /= n;
  mean_a /= n;
  if (!(mean_p > 0.0)) throw InvalidArgument("statistics of an all-zero signal are undefined");

  StatsVector s;
  s.papr = peak_p / mean_p;
  double var_a = 0;
  for (const auto& v : x) {
    const double d = std::abs(v) - mean_a;
    var_a += d * d;
  }
  s.envelope_std = std::sqrt(var_a / n) / mean_a;

  const auto psd = smoothed_periodogram(x);
  const double df = kSampleRateHz / static_cast<double>(psd.size());
  const double half = static_cast<double>(psd.size() / 2);
  double total = 0, log_sum = 0;
  for (double p : psd) {
    total += p;
    log_sum += std::log(std::max(p, 1e-300));
  }
  const double m = static_cast<double>(psd.size());
  double mu = 0;
  for (std::size_t k = 0; k < psd.size(); ++k) mu += (static_cast<double>(k) - half) * df * psd[k];
  mu /= total;
  double m2 = 0, m4 = 0;
  for (std::size_t k = 0; k < psd.size(); ++k) {
    const double d = (static_cast<double>(k) - half) * df - mu;
    m2 += d * d * psd[k];
    m4 += d * d * d * d * psd[k];
  }
  m2 /= total;
  m4 /= total;
  s.spectral_centroid_hz = mu;
  s.spectral_bandwidth_hz = std::sqrt(m2);
  s.spectral_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
  s.spectral_flatness = std::clamp(std::exp(log_sum / m) / (total / m), 0.0, 1.0);
  return s;
}

inline StatsVector compute_stats(const ComplexSignal& s) { return compute_stats(s.samples); }

/// Per-feature z-score constants fitted on the training split.
struct StatsNormalizer {
  std::array<double, kNumStats> mean{};
  std::array<double, kNumStats> stddev{1, 1, 1, 1, 1, 1};

  static StatsNormalizer fit(const std::vector<std::array<double, kNumStats>>& rows) {
    StatsNormalizer z;
    if (rows.empty()) return z;
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < kNumStats; ++j) {
      double mu = 0;
      for (const auto& r : rows) mu += r[j];
      mu /= n;
      double var = 0;
      for (const auto& r : rows) var += (r[j] - mu) * (r[j] - mu);
      const double sd = std::sqrt(var / n);
      z.mean[j] = mu;
      z.stddev[j] = sd > 1e-12 * std::max(1.0, std::abs(mu)) ? sd : 1.0;
    }
    return z;
  }

  std::array<double, kNumStats> apply(const std::array<double, kNumStats>& v) const {
    std::array<double, kNumStats> out;
    for (std::size_t j = 0; j < kNumStats; ++j) out[j] = (v[j] - mean[j]) / stddev[j];
    return out;
  }

  bool operator==(const StatsNormalizer&) const = default;
};

/// E|x|^4 / (E|x|^2)^2; 1 for constant modulus, 2 for circular Gaussian.
inline double fourth_moment_ratio(const std::vector<cdouble>& x) {
  double m2 = 0, m4 = 0;
  for (const auto& v : x) {
    const double p = std::norm(v);
    m2 += p;
    m4 += p * p;
  }
  if (!(m2 > 0.0)) throw InvalidArgument("moment ratio of an all-zero signal");
  const double n = static_cast<double>(x.size());
  return (m4 / n) / ((m2 / n) * (m2 / n));
}

/// Zero-mean, unit-variance copy of a snapshot (complex mean removed, scaled
/// so that mean |x|^2 == 1), interleaved as [re..., im...] channel planes.
inline std::vector<float> normalized_iq_planes(const std::vector<cdouble>& x) {
  cdouble mu = 0.0;
  for (const auto& v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0;
  for (const auto& v : x) var += std::norm(v - mu);
  var /= static_cast<double>(x.size());
  const double g = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  std::vector<float> out(2 * x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    const cdouble v = (x[n] - mu) * g;
    out[n] = static_cast<float>(v.real());
    out[x.size() + n] = static_cast<float>(v.imag());
  }
  return out;
}

}  // namespace jamlab
