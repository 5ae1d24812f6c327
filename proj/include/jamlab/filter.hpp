#pragma once

// Causal IIR filtering: Butterworth low-pass design by bilinear transform,
// realized as a cascade of second-order sections.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "jamlab/signal.hpp"

namespace jamlab {

struct Biquad {
  // b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2
  double b0, b1, b2, a1, a2;
};

/// Even-order Butterworth low-pass with -3 dB point at `cutoff_hz`.
inline std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz,
                                               double sample_rate_hz) {
  if (order <= 0 || order % 2 != 0)
    throw InvalidArgument("Butterworth order must be positive and even");
  if (!(cutoff_hz > 0.0) || cutoff_hz >= sample_rate_hz / 2.0)
    throw InvalidArgument("Butterworth cutoff must lie in (0, fs/2)");

  const double k = 2.0 * sample_rate_hz;
  // Pre-warp so the digital -3 dB point lands on cutoff_hz.
  const double wc = k * std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  std::vector<Biquad> sections;
  for (int i = 0; i < order / 2; ++i) {
    const double theta =
        std::numbers::pi * (2.0 * i + order + 1.0) / (2.0 * order);
    const double re = wc * std::cos(theta);  // pole real part, < 0
    const double mag2 = wc * wc;
    const double a0 = k * k - 2.0 * re * k + mag2;
    const double a1 = -2.0 * k * k + 2.0 * mag2;
    const double a2 = k * k + 2.0 * re * k + mag2;
    const double g = mag2 / a0;
    sections.push_back({g, 2.0 * g, g, a1 / a0, a2 / a0});
  }
  return sections;
}

/// Magnitude response of a section cascade at `freq_hz`.
inline double cascade_magnitude(const std::vector<Biquad>& sections, double freq_hz,
                                double sample_rate_hz) {
  const std::complex<double> z1 =
      std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate_hz);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

/// Filters a complex sequence in place (direct form II transposed, zero
/// initial state). Real coefficients act on I and Q identically.
inline void filter_in_place(const std::vector<Biquad>& sections, std::vector<cdouble>& x) {
  for (const auto& s : sections) {
    cdouble z1 = 0.0, z2 = 0.0;
    for (auto& v : x) {
      const cdouble in = v;
      const cdouble out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace jamlab
