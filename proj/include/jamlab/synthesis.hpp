#pragma once

// Waveform synthesis for the 21 interference classes, the GNSS C/A signal and
// receiver noise, and composition of labelled snapshots.
//
// Each generator is split in two: `draw_*` turns a seed into a fully explicit
// waveform description, and `synth_*` renders that description. Tests drive
// the renderers directly with hand-picked descriptions; the dataset path goes
// through the seeded draws. Jamming waveforms are returned with unit mean
// power and scaled to the requested JSR by `compose_snapshot`.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <variant>
#include <vector>

#include "jamlab/classes.hpp"
#include "jamlab/filter.hpp"
#include "jamlab/rng.hpp"
#include "jamlab/signal.hpp"

namespace jamlab {

namespace detail {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double sample_time(std::size_t n) { return static_cast<double>(n) / kSampleRateHz; }

inline void normalize_unit_power(std::vector<cdouble>& x) {
  const double p = mean_power(x);
  if (!(p > 0.0)) throw InvalidArgument("cannot normalize an all-zero waveform");
  const double g = 1.0 / std::sqrt(p);
  for (auto& v : x) v *= g;
}

/// Renders exp(j * phase) where phase[n] = phase0 + 2 pi sum_{m<n} f[m] / fs.
inline std::vector<cdouble> render_frequency_track(const std::vector<double>& freq_hz,
                                                   double phase0) {
  std::vector<cdouble> out(freq_hz.size());
  double phase = phase0;
  for (std::size_t n = 0; n < freq_hz.size(); ++n) {
    out[n] = std::polar(1.0, phase);
    phase += kTwoPi * freq_hz[n] / kSampleRateHz;
    // Keep the accumulator small; the wrap is exact in the exponent.
    phase = std::remainder(phase, kTwoPi);
  }
  return out;
}

inline void check_band(double lo_hz, double hi_hz) {
  if (lo_hz < -kSampleRateHz / 2.0 || hi_hz > kSampleRateHz / 2.0)
    throw InvalidArgument("waveform occupies frequencies beyond the Nyquist band");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Digital modulation interference

/// Constellation points scaled to unit average energy.
inline std::vector<cdouble> constellation_points(Constellation c) {
  std::vector<cdouble> pts;
  auto square = [&pts](int m) {
    for (int i = 0; i < m; ++i)
      for (int q = 0; q < m; ++q) pts.emplace_back(2 * i - (m - 1), 2 * q - (m - 1));
  };
  switch (c) {
    case Constellation::kBpsk:
      pts = {{1.0, 0.0}, {-1.0, 0.0}};
      break;
    case Constellation::kQpsk:
      pts = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
      break;
    case Constellation::k8Qam:  // rectangular 4 x 2
      for (int i : {-3, -1, 1, 3})
        for (int q : {-1, 1}) pts.emplace_back(i, q);
      break;
    case Constellation::k16Qam:
      square(4);
      break;
    case Constellation::k32Qam:  // cross: 6 x 6 grid without the corners
      for (int i = 0; i < 6; ++i)
        for (int q = 0; q < 6; ++q) {
          const bool corner = (i == 0 || i == 5) && (q == 0 || q == 5);
          if (!corner) pts.emplace_back(2 * i - 5, 2 * q - 5);
        }
      break;
    case Constellation::k64Qam:
      square(8);
      break;
  }
  double e = 0.0;
  for (const auto& p : pts) e += std::norm(p);
  const double g = 1.0 / std::sqrt(e / static_cast<double>(pts.size()));
  for (auto& p : pts) p *= g;
  return pts;
}

/// Root-raised-cosine taps spanning `span_symbols` symbols at
/// `samples_per_symbol`, normalized to unit energy.
inline std::vector<double> rrc_taps(double rolloff, int samples_per_symbol, int span_symbols) {
  const int n_taps = span_symbols * samples_per_symbol + 1;
  const int center = n_taps / 2;
  std::vector<double> h(static_cast<std::size_t>(n_taps));
  const double b = rolloff;
  const double pi = std::numbers::pi;
  for (int i = 0; i < n_taps; ++i) {
    const double t = static_cast<double>(i - center) / samples_per_symbol;
    double v;
    if (i == center) {
      v = 1.0 - b + 4.0 * b / pi;
    } else if (b > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-12) {
      v = b / std::sqrt(2.0) *
          ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * b)) +
           (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * b)));
    } else {
      v = (std::sin(pi * t * (1.0 - b)) + 4.0 * b * t * std::cos(pi * t * (1.0 + b))) /
          (pi * t * (1.0 - (4.0 * b * t) * (4.0 * b * t)));
    }
    h[static_cast<std::size_t>(i)] = v;
  }
  double e = 0.0;
  for (double v : h) e += v * v;
  for (double& v : h) v /= std::sqrt(e);
  return h;
}

inline constexpr int kRrcSpanSymbols = 8;

struct DmiSpec {
  double symbol_rate_hz = 5.0e6;
  double rolloff = 0.35;
  double carrier_offset_hz = 0.0;
  double phase0 = 0.0;
  /// Symbol k is centred on sample (k - span/2) * sps; see dmi_symbol_count.
  std::vector<cdouble> symbols;
};

inline int dmi_samples_per_symbol(double symbol_rate_hz) {
  const double sps = kSampleRateHz / symbol_rate_hz;
  if (std::abs(sps - std::round(sps)) > 1e-9 || sps < 1.0)
    throw InvalidArgument("symbol rate must divide the sample rate");
  return static_cast<int>(std::lround(sps));
}

/// Symbols needed to fill a snapshot without filter edge transients.
inline std::size_t dmi_symbol_count(double symbol_rate_hz) {
  const int sps = dmi_samples_per_symbol(symbol_rate_hz);
  const std::size_t body = (kSnapshotLength + sps - 1) / static_cast<std::size_t>(sps);
  return body + kRrcSpanSymbols;
}

inline DmiSpec draw_dmi_spec(const DmiParams& p, std::uint64_t seed) {
  CounterRng sym(seed, Stream::kSymbols);
  CounterRng ph(seed, Stream::kPhases);
  DmiSpec s;
  s.symbol_rate_hz = p.symbol_rate_hz;
  s.rolloff = p.rolloff;
  s.carrier_offset_hz = ph.uniform(-2.0e6, 2.0e6);
  s.phase0 = ph.uniform(0.0, detail::kTwoPi);
  const auto pts = constellation_points(p.constellation);
  const std::size_t n = dmi_symbol_count(p.symbol_rate_hz);
  s.symbols.reserve(n);
  for (std::size_t k = 0; k < n; ++k) s.symbols.push_back(pts[sym.uniform_index(pts.size())]);
  return s;
}

inline ComplexSignal synth_dmi(const DmiSpec& spec) {
  const int sps = dmi_samples_per_symbol(spec.symbol_rate_hz);
  if (spec.symbols.size() < dmi_symbol_count(spec.symbol_rate_hz))
    throw InvalidArgument("too few symbols for one snapshot");
  detail::check_band(spec.carrier_offset_hz - spec.symbol_rate_hz * (1 + spec.rolloff) / 2,
                     spec.carrier_offset_hz + spec.symbol_rate_hz * (1 + spec.rolloff) / 2);
  const auto h = rrc_taps(spec.rolloff, sps, kRrcSpanSymbols);
  const int half = static_cast<int>(h.size()) / 2;
  const int lead = kRrcSpanSymbols / 2;  // symbols preceding sample 0

  std::vector<cdouble> y(kSnapshotLength, cdouble{0.0, 0.0});
  for (std::size_t k = 0; k < spec.symbols.size(); ++k) {
    const int centre = (static_cast<int>(k) - lead) * sps;
    const int n_lo = std::max(0, centre - half);
    const int n_hi = std::min(static_cast<int>(kSnapshotLength) - 1, centre + half);
    for (int n = n_lo; n <= n_hi; ++n)
      y[static_cast<std::size_t>(n)] += spec.symbols[k] * h[static_cast<std::size_t>(n - centre + half)];
  }
  for (std::size_t n = 0; n < y.size(); ++n)
    y[n] *= std::polar(1.0, detail::kTwoPi * spec.carrier_offset_hz * detail::sample_time(n) +
                                spec.phase0);
  detail::normalize_unit_power(y);
  return ComplexSignal(std::move(y));
}

inline ComplexSignal synth_dmi(Constellation c, std::uint64_t seed) {
  return synth_dmi(draw_dmi_spec(DmiParams{c}, seed));
}

// ---------------------------------------------------------------------------
// Linear chirps

struct LfmSpec {
  double bandwidth_hz = 16.0e6;
  double sweeps_per_snapshot = 2.0;
  SweepShape shape = SweepShape::kLinearWrap;
  double f_start_hz = -8.0e6;
  double time_offset_s = 0.0;  // position inside the first sweep at n = 0
  double phase0 = 0.0;

  double sweep_period_s() const { return kSnapshotDurationS / sweeps_per_snapshot; }
};

inline void validate(const LfmSpec& s) {
  if (s.bandwidth_hz < 0.0) throw InvalidArgument("negative chirp bandwidth");
  if (!(s.sweeps_per_snapshot > 0.0)) throw InvalidArgument("sweep rate must be positive");
  detail::check_band(s.f_start_hz, s.f_start_hz + s.bandwidth_hz);
}

inline LfmSpec draw_lfm_spec(const LfmParams& p, std::uint64_t seed) {
  CounterRng ph(seed, Stream::kPhases);
  LfmSpec s;
  s.bandwidth_hz = p.bandwidth_hz;
  s.sweeps_per_snapshot = p.sweeps_per_snapshot;
  s.shape = p.shape;
  s.f_start_hz = ph.uniform(-2.0e6, 2.0e6) - p.bandwidth_hz / 2.0;
  s.time_offset_s = ph.uniform(0.0, s.sweep_period_s());
  s.phase0 = ph.uniform(0.0, detail::kTwoPi);
  return s;
}

/// Instantaneous frequency of the sweep at sample n.
inline double lfm_frequency(const LfmSpec& s, std::size_t n) {
  const double period = s.sweep_period_s();
  const double tau = std::fmod(detail::sample_time(n) + s.time_offset_s, period);
  return s.f_start_hz + s.bandwidth_hz * tau / period;
}

inline ComplexSignal synth_lfm(const LfmSpec& s) {
  validate(s);
  std::vector<cdouble> out(kSnapshotLength);
  if (s.shape == SweepShape::kLinearWrap) {
    // Continuous phase; the frequency wraps back to f_start after each sweep.
    std::vector<double> f(kSnapshotLength);
    for (std::size_t n = 0; n < f.size(); ++n) f[n] = lfm_frequency(s, n);
    out = detail::render_frequency_track(f, s.phase0);
  } else {
    // Quadratic phase restarts every period: frequency and phase both reset.
    const double period = s.sweep_period_s();
    const double rate = s.bandwidth_hz / period;
    for (std::size_t n = 0; n < out.size(); ++n) {
      const double t = detail::sample_time(n);
      const double tau = std::fmod(t + s.time_offset_s, period);
      const double phase = s.phase0 + detail::kTwoPi * s.f_start_hz * t +
                           std::numbers::pi * rate * tau * tau;
      out[n] = std::polar(1.0, phase);
    }
  }
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_lfm(double bandwidth_hz, double sweep_rate, SweepShape shape,
                               std::uint64_t seed) {
  auto spec = draw_lfm_spec(LfmParams{bandwidth_hz, sweep_rate, shape}, seed);
  return synth_lfm(spec);
}

// ---------------------------------------------------------------------------
// Sinusoidal (non-linear) chirp

struct SinChirpSpec {
  double bandwidth_hz = 10.0e6;
  double cycles_per_snapshot = 5.0;
  double carrier_hz = 0.0;
  double phase0 = 0.0;
  double modulation_phase = 0.0;

  double modulation_rate_hz() const { return cycles_per_snapshot / kSnapshotDurationS; }
  double modulation_index() const { return bandwidth_hz / (2.0 * modulation_rate_hz()); }
};

inline SinChirpSpec draw_sin_chirp_spec(const SinChirpParams& p, std::uint64_t seed) {
  CounterRng ph(seed, Stream::kPhases);
  SinChirpSpec s;
  s.bandwidth_hz = p.bandwidth_hz;
  s.cycles_per_snapshot = p.cycles_per_snapshot;
  s.carrier_hz = ph.uniform(-2.0e6, 2.0e6);
  s.phase0 = ph.uniform(0.0, detail::kTwoPi);
  s.modulation_phase = ph.uniform(0.0, detail::kTwoPi);
  return s;
}

inline ComplexSignal synth_sin_chirp(const SinChirpSpec& s) {
  if (!(s.cycles_per_snapshot > 0.0)) throw InvalidArgument("modulation rate must be positive");
  if (s.bandwidth_hz < 0.0) throw InvalidArgument("negative chirp bandwidth");
  detail::check_band(s.carrier_hz - s.bandwidth_hz / 2, s.carrier_hz + s.bandwidth_hz / 2);
  const double fm = s.modulation_rate_hz();
  const double beta = s.modulation_index();
  std::vector<cdouble> out(kSnapshotLength);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const double t = detail::sample_time(n);
    out[n] = std::polar(1.0, s.phase0 + detail::kTwoPi * s.carrier_hz * t +
                                 beta * std::sin(detail::kTwoPi * fm * t + s.modulation_phase));
  }
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_sin_chirp(double bandwidth_hz, double rate, std::uint64_t seed) {
  return synth_sin_chirp(draw_sin_chirp_spec(SinChirpParams{bandwidth_hz, rate}, seed));
}

// ---------------------------------------------------------------------------
// Piecewise chirps (triangular, triangular wave, hook, tick)

struct PiecewiseSpec {
  PiecewiseKind kind = PiecewiseKind::kTriangular;
  double phase0 = 0.0;
  std::size_t offset_samples = 0;  // shift of the pattern relative to n = 0

  // Triangular / triangular wave / hook
  double f_low_hz = -8.0e6;
  double bandwidth_hz = 16.0e6;
  int periods = 1;
  double rise_fraction = 0.5;  // 0.5 gives a symmetric triangle

  // Tick: dwell on tick_freqs[k] then move linearly towards tick_freqs[k+1]
  double dwell_s = 10.0e-6;
  double transition_s = 2.0e-6;
  std::vector<double> tick_freqs;
  /// Transition slope in Hz/s; by default the one that lands on the next
  /// dwell frequency. Zero gives pure frequency steps.
  std::optional<double> tick_slope_hz_per_s;

  std::size_t period_samples() const {
    return kSnapshotLength / static_cast<std::size_t>(periods);
  }
  std::size_t dwell_samples() const {
    return static_cast<std::size_t>(std::lround(dwell_s * kSampleRateHz));
  }
  std::size_t transition_samples() const {
    return static_cast<std::size_t>(std::lround(transition_s * kSampleRateHz));
  }
};

inline std::size_t tick_segments_needed(const PiecewiseSpec& s) {
  const std::size_t seg = s.dwell_samples() + s.transition_samples();
  return (kSnapshotLength + s.offset_samples) / seg + 2;
}

inline PiecewiseSpec draw_piecewise_spec(PiecewiseKind kind, std::uint64_t seed) {
  CounterRng ph(seed, Stream::kPhases);
  PiecewiseSpec s;
  s.kind = kind;
  s.phase0 = ph.uniform(0.0, detail::kTwoPi);
  switch (kind) {
    case PiecewiseKind::kTriangular:
    case PiecewiseKind::kTriangularWave:
      s.bandwidth_hz = 16.0e6;
      s.periods = kind == PiecewiseKind::kTriangular ? 1 : 10;
      s.rise_fraction = 0.5;
      break;
    case PiecewiseKind::kHook:
      s.bandwidth_hz = 8.0e6;
      s.periods = 4;
      s.rise_fraction = 0.8;
      break;
    case PiecewiseKind::kTick:
      break;
  }
  if (kind == PiecewiseKind::kTick) {
    const std::size_t seg = s.dwell_samples() + s.transition_samples();
    s.offset_samples = ph.uniform_index(seg);
    const std::size_t n = tick_segments_needed(s);
    for (std::size_t k = 0; k < n; ++k) s.tick_freqs.push_back(ph.uniform(-6.0e6, 6.0e6));
  } else {
    s.f_low_hz = ph.uniform(-2.0e6, 2.0e6) - s.bandwidth_hz / 2.0;
    s.offset_samples = ph.uniform_index(s.period_samples());
  }
  return s;
}

/// Instantaneous-frequency track of a piecewise chirp, one value per sample.
inline std::vector<double> piecewise_frequency(const PiecewiseSpec& s) {
  std::vector<double> f(kSnapshotLength);
  if (s.kind == PiecewiseKind::kTick) {
    const std::size_t dwell = s.dwell_samples();
    const std::size_t seg = dwell + s.transition_samples();
    if (seg == 0) throw InvalidArgument("tick segment has zero length");
    if (s.tick_freqs.size() < tick_segments_needed(s))
      throw InvalidArgument("too few tick frequencies for one snapshot");
    const double default_slope_scale = 1.0 / s.transition_s;
    for (std::size_t n = 0; n < f.size(); ++n) {
      const std::size_t pos = n + s.offset_samples;
      const std::size_t k = pos / seg;
      const std::size_t in_seg = pos % seg;
      const double fk = s.tick_freqs[k];
      if (in_seg < dwell) {
        f[n] = fk;
      } else {
        const double slope = s.tick_slope_hz_per_s.value_or(
            (s.tick_freqs[k + 1] - fk) * default_slope_scale);
        f[n] = fk + slope * static_cast<double>(in_seg - dwell) / kSampleRateHz;
      }
    }
    return f;
  }
  if (s.periods <= 0 || kSnapshotLength % static_cast<std::size_t>(s.periods) != 0)
    throw InvalidArgument("period count must divide the snapshot length");
  const auto period = static_cast<std::int64_t>(s.period_samples());
  for (std::size_t n = 0; n < f.size(); ++n) {
    const std::int64_t k = static_cast<std::int64_t>((n + s.offset_samples) % period);
    double shape;  // position in the sweep, 0 at f_low and 1 at f_low + B
    if (s.rise_fraction == 0.5) {
      // Integer form keeps the up and down ramps exact mirror images.
      shape = 1.0 - static_cast<double>(std::llabs(2 * k + 1 - period)) /
                        static_cast<double>(period);
    } else {
      const double x = (static_cast<double>(k) + 0.5) / static_cast<double>(period);
      shape = x < s.rise_fraction ? x / s.rise_fraction
                                  : (1.0 - x) / (1.0 - s.rise_fraction);
    }
    f[n] = s.f_low_hz + s.bandwidth_hz * shape;
  }
  return f;
}

inline ComplexSignal synth_piecewise_chirp(const PiecewiseSpec& s) {
  const auto f = piecewise_frequency(s);
  const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  detail::check_band(*lo, *hi);
  return ComplexSignal(detail::render_frequency_track(f, s.phase0));
}

inline ComplexSignal synth_piecewise_chirp(PiecewiseKind kind, std::uint64_t seed) {
  return synth_piecewise_chirp(draw_piecewise_spec(kind, seed));
}

// ---------------------------------------------------------------------------
// Pulse (DME-like) jamming

inline constexpr double kPulseHalfAmplitudeWidthS = 3.5e-6;
inline constexpr double kPulsePairSpacingS = 12.0e-6;

/// Gaussian sigma whose amplitude falls to one half at +/- width/2.
inline double pulse_sigma_s() {
  return kPulseHalfAmplitudeWidthS / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
}

struct PulseSpec {
  double carrier_hz = 0.0;
  std::vector<double> arrivals_s;  // first pulse of each pair
  std::vector<double> phases;      // one carrier phase per pair
};

inline PulseSpec draw_pulse_spec(const PulseParams& p, std::uint64_t seed) {
  CounterRng arr(seed, Stream::kArrivals);
  CounterRng ph(seed, Stream::kPhases);
  PulseSpec s;
  s.carrier_hz = ph.uniform(-5.0e6, 5.0e6);
  unsigned count = 0;
  // Redraw until at least one pair lands; the stream is deterministic.
  while (count == 0) count = arr.poisson(p.mean_pairs);
  for (unsigned k = 0; k < count; ++k) {
    s.arrivals_s.push_back(arr.uniform(0.0, kSnapshotDurationS));
    s.phases.push_back(ph.uniform(0.0, detail::kTwoPi));
  }
  std::sort(s.arrivals_s.begin(), s.arrivals_s.end());
  return s;
}

/// Real pulse-pair envelope before power normalization.
inline std::vector<double> pulse_envelope(const PulseSpec& s) {
  const double sigma = pulse_sigma_s();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> env(kSnapshotLength, 0.0);
  for (double t0 : s.arrivals_s)
    for (std::size_t n = 0; n < env.size(); ++n) {
      const double t = detail::sample_time(n);
      const double d1 = t - t0, d2 = t - t0 - kPulsePairSpacingS;
      env[n] += std::exp(-d1 * d1 * inv) + std::exp(-d2 * d2 * inv);
    }
  return env;
}

inline ComplexSignal synth_pulse_jamming(const PulseSpec& s) {
  if (s.arrivals_s.empty() || s.arrivals_s.size() != s.phases.size())
    throw InvalidArgument("pulse spec needs one phase per arrival and at least one arrival");
  detail::check_band(s.carrier_hz, s.carrier_hz);
  const double sigma = pulse_sigma_s();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<cdouble> out(kSnapshotLength, cdouble{0.0, 0.0});
  for (std::size_t k = 0; k < s.arrivals_s.size(); ++k) {
    const double t0 = s.arrivals_s[k];
    for (std::size_t n = 0; n < out.size(); ++n) {
      const double t = detail::sample_time(n);
      const double d1 = t - t0, d2 = t - t0 - kPulsePairSpacingS;
      const double env = std::exp(-d1 * d1 * inv) + std::exp(-d2 * d2 * inv);
      if (env < 1e-300) continue;
      out[n] += env * std::polar(1.0, detail::kTwoPi * s.carrier_hz * t + s.phases[k]);
    }
  }
  detail::normalize_unit_power(out);
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_pulse_jamming(std::uint64_t seed, double mean_pairs = 2.0) {
  return synth_pulse_jamming(draw_pulse_spec(PulseParams{mean_pairs}, seed));
}

// ---------------------------------------------------------------------------
// Frequency hopping

struct HoppingSpec {
  double bandwidth_hz = 6.0e6;
  double dwell_s = 5.0e-6;
  int n_channels = 16;
  double center_hz = 0.0;
  std::vector<int> channels;  // one per hop
  std::vector<double> phases;  // one per hop

  std::size_t dwell_samples() const {
    return static_cast<std::size_t>(std::lround(dwell_s * kSampleRateHz));
  }
  std::size_t hop_count() const { return kSnapshotLength / dwell_samples(); }
  double channel_frequency(int ch) const {
    return center_hz - bandwidth_hz / 2.0 + (ch + 0.5) * bandwidth_hz / n_channels;
  }
};

inline void validate(const HoppingSpec& s) {
  if (s.n_channels < 1) throw InvalidArgument("need at least one hopping channel");
  const double dwell = s.dwell_s * kSampleRateHz;
  if (!(dwell >= 1.0) || std::abs(dwell - std::round(dwell)) > 1e-6 ||
      kSnapshotLength % s.dwell_samples() != 0)
    throw InvalidArgument("dwell time must divide the snapshot into whole samples");
  detail::check_band(s.center_hz - s.bandwidth_hz / 2, s.center_hz + s.bandwidth_hz / 2);
}

inline HoppingSpec draw_hopping_spec(const HoppingParams& p, std::uint64_t seed) {
  CounterRng sym(seed, Stream::kSymbols);
  CounterRng ph(seed, Stream::kPhases);
  HoppingSpec s;
  s.bandwidth_hz = p.bandwidth_hz;
  s.dwell_s = p.dwell_s;
  s.n_channels = p.n_channels;
  validate(s);
  s.center_hz = ph.uniform(-2.0e6, 2.0e6);
  for (std::size_t k = 0; k < s.hop_count(); ++k) {
    s.channels.push_back(static_cast<int>(sym.uniform_index(static_cast<std::uint64_t>(p.n_channels))));
    s.phases.push_back(ph.uniform(0.0, detail::kTwoPi));
  }
  return s;
}

inline ComplexSignal synth_freq_hopping(const HoppingSpec& s) {
  validate(s);
  if (s.channels.size() != s.hop_count() || s.phases.size() != s.hop_count())
    throw InvalidArgument("hopping spec needs one channel and phase per hop");
  const std::size_t dwell = s.dwell_samples();
  std::vector<cdouble> out(kSnapshotLength);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const std::size_t k = n / dwell;
    const int ch = s.channels[k];
    if (ch < 0 || ch >= s.n_channels) throw InvalidArgument("hop channel out of range");
    out[n] = std::polar(1.0, detail::kTwoPi * s.channel_frequency(ch) * detail::sample_time(n) +
                                 s.phases[k]);
  }
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_freq_hopping(std::uint64_t seed, double bandwidth_hz = 6.0e6,
                                        double dwell_s = 5.0e-6, int n_channels = 16) {
  return synth_freq_hopping(draw_hopping_spec(HoppingParams{bandwidth_hz, dwell_s, n_channels}, seed));
}

// ---------------------------------------------------------------------------
// Continuous-wave interference

/// Tone frequencies are drawn on the snapshot's DFT grid (fs / 4000).
inline constexpr double kToneGridHz = kSampleRateHz / static_cast<double>(kSnapshotLength);

struct CwSpec {
  std::vector<double> freqs_hz;
  std::vector<double> phases;
};

inline CwSpec draw_cw_spec(const CwParams& p, std::uint64_t seed) {
  if (p.n_tones < 1) throw InvalidArgument("CWI needs at least one tone");
  CounterRng ph(seed, Stream::kPhases);
  CwSpec s;
  const std::uint64_t span = 2000;  // +/- 10 MHz on the 10 kHz grid
  for (int k = 0; k < p.n_tones; ++k) {
    s.freqs_hz.push_back(kToneGridHz *
                         (static_cast<double>(ph.uniform_index(span + 1)) - span / 2.0));
    s.phases.push_back(ph.uniform(0.0, detail::kTwoPi));
  }
  return s;
}

inline ComplexSignal synth_cwi(const CwSpec& s) {
  if (s.freqs_hz.empty() || s.freqs_hz.size() != s.phases.size())
    throw InvalidArgument("CWI spec needs one phase per tone and at least one tone");
  for (double f : s.freqs_hz) detail::check_band(f, f);
  std::vector<cdouble> out(kSnapshotLength, cdouble{0.0, 0.0});
  for (std::size_t k = 0; k < s.freqs_hz.size(); ++k)
    for (std::size_t n = 0; n < out.size(); ++n)
      out[n] += std::polar(1.0, detail::kTwoPi * s.freqs_hz[k] * detail::sample_time(n) +
                                    s.phases[k]);
  if (s.freqs_hz.size() > 1) detail::normalize_unit_power(out);
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_cwi(std::uint64_t seed, int n_tones = 1) {
  return synth_cwi(draw_cw_spec(CwParams{n_tones}, seed));
}

// ---------------------------------------------------------------------------
// Band-limited Gaussian noise

inline constexpr int kBlgniFilterOrder = 8;
inline constexpr std::size_t kBlgniWarmupSamples = 2000;

struct BlgniSpec {
  double bandwidth_hz = 3.0e6;
  double center_hz = 0.0;
  std::uint64_t noise_key = 0;  // key of the white-noise counter stream
};

inline BlgniSpec draw_blgni_spec(const NoiseParams& p, std::uint64_t seed) {
  CounterRng ph(seed, Stream::kPhases);
  BlgniSpec s;
  s.bandwidth_hz = p.bandwidth_hz;
  const double max_offset = std::min(2.0e6, kSampleRateHz / 2.0 - p.bandwidth_hz);
  s.center_hz = ph.uniform(-max_offset, max_offset);
  s.noise_key = substream_key(seed, Stream::kNoise);
  return s;
}

/// Complex white Gaussian noise with E|x|^2 = power.
inline std::vector<cdouble> complex_gaussian(CounterRng& rng, std::size_t n, double power) {
  const double sd = std::sqrt(power / 2.0);
  std::vector<cdouble> x(n);
  for (auto& v : x) {
    const double re = rng.normal();
    const double im = rng.normal();
    v = {sd * re, sd * im};
  }
  return x;
}

inline ComplexSignal synth_blgni(const BlgniSpec& s) {
  if (!(s.bandwidth_hz > 0.0)) throw InvalidArgument("BLGNI bandwidth must be positive");
  detail::check_band(s.center_hz - s.bandwidth_hz / 2, s.center_hz + s.bandwidth_hz / 2);
  CounterRng rng(s.noise_key);
  auto x = complex_gaussian(rng, kSnapshotLength + kBlgniWarmupSamples, 1.0);
  filter_in_place(butterworth_lowpass(kBlgniFilterOrder, s.bandwidth_hz / 2.0, kSampleRateHz), x);
  std::vector<cdouble> out(x.begin() + static_cast<std::ptrdiff_t>(kBlgniWarmupSamples), x.end());
  for (std::size_t n = 0; n < out.size(); ++n)
    out[n] *= std::polar(1.0, detail::kTwoPi * s.center_hz * detail::sample_time(n));
  detail::normalize_unit_power(out);
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_blgni(std::uint64_t seed, double bandwidth_hz = 3.0e6) {
  return synth_blgni(draw_blgni_spec(NoiseParams{bandwidth_hz}, seed));
}

// ---------------------------------------------------------------------------
// GNSS C/A signal

inline constexpr double kCaChipRateHz = 1.023e6;
inline constexpr std::size_t kCaCodeLength = 1023;

/// GPS L1 C/A Gold code for PRN 1..32 as chips in {0, 1}.
inline std::array<std::uint8_t, kCaCodeLength> ca_code(int prn = 1) {
  // G2 output taps per PRN (IS-GPS-200 Table 3-Ia).
  static constexpr std::array<std::pair<int, int>, 32> kTaps = {{
      {2, 6}, {3, 7}, {4, 8}, {5, 9}, {1, 9}, {2, 10}, {1, 8}, {2, 9},
      {3, 10}, {2, 3}, {3, 4}, {5, 6}, {6, 7}, {7, 8}, {8, 9}, {9, 10},
      {1, 4}, {2, 5}, {3, 6}, {4, 7}, {5, 8}, {6, 9}, {1, 3}, {4, 6},
      {5, 7}, {6, 8}, {7, 9}, {8, 10}, {1, 6}, {2, 7}, {3, 8}, {4, 9},
  }};
  if (prn < 1 || prn > 32) throw InvalidArgument("PRN must be in 1..32");
  const auto [t1, t2] = kTaps[static_cast<std::size_t>(prn - 1)];
  std::array<std::uint8_t, 11> g1{}, g2{};  // 1-based stages
  for (int i = 1; i <= 10; ++i) g1[i] = g2[i] = 1;
  std::array<std::uint8_t, kCaCodeLength> code{};
  for (std::size_t c = 0; c < kCaCodeLength; ++c) {
    code[c] = g1[10] ^ g2[t1] ^ g2[t2];
    const std::uint8_t f1 = g1[3] ^ g1[10];
    const std::uint8_t f2 = g2[2] ^ g2[3] ^ g2[6] ^ g2[8] ^ g2[9] ^ g2[10];
    for (int i = 10; i > 1; --i) {
      g1[i] = g1[i - 1];
      g2[i] = g2[i - 1];
    }
    g1[1] = f1;
    g2[1] = f2;
  }
  return code;
}

struct GnssSpec {
  int prn = 1;
  double amplitude = 1.0;
  double code_phase_chips = 0.0;
  double doppler_hz = 0.0;
  double carrier_phase = 0.0;
};

inline GnssSpec draw_gnss_spec(std::uint64_t seed, double signal_power = 1.0) {
  CounterRng ph(seed, Stream::kGnss);
  GnssSpec s;
  s.amplitude = std::sqrt(signal_power);
  s.code_phase_chips = ph.uniform(0.0, static_cast<double>(kCaCodeLength));
  s.doppler_hz = ph.uniform(-5.0e3, 5.0e3);
  s.carrier_phase = ph.uniform(0.0, detail::kTwoPi);
  return s;
}

/// BPSK chip value (+a for code bit 0, -a for 1) at each sample, before the
/// Doppler rotation.
inline std::vector<double> gnss_chips(const GnssSpec& s) {
  const auto code = ca_code(s.prn);
  std::vector<double> chips(kSnapshotLength);
  for (std::size_t n = 0; n < chips.size(); ++n) {
    const double pos = std::fmod(detail::sample_time(n) * kCaChipRateHz + s.code_phase_chips,
                                 static_cast<double>(kCaCodeLength));
    const auto idx = static_cast<std::size_t>(pos) % kCaCodeLength;
    chips[n] = code[idx] ? -s.amplitude : s.amplitude;
  }
  return chips;
}

inline ComplexSignal synth_gnss_ca(const GnssSpec& s) {
  const auto chips = gnss_chips(s);
  std::vector<cdouble> out(kSnapshotLength);
  for (std::size_t n = 0; n < out.size(); ++n)
    out[n] = chips[n] * std::polar(1.0, detail::kTwoPi * s.doppler_hz * detail::sample_time(n) +
                                            s.carrier_phase);
  return ComplexSignal(std::move(out));
}

inline ComplexSignal synth_gnss_ca(std::uint64_t seed) { return synth_gnss_ca(draw_gnss_spec(seed)); }

// ---------------------------------------------------------------------------
// Class dispatch and snapshot composition

/// Unit-power jamming waveform of class `class_id` for the given seed.
inline ComplexSignal synth_class(int class_id, std::uint64_t seed) {
  const JammingClass& c = jamming_class(class_id);
  return std::visit(
      [&](const auto& p) -> ComplexSignal {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DmiParams>) {
          return synth_dmi(draw_dmi_spec(p, seed));
        } else if constexpr (std::is_same_v<P, LfmParams>) {
          return synth_lfm(draw_lfm_spec(p, seed));
        } else if constexpr (std::is_same_v<P, SinChirpParams>) {
          return synth_sin_chirp(draw_sin_chirp_spec(p, seed));
        } else if constexpr (std::is_same_v<P, PiecewiseParams>) {
          return synth_piecewise_chirp(draw_piecewise_spec(p.kind, seed));
        } else if constexpr (std::is_same_v<P, PulseParams>) {
          return synth_pulse_jamming(draw_pulse_spec(p, seed));
        } else if constexpr (std::is_same_v<P, HoppingParams>) {
          return synth_freq_hopping(draw_hopping_spec(p, seed));
        } else if constexpr (std::is_same_v<P, CwParams>) {
          return synth_cwi(draw_cw_spec(p, seed));
        } else {
          return synth_blgni(draw_blgni_spec(p, seed));
        }
      },
      c.params);
}

/// One labelled dataset element, stored at 32-bit precision.
struct SnapshotRecord {
  std::vector<cfloat> signal;
  int class_id = 0;
  double jsr_db = 0.0;
  std::uint64_t seed = 0;
  std::int64_t sample_idx = 0;

  int jsr_idx() const { return jsr_index_from_db(jsr_db); }
  bool operator==(const SnapshotRecord&) const = default;
};

/// The three additive terms of a received snapshot, in internal units.
struct SnapshotComponents {
  ComplexSignal gnss;
  ComplexSignal jamming;  // already scaled by sqrt(P_J)
  ComplexSignal noise;

  ComplexSignal received() const {
    ComplexSignal r;
    for (std::size_t n = 0; n < r.size(); ++n) r[n] = gnss[n] + jamming[n] + noise[n];
    return r;
  }
};

/// Builds s + sqrt(P_J) j + n with each term drawn from its own sub-stream
/// of `seed`. A null `class_id` yields a jamming-free snapshot.
inline SnapshotComponents compose_components(std::optional<int> class_id, const LinkBudget& budget,
                                             std::uint64_t seed) {
  SnapshotComponents c;
  c.gnss = synth_gnss_ca(draw_gnss_spec(seed, budget.signal_power()));
  if (class_id) {
    c.jamming = synth_class(*class_id, substream_key(seed, Stream::kJamming));
    const double a = std::sqrt(budget.jamming_power());
    for (auto& v : c.jamming.samples) v *= a;
  } else {
    c.jamming.samples.assign(kSnapshotLength, cdouble{0.0, 0.0});
  }
  CounterRng noise(seed, Stream::kNoise);
  c.noise = ComplexSignal(complex_gaussian(noise, kSnapshotLength, budget.noise_power()));
  return c;
}

inline std::vector<cfloat> to_float(const ComplexSignal& s) {
  std::vector<cfloat> out(s.size());
  for (std::size_t n = 0; n < s.size(); ++n)
    out[n] = {static_cast<float>(s[n].real()), static_cast<float>(s[n].imag())};
  return out;
}

inline ComplexSignal to_double(const std::vector<cfloat>& s) {
  std::vector<cdouble> out(s.size());
  for (std::size_t n = 0; n < s.size(); ++n) out[n] = {s[n].real(), s[n].imag()};
  return ComplexSignal(std::move(out));
}

inline SnapshotRecord compose_snapshot(int class_id, const LinkBudget& budget,
                                       std::int64_t sample_idx) {
  const int jsr_idx = jsr_index_from_db(budget.jsr_db);
  const std::uint64_t seed = derive_seed({class_id, jsr_idx, sample_idx});
  const auto comps = compose_components(class_id, budget, seed);
  SnapshotRecord rec;
  rec.signal = to_float(comps.received());
  rec.class_id = class_id;
  rec.jsr_db = budget.jsr_db;
  rec.seed = seed;
  rec.sample_idx = sample_idx;
  return rec;
}

}  // namespace jamlab
