#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace jamlab {

using cdouble = std::complex<double>;
using cfloat = std::complex<float>;

inline constexpr double kSampleRateHz = 4.0e7;
inline constexpr std::size_t kSnapshotLength = 4000;
inline constexpr double kSnapshotDurationS =
    static_cast<double>(kSnapshotLength) / kSampleRateHz;  // 100 us

inline constexpr int kNumClasses = 21;
inline constexpr int kNumJsrLevels = 21;
inline constexpr double kJsrMinDb = 10.0;
inline constexpr double kJsrStepDb = 2.0;

/// Thrown when an operation receives arguments outside its domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fixed-length complex baseband snapshot sampled at 40 MHz.
struct ComplexSignal {
  std::vector<cdouble> samples;
  double sample_rate_hz = kSampleRateHz;

  ComplexSignal() : samples(kSnapshotLength) {}
  explicit ComplexSignal(std::vector<cdouble> s) : samples(std::move(s)) {}

  std::size_t size() const noexcept { return samples.size(); }
  cdouble& operator[](std::size_t i) { return samples[i]; }
  const cdouble& operator[](std::size_t i) const { return samples[i]; }

  bool is_valid() const noexcept {
    if (samples.size() != kSnapshotLength || sample_rate_hz != kSampleRateHz)
      return false;
    for (const auto& s : samples)
      if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) return false;
    return true;
  }
};

inline double mean_power(const std::vector<cdouble>& x) {
  double acc = 0.0;
  for (const auto& v : x) acc += std::norm(v);
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

inline double mean_power(const std::vector<cfloat>& x) {
  double acc = 0.0;
  for (const auto& v : x) acc += std::norm(cdouble(v));
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

/// Absolute link budget. Internally everything is expressed relative to the
/// GNSS signal power, so the signal has unit power and the noise power is
/// noise_density + 10 log10(fs) - gnss_power dB.
struct LinkBudget {
  double gnss_power_dbw = -157.0;
  double noise_density_dbw_hz = -205.0;
  double jsr_db = 30.0;

  double noise_power_dbw() const {
    return noise_density_dbw_hz + linear_to_db(kSampleRateHz);
  }
  double noise_to_signal_db() const {
    return noise_power_dbw() - gnss_power_dbw;
  }
  /// Powers in internal units (P_S == 1).
  double signal_power() const { return 1.0; }
  double noise_power() const { return db_to_linear(noise_to_signal_db()); }
  double jamming_power() const { return db_to_linear(jsr_db); }

  bool operator==(const LinkBudget&) const = default;
};

/// Jamming-to-signal level of grid index `idx` (10, 12, ..., 50 dB).
constexpr double jsr_db_from_index(int idx) {
  return kJsrMinDb + kJsrStepDb * idx;
}

/// Grid index of a JSR value; rejects off-grid values.
inline int jsr_index_from_db(double jsr_db) {
  const double pos = (jsr_db - kJsrMinDb) / kJsrStepDb;
  const double rounded = std::round(pos);
  if (std::abs(pos - rounded) > 1e-9 || rounded < 0 ||
      rounded >= kNumJsrLevels)
    throw InvalidArgument("JSR " + std::to_string(jsr_db) +
                          " dB is not on the 10..50 dB / 2 dB grid");
  return static_cast<int>(rounded);
}

/// Hundredths of a dB, as stored in dataset headers.
inline std::int16_t jsr_to_centidb(double jsr_db) {
  return static_cast<std::int16_t>(std::lround(jsr_db * 100.0));
}

struct SeedTriple {
  int class_idx = 0;
  int jsr_idx = 0;
  std::int64_t sample_idx = 0;
};

inline constexpr std::int64_t kMaxSampleIndex = (std::int64_t{1} << 20) - 1;

/// class * 2^40 + jsr * 2^20 + sample; injective while every field stays in
/// its 20-bit lane.
inline std::uint64_t derive_seed(const SeedTriple& t) {
  if (t.class_idx < 0 || t.class_idx >= kNumClasses)
    throw InvalidArgument("class index out of range: " +
                          std::to_string(t.class_idx));
  if (t.jsr_idx < 0 || t.jsr_idx >= kNumJsrLevels)
    throw InvalidArgument("JSR index out of range: " +
                          std::to_string(t.jsr_idx));
  if (t.sample_idx < 0 || t.sample_idx > kMaxSampleIndex)
    throw InvalidArgument("sample index out of range: " +
                          std::to_string(t.sample_idx));
  return (static_cast<std::uint64_t>(t.class_idx) << 40) |
         (static_cast<std::uint64_t>(t.jsr_idx) << 20) |
         static_cast<std::uint64_t>(t.sample_idx);
}

}  // namespace jamlab
