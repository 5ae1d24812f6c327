#pragma once

// The 21 interference classes and their waveform parameters.

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace jamlab {

enum class Family { kDmi, kLfm, kNlfm, kPiecewise, kPulse, kHopping, kCw, kNoiseLike };

inline constexpr int kNumFamilies = 8;

constexpr std::string_view family_name(Family f) {
  switch (f) {
    case Family::kDmi: return "DMI";
    case Family::kLfm: return "LFM";
    case Family::kNlfm: return "NLFM";
    case Family::kPiecewise: return "Piecewise";
    case Family::kPulse: return "Pulse";
    case Family::kHopping: return "Hopping";
    case Family::kCw: return "CW";
    case Family::kNoiseLike: return "NoiseLike";
  }
  return "?";
}

enum class Constellation { kBpsk, kQpsk, k8Qam, k16Qam, k32Qam, k64Qam };
enum class SweepShape { kLinearWrap, kSawtooth };
enum class PiecewiseKind { kTriangular, kTriangularWave, kHook, kTick };

struct DmiParams {
  Constellation constellation;
  double symbol_rate_hz = 5.0e6;
  double rolloff = 0.35;
};

struct LfmParams {
  double bandwidth_hz;
  double sweeps_per_snapshot;
  SweepShape shape;
};

struct SinChirpParams {
  double bandwidth_hz = 10.0e6;
  double cycles_per_snapshot = 5.0;
};

struct PiecewiseParams {
  PiecewiseKind kind;
};

struct PulseParams {
  double mean_pairs = 2.0;
};

struct HoppingParams {
  double bandwidth_hz = 6.0e6;
  double dwell_s = 5.0e-6;
  int n_channels = 16;
};

struct CwParams {
  int n_tones = 1;
};

struct NoiseParams {
  double bandwidth_hz = 3.0e6;
};

using ClassParams = std::variant<DmiParams, LfmParams, SinChirpParams, PiecewiseParams,
                                 PulseParams, HoppingParams, CwParams, NoiseParams>;

struct JammingClass {
  int id;
  std::string_view name;
  std::string_view slug;
  Family family;
  ClassParams params;
  /// |j[n]| == 1 for every sample before power scaling.
  bool constant_modulus;
};

inline const std::array<JammingClass, 21>& jamming_classes() {
  using enum Family;
  static const std::array<JammingClass, 21> table = {{
      {0, "BPSK", "bpsk", kDmi, DmiParams{Constellation::kBpsk}, false},
      {1, "QPSK", "qpsk", kDmi, DmiParams{Constellation::kQpsk}, false},
      {2, "8-QAM", "8qam", kDmi, DmiParams{Constellation::k8Qam}, false},
      {3, "16-QAM", "16qam", kDmi, DmiParams{Constellation::k16Qam}, false},
      {4, "32-QAM", "32qam", kDmi, DmiParams{Constellation::k32Qam}, false},
      {5, "64-QAM", "64qam", kDmi, DmiParams{Constellation::k64Qam}, false},
      {6, "LChirp Wide Slow", "lchirp_wide_slow", kLfm,
       LfmParams{16.0e6, 2.0, SweepShape::kLinearWrap}, true},
      {7, "LChirp Wide Medium", "lchirp_wide_medium", kLfm,
       LfmParams{16.0e6, 5.0, SweepShape::kLinearWrap}, true},
      {8, "LChirp Wide Fast", "lchirp_wide_fast", kLfm,
       LfmParams{16.0e6, 10.0, SweepShape::kLinearWrap}, true},
      {9, "LChirp Wide Rapid", "lchirp_wide_rapid", kLfm,
       LfmParams{16.0e6, 15.0, SweepShape::kLinearWrap}, true},
      {10, "LChirp Narrow", "lchirp_narrow", kLfm,
       LfmParams{5.0e6, 10.0, SweepShape::kLinearWrap}, true},
      {11, "Sawtooth Chirp", "sawchirp", kLfm, LfmParams{12.0e6, 11.0, SweepShape::kSawtooth},
       true},
      {12, "Sinusoidal Chirp", "sinchirp", kNlfm, SinChirpParams{}, true},
      {13, "Hooked Sawtooth", "hookchirp", kPiecewise, PiecewiseParams{PiecewiseKind::kHook},
       true},
      {14, "Triangular", "triangular", kPiecewise,
       PiecewiseParams{PiecewiseKind::kTriangular}, true},
      {15, "Triangular Wave", "triangular_wave", kPiecewise,
       PiecewiseParams{PiecewiseKind::kTriangularWave}, true},
      {16, "Tick Chirp", "tickchirp", kPiecewise, PiecewiseParams{PiecewiseKind::kTick}, true},
      {17, "Pulse Jamming", "pj", kPulse, PulseParams{}, false},
      {18, "Frequency Hopping", "fh", kHopping, HoppingParams{}, true},
      {19, "Single-Tone CWI", "cwi", kCw, CwParams{}, true},
      {20, "BLGNI", "blgni", kNoiseLike, NoiseParams{}, false},
  }};
  return table;
}

inline const JammingClass& jamming_class(int id) {
  if (id < 0 || id >= 21) throw std::out_of_range("no jamming class " + std::to_string(id));
  return jamming_classes()[static_cast<std::size_t>(id)];
}

/// Looks a class up by slug, display name (case-insensitive) or numeric id.
inline std::optional<int> class_id_from_name(std::string_view name) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  };
  const std::string key = lower(name);
  for (const auto& c : jamming_classes())
    if (key == c.slug || key == lower(c.name)) return c.id;
  if (!key.empty() && std::all_of(key.begin(), key.end(), ::isdigit)) {
    const int id = std::stoi(key);
    if (id >= 0 && id < 21) return id;
  }
  return std::nullopt;
}

}  // namespace jamlab
