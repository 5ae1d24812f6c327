#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "jamlab/dsp.hpp"
#include "jamlab/synthesis.hpp"

using namespace jamlab;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<cdouble> tone(double f_hz, std::size_t n = kSnapshotLength) {
  std::vector<cdouble> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::polar(1.0, 2.0 * kPi * f_hz * static_cast<double>(i) / kSampleRateHz);
  return x;
}

std::vector<cdouble> white(std::uint64_t key) {
  CounterRng r(key);
  return complex_gaussian(r, kSnapshotLength, 1.0);
}

}  // namespace

TEST(Stft, FrameCount) {
  EXPECT_EQ(stft_frame_count(4000), 289u);
  EXPECT_EQ(stft(white(1)).rows, 289u);
  EXPECT_EQ(stft(white(1)).cols, 256u);
  EXPECT_THROW(stft(std::vector<cdouble>(100)), InvalidArgument);
}

TEST(Stft, MatchesDirectDft) {
  const auto x = white(2);
  const auto s = stft(x);
  const auto w = hamming(256);
  for (std::size_t m : {0u, 100u, 288u})
    for (int k : {-128, -3, 0, 1, 127}) {
      cdouble acc = 0.0;
      for (std::size_t n = 0; n < 256; ++n)
        acc += x[m * 13 + n] * w[n] * std::polar(1.0, -2.0 * kPi * k * static_cast<double>(n) / 256.0);
      EXPECT_NEAR(std::abs(s(m, static_cast<std::size_t>(k + 128)) - acc), 0.0, 1e-9);
    }
}

TEST(Stft, BinAlignedToneOccupiesOneColumn) {
  const int k0 = 37;
  const auto s = stft(tone(k0 * kSampleRateHz / 256.0));
  for (std::size_t m = 0; m < s.rows; ++m) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.cols; ++k)
      if (std::norm(s(m, k)) > std::norm(s(m, best))) best = k;
    EXPECT_EQ(best, static_cast<std::size_t>(128 + k0));
  }
}

TEST(Stft, PerFrameParseval) {
  const auto x = synth_class(5, 3).samples;
  const auto s = stft(x);
  const auto w = hamming(256);
  double worst = 0;
  for (std::size_t m = 0; m < s.rows; ++m) {
    double lhs = 0, rhs = 0;
    for (std::size_t k = 0; k < 256; ++k) lhs += std::norm(s(m, k));
    for (std::size_t n = 0; n < 256; ++n) rhs += std::norm(x[m * 13 + n] * w[n]);
    worst = std::max(worst, std::abs(lhs - 256.0 * rhs) / (256.0 * rhs));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Hamming, SymmetricWithKnownEnds) {
  const auto w = hamming(256);
  EXPECT_NEAR(w[0], 0.08, 1e-15);
  EXPECT_NEAR(w[255], 0.08, 1e-15);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_NEAR(w[i], w[255 - i], 1e-15);
}

TEST(Normalize, NonDegenerateHitsZeroAndOneExactly) {
  for (int c : {0, 8, 17, 19, 20}) {
    const auto n = log_psd_normalize(stft(synth_class(c, 5).samples));
    EXPECT_FALSE(n.degenerate);
    const auto [lo, hi] = std::minmax_element(n.image.data.begin(), n.image.data.end());
    EXPECT_EQ(*lo, 0.0);
    EXPECT_EQ(*hi, 1.0);
  }
}

TEST(Normalize, ConstantMagnitudeIsDegenerate) {
  Image<cdouble> m(10, 8, cdouble{0.0, 2.0});
  const auto n = log_psd_normalize(m);
  EXPECT_TRUE(n.degenerate);
  for (double v : n.image.data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(log_psd_normalize(Image<cdouble>()), InvalidArgument);
}

TEST(Normalize, PreservesPairwiseOrder) {
  CounterRng r(4);
  Image<cdouble> m(20, 16);
  for (auto& v : m.data) v = {r.normal() * std::exp(3 * r.normal()), r.normal()};
  m.data[5] = 0.0;  // exercises the floor
  const auto n = log_psd_normalize(m);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    for (std::size_t j = 0; j < m.data.size(); ++j) {
      const double pi = std::max(std::norm(m.data[i]), 1e-12), pj = std::max(std::norm(m.data[j]), 1e-12);
      if (pi < pj) {
        ASSERT_LE(n.image.data[i], n.image.data[j]);
      } else if (pi == pj) {
        ASSERT_EQ(n.image.data[i], n.image.data[j]);
      }
    }
}

TEST(Resize, ConstantStaysConstant) {
  Image<double> img(289, 256, 0.5);
  const auto r = resize_bilinear(img, 224, 224);
  for (double v : r.data) EXPECT_EQ(v, 0.5);
}

TEST(Resize, IdentityAtSameSize) {
  CounterRng rng(5);
  Image<double> img(224, 224);
  for (auto& v : img.data) v = rng.uniform();
  EXPECT_EQ(resize_bilinear(img, 224, 224), img);
}

TEST(Resize, OutputWithinSourceRange) {
  CounterRng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Image<double> img(17 + trial * 31, 9 + trial * 50);
    for (auto& v : img.data) v = rng.uniform(-3.0, 4.0);
    const auto r = resize_bilinear(img, 224, 224);
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    for (double v : r.data) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
    EXPECT_EQ(r(0, 0), img(0, 0));
    EXPECT_EQ(r(223, 223), img(img.rows - 1, img.cols - 1));
  }
}

TEST(Resize, LinearRampIsReproduced) {
  Image<double> img(3, 5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) img(r, c) = 2.0 * r + 0.5 * c;
  const auto out = resize_bilinear(img, 7, 9);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_NEAR(out(r, c), 2.0 * (r * 2.0 / 6.0) + 0.5 * (c * 4.0 / 8.0), 1e-12);
}

TEST(Spectrogram, PipelineIsPureAndInRange) {
  const auto x = synth_class(12, 8).samples;
  const auto a = spectrogram_image(x);
  EXPECT_EQ(a, spectrogram_image(x));
  EXPECT_EQ(a.rows, 224u);
  EXPECT_EQ(a.cols, 224u);
  for (float v : a.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Spectrogram, ScalingThePowerLeavesTheImageUnchanged) {
  auto x = synth_class(8, 8).samples;
  const auto a = spectrogram_image(x);
  for (auto& v : x) v *= std::sqrt(2.0);
  const auto b = spectrogram_image(x);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-6);
}

TEST(Pgm, HeaderAndPixels) {
  Image<double> img(2, 3);
  img.data = {0.0, 0.5, 1.0, 0.2, 2.0, -1.0};
  const auto path = (std::filesystem::temp_directory_path() / "jamlab_test.pgm").string();
  write_pgm(img, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  const std::string px = bytes.substr(11);
  ASSERT_EQ(px.size(), 6u);
  const unsigned char expected[6] = {0, 128, 255, 51, 255, 0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(static_cast<unsigned char>(px[static_cast<std::size_t>(i)]), expected[i]);
  std::filesystem::remove(path);
}

TEST(Stats, CwiHasUnitPaprAndZeroEnvelopeSpread) {
  const auto s = compute_stats(synth_cwi(3));
  EXPECT_NEAR(s.papr, 1.0, 1e-9);
  EXPECT_NEAR(s.envelope_std, 0.0, 1e-9);
}

TEST(Stats, WhiteNoiseIsFlat) {
  for (std::uint64_t k = 0; k < 20; ++k) EXPECT_GT(compute_stats(white(100 + k)).spectral_flatness, 0.8);
}

TEST(Stats, FilteringLowersFlatness) {
  for (std::uint64_t k = 0; k < 10; ++k)
    EXPECT_LT(compute_stats(synth_blgni(k)).spectral_flatness, compute_stats(white(200 + k)).spectral_flatness);
}

TEST(Stats, PulsePaprFarAboveCw) {
  const auto p = compute_stats(synth_pulse_jamming(1)).papr;
  EXPECT_GT(p / compute_stats(synth_cwi(1)).papr, 10.0);
}

TEST(Stats, ToneCentroidWithinOneBin) {
  for (double f : {-7.3e6, 0.0, 1.234e6, 9.9e6}) {
    const auto s = compute_stats(tone(f));
    EXPECT_NEAR(s.spectral_centroid_hz, f, kSampleRateHz / 4096.0) << f;
  }
}

TEST(Stats, InvariantsHoldForEveryClass) {
  for (int c = 0; c < kNumClasses; ++c) {
    LinkBudget b;
    b.jsr_db = 30;
    const auto rec = compose_snapshot(c, b, 1);
    const auto s = compute_stats(to_double(rec.signal));
    EXPECT_GE(s.spectral_flatness, 0.0);
    EXPECT_LE(s.spectral_flatness, 1.0);
    EXPECT_GE(s.papr, 1.0);
    EXPECT_GE(s.envelope_std, 0.0);
    EXPECT_GE(s.spectral_bandwidth_hz, 0.0);
    for (double v : s.as_array()) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(compute_stats(std::vector<cdouble>(4000)), InvalidArgument);
}

TEST(Stats, PeriodogramSmoothingPreservesPower) {
  const auto x = white(9);
  const auto p = smoothed_periodogram(x);
  double total = 0, energy = 0;
  for (double v : p) total += v;
  for (const auto& v : x) energy += std::norm(v);
  EXPECT_NEAR(total / (4096.0 * energy), 1.0, 1e-9);  // Parseval for the padded DFT
}

TEST(Normalizer, FitAndApply) {
  std::vector<std::array<double, 6>> rows = {{1, 2, 3, 4, 5, 6}, {3, 2, 5, 8, 5, 10}};
  const auto z = StatsNormalizer::fit(rows);
  const auto a = z.apply(rows[0]);
  EXPECT_NEAR(a[0], -1.0, 1e-12);
  EXPECT_NEAR(a[1], 0.0, 1e-12);  // zero spread keeps unit scale
  EXPECT_NEAR(z.apply(rows[1])[3], 1.0, 1e-12);
}

TEST(IqPlanes, ZeroMeanUnitVariance) {
  auto x = synth_class(3, 4).samples;
  for (auto& v : x) v = v * 7.0 + cdouble{2.0, -1.0};
  const auto p = normalized_iq_planes(x);
  double mr = 0, mi = 0, pw = 0;
  for (std::size_t n = 0; n < 4000; ++n) {
    mr += p[n];
    mi += p[4000 + n];
    pw += p[n] * p[n] + p[4000 + n] * p[4000 + n];
  }
  EXPECT_NEAR(mr / 4000, 0.0, 1e-5);
  EXPECT_NEAR(mi / 4000, 0.0, 1e-5);
  EXPECT_NEAR(pw / 4000, 1.0, 1e-5);
}
