#pragma once

// Two numerical checks on modality reliability:
//  * ambiguity: a QAM jammer and band-limited noise with matched spectra give
//    nearly the same averaged spectrogram while their fourth moments differ;
//  * discriminability: symmetrized Gaussian KL divergence between the
//    class-conditional distributions of a low-dimensional IQ summary and a
//    low-dimensional spectrogram summary, and the fusion weight
//    alpha* = R_I / (R_I + R_S) derived from the two.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jamlab/dataset_io.hpp"
#include "jamlab/dsp.hpp"
#include "jamlab/synthesis.hpp"

namespace jamlab {

/// Unit-power jamming waveform as a function of its seed.
using JammerSource = std::function<ComplexSignal(std::uint64_t seed)>;

/// 64-QAM at the catalogue symbol rate and roll-off, centred at 0 Hz.
inline DmiParams ambiguity_qam_params() { return DmiParams{Constellation::k64Qam}; }

/// BLGNI bandwidth matched to the RRC pulse: the raised-cosine power
/// spectrum has noise-equivalent bandwidth Rs, and an order-8 Butterworth of
/// bandwidth Rs has the same peak, the same power and an RMS bandwidth within
/// 1 % of it. The occupied bandwidth Rs (1 + beta) is kept for comparison.
inline double matched_blgni_bandwidth(const DmiParams& p = ambiguity_qam_params()) { return p.symbol_rate_hz; }

inline double occupied_bandwidth(const DmiParams& p = ambiguity_qam_params()) {
  return p.symbol_rate_hz * (1.0 + p.rolloff);
}

inline JammerSource matched_qam_source(const DmiParams& p = ambiguity_qam_params()) {
  return [p](std::uint64_t seed) {
    auto spec = draw_dmi_spec(p, seed);
    spec.carrier_offset_hz = 0.0;
    return synth_dmi(spec);
  };
}

inline JammerSource matched_blgni_source(double bandwidth_hz = matched_blgni_bandwidth()) {
  return [bandwidth_hz](std::uint64_t seed) {
    auto spec = draw_blgni_spec(NoiseParams{bandwidth_hz}, seed);
    spec.center_hz = 0.0;
    return synth_blgni(spec);
  };
}

/// The catalogue generator of a dataset class, random offsets included.
inline JammerSource class_source(int class_id) {
  jamming_class(class_id);
  return [class_id](std::uint64_t seed) { return synth_class(class_id, seed); };
}

namespace detail {

inline std::uint64_t theory_seed(std::uint64_t base, std::uint64_t batch, std::size_t i) {
  return mix64(substream_key(base, Stream::kTheory) ^ mix64(batch * 0x100000001B3ULL + i));
}

/// gnss + sqrt(P_J) j + noise; a null source gives the jamming-free control.
inline std::vector<cdouble> received_snapshot(const JammerSource* src, const LinkBudget& b, std::uint64_t seed) {
  const auto gnss = synth_gnss_ca(draw_gnss_spec(seed, b.signal_power()));
  CounterRng noise(seed, Stream::kNoise);
  auto x = complex_gaussian(noise, kSnapshotLength, b.noise_power());
  for (std::size_t n = 0; n < x.size(); ++n) x[n] += gnss[n];
  if (src) {
    const auto j = (*src)(substream_key(seed, Stream::kJamming));
    const double a = std::sqrt(b.jamming_power());
    for (std::size_t n = 0; n < x.size(); ++n) x[n] += a * j[n];
  }
  return x;
}

template <typename F>
auto map_batch(std::size_t n, unsigned jobs, F&& f) {
  std::vector<decltype(f(std::size_t{0}))> out(n);
  parallel_for(n, std::max(1u, jobs), [&](std::size_t i) { out[i] = f(i); });
  return out;
}

inline std::vector<double> mean_of(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InvalidArgument("mean of an empty batch");
  std::vector<double> m(rows[0].size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += r[k];
  for (auto& v : m) v /= static_cast<double>(rows.size());
  return m;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace detail

/// ||a - b|| / sqrt((||a||^2 + ||b||^2) / 2). Symmetric and non-negative.
inline double relative_l2(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("relative_l2: size mismatch");
  double na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double scale = std::sqrt((na + nb) / 2.0);
  return scale > 0.0 ? std::sqrt(detail::squared_distance(a, b)) / scale : 0.0;
}

/// Normalized log-PSD spectrogram before resizing, flattened row-major.
inline std::vector<double> normalized_spectrogram(const std::vector<cdouble>& x) {
  return log_psd_normalize(stft(x)).image.data;
}

/// Best accuracy of a one-feature threshold rule (either orientation) over
/// the pooled samples of two equally weighted classes.
inline double best_threshold_accuracy(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("threshold accuracy needs samples of both classes");
  std::vector<std::pair<double, int>> v;
  for (double x : a) v.emplace_back(x, 0);
  for (double x : b) v.emplace_back(x, 1);
  std::sort(v.begin(), v.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  // Rule "class a below the threshold"; the mirrored rule scores 1 - acc.
  double below_a = 0, below_b = 0, best = 0.5;
  for (std::size_t i = 0; i <= v.size(); ++i) {
    if (i == 0 || i == v.size() || v[i].first != v[i - 1].first) {
      const double acc = 0.5 * (below_a / na + (nb - below_b) / nb);
      best = std::max({best, acc, 1.0 - acc});
    }
    if (i < v.size()) (v[i].second == 0 ? below_a : below_b) += 1;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Ambiguity

struct AmbiguityResult {
  double jsr_db = 0;
  std::size_t n = 0;
  double blgni_bandwidth_hz = 0;
  /// Relative L2 between the batch-averaged normalized spectrograms.
  double spectrogram_distance = 0;
  /// Same distance between two independent jamming-free batches.
  double awgn_baseline = 0;
  double iq_kurtosis_qam = 0, iq_kurtosis_noise = 0;
  double kurtosis_gap = 0;
  /// Held-out accuracy of a threshold on the snapshot kurtosis and on the
  /// spectrogram template score |x - mean_qam|^2 - |x - mean_noise|^2.
  double kurtosis_classifier_accuracy = 0, spectrogram_classifier_accuracy = 0;
};

inline AmbiguityResult ambiguity_demo(double jsr_db, std::size_t n = 100, std::uint64_t seed = 0,
                                      unsigned jobs = 1, double blgni_bandwidth_hz = matched_blgni_bandwidth(),
                                      const LinkBudget& base = {}) {
  if (n < 2) throw InvalidArgument("ambiguity_demo needs at least 2 snapshots per batch");
  LinkBudget b = base;
  b.jsr_db = jsr_db;
  const auto qam = matched_qam_source();
  const auto noise = matched_blgni_source(blgni_bandwidth_hz);

  struct Features {
    std::vector<double> image;
    double kurtosis;
  };
  auto batch = [&](const JammerSource* src, std::uint64_t id) {
    return detail::map_batch(n, jobs, [&](std::size_t i) {
      const auto x = detail::received_snapshot(src, b, detail::theory_seed(seed, id, i));
      return Features{normalized_spectrogram(x), fourth_moment_ratio(x)};
    });
  };
  auto images = [](const std::vector<Features>& f) {
    std::vector<std::vector<double>> out;
    for (const auto& e : f) out.push_back(e.image);
    return out;
  };
  auto kurt = [](const std::vector<Features>& f) {
    std::vector<double> out;
    for (const auto& e : f) out.push_back(e.kurtosis);
    return out;
  };
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };

  const auto q_fit = batch(&qam, 1), n_fit = batch(&noise, 2);
  const auto q_eval = batch(&qam, 3), n_eval = batch(&noise, 4);
  const auto awgn_a = batch(nullptr, 5), awgn_b = batch(nullptr, 6);

  AmbiguityResult r;
  r.jsr_db = jsr_db;
  r.n = n;
  r.blgni_bandwidth_hz = blgni_bandwidth_hz;
  const auto mq = detail::mean_of(images(q_fit)), mn = detail::mean_of(images(n_fit));
  r.spectrogram_distance = relative_l2(mq, mn);
  r.awgn_baseline = relative_l2(detail::mean_of(images(awgn_a)), detail::mean_of(images(awgn_b)));
  r.iq_kurtosis_qam = mean(kurt(q_fit));
  r.iq_kurtosis_noise = mean(kurt(n_fit));
  r.kurtosis_gap = std::abs(r.iq_kurtosis_noise - r.iq_kurtosis_qam);
  r.kurtosis_classifier_accuracy = best_threshold_accuracy(kurt(q_eval), kurt(n_eval));
  auto score = [&](const std::vector<Features>& f) {
    std::vector<double> out;
    for (const auto& e : f)
      out.push_back(detail::squared_distance(e.image, mq) - detail::squared_distance(e.image, mn));
    return out;
  };
  r.spectrogram_classifier_accuracy = best_threshold_accuracy(score(q_eval), score(n_eval));
  return r;
}

/// The ambiguity holds when the spectrogram distance is within `factor` times
/// the jamming-free baseline and the kurtosis gap exceeds `min_gap`.
inline constexpr double kAmbiguityBaselineFactor = 2.0;
inline constexpr double kAmbiguityMinKurtosisGap = 0.2;

inline bool ambiguity_holds(const AmbiguityResult& r, double factor = kAmbiguityBaselineFactor,
                            double min_gap = kAmbiguityMinKurtosisGap) {
  return r.spectrogram_distance <= factor * r.awgn_baseline && r.kurtosis_gap > min_gap;
}

inline std::string ambiguity_csv(const std::vector<AmbiguityResult>& rs) {
  std::ostringstream os;
  os.precision(8);
  os << "jsr_db,n,blgni_bandwidth_hz,spectrogram_distance,awgn_baseline,kurtosis_qam,kurtosis_noise,"
        "kurtosis_gap,kurtosis_classifier_accuracy,spectrogram_classifier_accuracy,ambiguous\n";
  for (const auto& r : rs)
    os << r.jsr_db << ',' << r.n << ',' << r.blgni_bandwidth_hz << ',' << r.spectrogram_distance << ','
       << r.awgn_baseline << ',' << r.iq_kurtosis_qam << ',' << r.iq_kurtosis_noise << ',' << r.kurtosis_gap << ','
       << r.kurtosis_classifier_accuracy << ',' << r.spectrogram_classifier_accuracy << ','
       << (ambiguity_holds(r) ? 1 : 0) << '\n';
  return os.str();
}

inline std::string ambiguity_verdict(const AmbiguityResult& r) {
  std::ostringstream os;
  os.precision(4);
  os << "JSR " << r.jsr_db << " dB, n = " << r.n << ": spectrogram distance " << r.spectrogram_distance
     << " vs jamming-free baseline " << r.awgn_baseline << " (limit " << kAmbiguityBaselineFactor
     << "x); kurtosis 64-QAM " << r.iq_kurtosis_qam << ", BLGNI " << r.iq_kurtosis_noise << ", gap "
     << r.kurtosis_gap << " (limit " << kAmbiguityMinKurtosisGap << "); threshold accuracy kurtosis "
     << r.kurtosis_classifier_accuracy << ", spectrogram " << r.spectrogram_classifier_accuracy << ": "
     << (ambiguity_holds(r) ? "AMBIGUOUS" : "NOT AMBIGUOUS");
  return os.str();
}

// ---------------------------------------------------------------------------
// Gaussian KL

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  /// Diagonal loading that was needed to make `cov` positive definite.
  double ridge = 0;
};

/// Sample mean and unbiased covariance of the rows. A covariance that is not
/// numerically positive definite is loaded with eps * I, eps starting at
/// 1e-9 * max(trace / d, 1e-300) and growing tenfold until it is.
inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw InvalidArgument("fit_gaussian needs at least two samples");
  const auto d = static_cast<Eigen::Index>(rows[0].size());
  if (d == 0) throw InvalidArgument("fit_gaussian: empty feature vector");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != d) throw InvalidArgument("fit_gaussian: ragged rows");
    for (Eigen::Index k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - g.mean.transpose();
  g.cov = c.transpose() * c / static_cast<double>(rows.size() - 1);
  const double base = 1e-9 * std::max(g.cov.trace() / static_cast<double>(d), 1e-300);
  for (double eps = 0; eps < 1e300; eps = eps == 0 ? base : eps * 10) {
    const Eigen::MatrixXd m = g.cov + eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0) {
      g.cov = m;
      g.ridge = eps;
      return g;
    }
  }
  throw std::runtime_error("covariance could not be regularized");
}

/// KL(p || q) for multivariate normals.
inline double gaussian_kl(const Gaussian& p, const Gaussian& q) {
  const auto d = p.mean.size();
  if (q.mean.size() != d) throw InvalidArgument("gaussian_kl: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> lq(q.cov), lp(p.cov);
  if (lq.info() != Eigen::Success || lp.info() != Eigen::Success)
    throw std::runtime_error("gaussian_kl: covariance not positive definite");
  const Eigen::VectorXd dm = q.mean - p.mean;
  const double trace = lq.solve(p.cov).trace();
  const double maha = dm.dot(lq.solve(dm));
  const double logdet_q = 2.0 * lq.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_p = 2.0 * lp.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::max(0.0, 0.5 * (trace + maha - static_cast<double>(d) + logdet_q - logdet_p));
}

inline double symmetric_kl(const Gaussian& a, const Gaussian& b) { return gaussian_kl(a, b) + gaussian_kl(b, a); }

// ---------------------------------------------------------------------------
// Discriminability

enum class Modality { kIq, kStft };

inline const char* modality_name(Modality m) { return m == Modality::kIq ? "IQ" : "STFT"; }

struct SummaryOptions {
  /// STFT summary: the spectrogram power is averaged over frames, summed over
  /// bands of `band_bins` adjacent bins, normalized to unit total, and the
  /// `top_k` largest band energies (descending) are kept as log values.
  std::size_t band_bins = 16;
  std::size_t top_k = 2;
};

/// [fourth-moment ratio, envelope std / envelope mean].
inline std::vector<double> iq_summary(const std::vector<cdouble>& x) {
  return {fourth_moment_ratio(x), compute_stats(x).envelope_std};
}

inline std::vector<double> stft_summary(const std::vector<cdouble>& x, const SummaryOptions& o = {}) {
  const auto s = stft(x);
  if (o.band_bins == 0 || s.cols % o.band_bins != 0) throw InvalidArgument("band_bins must divide the bin count");
  const std::size_t bands = s.cols / o.band_bins;
  if (o.top_k == 0 || o.top_k > bands) throw InvalidArgument("top_k must be in [1, band count]");
  std::vector<double> e(bands, 0.0);
  double total = 0;
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) {
      const double p = std::norm(s(r, c));
      e[c / o.band_bins] += p;
      total += p;
    }
  if (!(total > 0.0)) throw InvalidArgument("spectrogram summary of an all-zero signal");
  std::sort(e.begin(), e.end(), std::greater<>());
  std::vector<double> out(o.top_k);
  for (std::size_t k = 0; k < o.top_k; ++k) out[k] = std::log(std::max(e[k] / total, 1e-300));
  return out;
}

struct DiscriminabilityOptions {
  std::size_t n = 300;  // snapshots per class
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  SummaryOptions summary;
  LinkBudget budget;
};

struct Discriminability {
  double r = 0;
  double ridge = 0;  // largest diagonal loading used by either class fit
};

inline std::vector<double> modality_summary(Modality m, const std::vector<cdouble>& x, const SummaryOptions& o) {
  return m == Modality::kIq ? iq_summary(x) : stft_summary(x, o);
}

/// Symmetrized Gaussian-approximation KL between the summaries of two sets
/// of received snapshots.
inline Discriminability discriminability_of_samples(Modality m, const std::vector<std::vector<cdouble>>& a,
                                                    const std::vector<std::vector<cdouble>>& b,
                                                    const DiscriminabilityOptions& o = {}) {
  if (a.size() < 50 || b.size() < 50) throw InvalidArgument("discriminability needs at least 50 snapshots per class");
  auto fit = [&](const std::vector<std::vector<cdouble>>& xs) {
    return fit_gaussian(
        detail::map_batch(xs.size(), o.jobs, [&](std::size_t i) { return modality_summary(m, xs[i], o.summary); }));
  };
  const auto ga = fit(a), gb = fit(b);
  return {symmetric_kl(ga, gb), std::max(ga.ridge, gb.ridge)};
}

inline std::vector<std::vector<cdouble>> received_batch(const JammerSource& src, double jsr_db, std::uint64_t batch,
                                                        const DiscriminabilityOptions& o) {
  LinkBudget b = o.budget;
  b.jsr_db = jsr_db;
  return detail::map_batch(o.n, o.jobs, [&](std::size_t i) {
    return detail::received_snapshot(&src, b, detail::theory_seed(o.seed, batch, i));
  });
}

/// Discriminability of two generators at one JSR; the classes use disjoint
/// seed batches.
inline Discriminability discriminability(Modality m, double jsr_db, const JammerSource& a, const JammerSource& b,
                                         const DiscriminabilityOptions& o = {}) {
  if (o.n < 50) throw InvalidArgument("discriminability needs at least 50 snapshots per class");
  const std::uint64_t tag = 0x1000 + static_cast<std::uint64_t>(std::llround(jsr_db * 16.0));
  return discriminability_of_samples(m, received_batch(a, jsr_db, tag * 2, o), received_batch(b, jsr_db, tag * 2 + 1, o),
                                     o);
}

/// alpha* = R_I / (R_I + R_S): the normalized form of a weight stated only up
/// to proportionality.
inline double optimal_alpha(double r_iq, double r_stft) {
  if (!(r_iq >= 0.0) || !(r_stft >= 0.0)) throw InvalidArgument("discriminabilities must be non-negative");
  if (!(r_iq + r_stft > 0.0)) throw InvalidArgument("optimal_alpha undefined when both discriminabilities are zero");
  return r_iq / (r_iq + r_stft);
}

struct ReliabilityPoint {
  double jsr_db = 0;
  double r_iq = 0, r_stft = 0;
  double alpha_star = 0;
  double ridge = 0;
};

struct ReliabilityCurve {
  std::vector<ReliabilityPoint> points;
};

inline ReliabilityCurve reliability_curve(const std::vector<double>& jsr_grid, const JammerSource& a,
                                          const JammerSource& b, const DiscriminabilityOptions& o = {}) {
  ReliabilityCurve c;
  for (double jsr : jsr_grid) {
    const auto ri = discriminability(Modality::kIq, jsr, a, b, o);
    const auto rs = discriminability(Modality::kStft, jsr, a, b, o);
    c.points.push_back({jsr, ri.r, rs.r, optimal_alpha(ri.r, rs.r), std::max(ri.ridge, rs.ridge)});
  }
  return c;
}

/// One point per JSR of the dataset, using every stored snapshot of the two
/// classes at that JSR.
inline ReliabilityCurve reliability_curve_from_dataset(const Dataset& d, int class_a, int class_b,
                                                       const DiscriminabilityOptions& o = {}) {
  ReliabilityCurve c;
  for (double jsr : d.manifest.jsr_grid) {
    std::vector<std::vector<cdouble>> a, b;
    for (const auto& r : d.records) {
      if (std::abs(r.jsr_db - jsr) > 1e-9) continue;
      if (r.class_id == class_a) a.push_back(to_double(r.signal).samples);
      if (r.class_id == class_b) b.push_back(to_double(r.signal).samples);
    }
    if (a.empty() || b.empty())
      throw InvalidArgument("dataset lacks class " + std::to_string(a.empty() ? class_a : class_b) + " at JSR " +
                            std::to_string(jsr));
    const auto ri = discriminability_of_samples(Modality::kIq, a, b, o);
    const auto rs = discriminability_of_samples(Modality::kStft, a, b, o);
    c.points.push_back({jsr, ri.r, rs.r, optimal_alpha(ri.r, rs.r), std::max(ri.ridge, rs.ridge)});
  }
  return c;
}

inline std::string reliability_csv(const ReliabilityCurve& c) {
  std::ostringstream os;
  os.precision(8);
  os << "jsr_db,r_iq,r_stft,alpha_star,ridge\n";
  for (const auto& p : c.points)
    os << p.jsr_db << ',' << p.r_iq << ',' << p.r_stft << ',' << p.alpha_star << ',' << p.ridge << '\n';
  return os.str();
}

/// Holds when STFT wins at the lowest JSR of the curve and IQ at the highest.
inline bool reliability_crosses(const ReliabilityCurve& c) {
  if (c.points.size() < 2) return false;
  const auto lo = std::min_element(c.points.begin(), c.points.end(),
                                   [](const auto& x, const auto& y) { return x.jsr_db < y.jsr_db; });
  const auto hi = std::max_element(c.points.begin(), c.points.end(),
                                   [](const auto& x, const auto& y) { return x.jsr_db < y.jsr_db; });
  return lo->r_stft > lo->r_iq && hi->r_iq > hi->r_stft;
}

inline std::string reliability_verdict(const ReliabilityCurve& c) {
  std::ostringstream os;
  os.precision(4);
  for (const auto& p : c.points)
    os << "JSR " << p.jsr_db << " dB: R_I " << p.r_iq << ", R_S " << p.r_stft << ", alpha* " << p.alpha_star
       << (p.ridge > 0 ? " (ridge " + std::to_string(p.ridge) + ")" : std::string()) << '\n';
  os << "alpha* = R_I / (R_I + R_S) (normalized reading of a proportionality)\n";
  os << (reliability_crosses(c) ? "CROSSING: STFT dominates at low JSR, IQ at high JSR"
                                : "NO CROSSING between the lowest and highest JSR");
  return os.str();
}

}  // namespace jamlab
