#pragma once

// Confusion matrices, accuracy and F1 scores, and order-independent summary
// statistics for gate values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "jamlab/classes.hpp"
#include "jamlab/signal.hpp"

namespace jamlab {

/// counts[truth * C + prediction].
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t c) : n_classes(c), counts(c * c, 0) {}

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts.at(truth * n_classes + pred); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < n_classes; ++p) t += at(truth, p);
    return t;
  }
  std::uint64_t col_sum(std::size_t pred) const {
    std::uint64_t t = 0;
    for (std::size_t r = 0; r < n_classes; ++r) t += at(r, pred);
    return t;
  }
  void add(const ConfusionMatrix& o) {
    if (o.n_classes != n_classes) throw InvalidArgument("confusion matrices differ in size");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& labels, const std::vector<int>& predictions,
                                 std::size_t n_classes) {
  if (labels.size() != predictions.size()) throw InvalidArgument("label and prediction counts differ");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i], p = predictions[i];
    if (l < 0 || p < 0 || static_cast<std::size_t>(l) >= n_classes || static_cast<std::size_t>(p) >= n_classes)
      throw InvalidArgument("class index out of range in confusion()");
    ++cm.counts[static_cast<std::size_t>(l) * n_classes + static_cast<std::size_t>(p)];
  }
  return cm;
}

/// trace / total. Throws on an empty matrix.
inline double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw InvalidArgument("no samples");
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < cm.n_classes; ++i) diag += cm.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(total);
}

struct F1Scores {
  std::vector<double> precision, recall, f1;
  /// True where the class has no ground-truth samples; its F1 is reported as 0.
  std::vector<bool> zero_support;

  bool any_zero_support() const { return std::find(zero_support.begin(), zero_support.end(), true) != zero_support.end(); }
};

/// P_i = TP/(TP+FP), R_i = TP/(TP+FN), F1_i = 2 P R / (P + R). Undefined
/// ratios (0/0) are taken as 0.
inline F1Scores f1_per_class(const ConfusionMatrix& cm) {
  F1Scores out;
  const std::size_t c = cm.n_classes;
  out.precision.assign(c, 0.0);
  out.recall.assign(c, 0.0);
  out.f1.assign(c, 0.0);
  out.zero_support.assign(c, false);
  for (std::size_t i = 0; i < c; ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    const double predicted = static_cast<double>(cm.col_sum(i));
    const double support = static_cast<double>(cm.row_sum(i));
    out.zero_support[i] = support == 0.0;
    out.precision[i] = predicted > 0 ? tp / predicted : 0.0;
    out.recall[i] = support > 0 ? tp / support : 0.0;
    const double pr = out.precision[i] + out.recall[i];
    out.f1[i] = pr > 0 ? 2.0 * out.precision[i] * out.recall[i] / pr : 0.0;
  }
  return out;
}

/// Unweighted mean of per-class F1 over `subset` (class indices of cm).
inline double macro_f1(const ConfusionMatrix& cm, const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw InvalidArgument("macro F1 over an empty class subset");
  const auto s = f1_per_class(cm);
  double acc = 0;
  for (auto i : subset) acc += s.f1.at(i);
  return acc / static_cast<double>(subset.size());
}

/// Groups model class indices by the family of the dataset class they stand
/// for; families without a member are omitted.
inline std::vector<std::pair<Family, std::vector<std::size_t>>> family_groups(const std::vector<int>& class_ids) {
  std::vector<std::pair<Family, std::vector<std::size_t>>> out;
  for (int f = 0; f < kNumFamilies; ++f) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < class_ids.size(); ++i)
      if (static_cast<int>(jamming_class(class_ids[i]).family) == f) members.push_back(i);
    if (!members.empty()) out.emplace_back(static_cast<Family>(f), std::move(members));
  }
  return out;
}

/// Mean, population standard deviation and deciles (0 %, 10 %, ..., 100 %,
/// linear interpolation) of a sample. The values are sorted first, so the
/// result does not depend on the input order.
struct Distribution {
  std::size_t n = 0;
  double mean = 0, stddev = 0;
  std::vector<double> deciles;  // 11 entries when n > 0
};

inline Distribution summarize(std::vector<double> v) {
  Distribution d;
  d.n = v.size();
  if (v.empty()) return d;
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  d.mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - d.mean) * (x - d.mean);
  d.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  for (int q = 0; q <= 10; ++q) {
    const double pos = q / 10.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    d.deciles.push_back(v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]));
  }
  return d;
}

}  // namespace jamlab
