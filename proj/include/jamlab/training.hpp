#pragma once

// Feature extraction, the training loop, evaluation reports and model
// checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "jamlab/dataset_io.hpp"
#include "jamlab/dsp.hpp"
#include "jamlab/metrics.hpp"
#include "jamlab/model.hpp"
#include "jamlab/nn/checkpoint.hpp"
#include "jamlab/nn/optim.hpp"

namespace jamlab {

// ---------------------------------------------------------------------------
// Features

/// Per-record model inputs. Images are stored as 16-bit fixed point
/// (value * 65535), which keeps a large cache within memory; the
/// quantization step is 1.5e-5.
struct FeatureCache {
  std::size_t iq_length = kSnapshotLength;
  std::size_t image_size = kImageSize;
  std::vector<float> iq;             // rows x (2 * iq_length)
  std::vector<std::uint16_t> image;  // rows x image_size^2
  std::vector<std::array<double, kNumStats>> stats;
  std::vector<int> labels;  // model class index
  std::vector<double> jsr_db;
  std::vector<int> class_ids;  // dataset class id of each model class index

  std::size_t size() const { return labels.size(); }
};

/// Maps dataset class ids to model class indices 0..C-1 in the given order.
inline std::map<int, int> class_index_map(const std::vector<int>& class_ids) {
  std::map<int, int> m;
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    if (!m.emplace(class_ids[i], static_cast<int>(i)).second) throw InvalidArgument("duplicate class id");
  return m;
}

inline std::vector<float> image_features(const std::vector<cdouble>& x, std::size_t size) {
  if (size == kImageSize) return spectrogram_image(x).data;
  const auto n = log_psd_normalize(stft(x));
  const auto r = resize_bilinear(n.image, size, size);
  return std::vector<float>(r.data.begin(), r.data.end());
}

/// Extracts features for every record of `d`; row i corresponds to
/// d.records[i].
inline FeatureCache build_feature_cache(const Dataset& d, unsigned jobs = 1, std::size_t image_size = kImageSize) {
  FeatureCache c;
  c.image_size = image_size;
  c.class_ids = d.manifest.class_ids;
  const auto idx = class_index_map(c.class_ids);
  const std::size_t n = d.records.size();
  const std::size_t px = image_size * image_size;
  c.iq.assign(n * 2 * c.iq_length, 0.0f);
  c.image.assign(n * px, 0);
  c.stats.resize(n);
  c.labels.resize(n);
  c.jsr_db.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = d.records[i];
    if (r.signal.size() != c.iq_length) throw InvalidArgument("record length differs from the IQ input length");
    const auto it = idx.find(r.class_id);
    if (it == idx.end()) throw InvalidArgument("record class " + std::to_string(r.class_id) + " not in manifest");
    c.labels[i] = it->second;
    c.jsr_db[i] = r.jsr_db;
  }
  parallel_for(n, std::max(1u, jobs), [&](std::size_t i) {
    const auto x = to_double(d.records[i].signal).samples;
    const auto planes = iq_input_planes<float>(x);
    std::copy(planes.begin(), planes.end(), c.iq.begin() + static_cast<std::ptrdiff_t>(i * 2 * c.iq_length));
    const auto img = image_features(x, image_size);
    for (std::size_t k = 0; k < px; ++k)
      c.image[i * px + k] = static_cast<std::uint16_t>(std::lround(std::clamp(img[k], 0.0f, 1.0f) * 65535.0f));
    c.stats[i] = compute_stats(x).as_array();
  });
  return c;
}

inline StatsNormalizer fit_normalizer(const FeatureCache& c, const std::vector<std::size_t>& rows) {
  std::vector<std::array<double, kNumStats>> v;
  v.reserve(rows.size());
  for (auto r : rows) v.push_back(c.stats.at(r));
  return StatsNormalizer::fit(v);
}

inline ModelInput<float> make_batch(const FeatureCache& c, const std::vector<std::size_t>& rows,
                                    const StatsNormalizer& z) {
  const std::size_t n = rows.size(), l = c.iq_length, s = c.image_size, px = s * s;
  ModelInput<float> in{nn::Tensor<float>({n, 2, l}), nn::Tensor<float>({n, 1, s, s}), nn::Tensor<float>({n, kNumStats})};
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t r = rows[b];
    std::copy_n(c.iq.begin() + static_cast<std::ptrdiff_t>(r * 2 * l), 2 * l, in.iq.data.begin() + static_cast<std::ptrdiff_t>(b * 2 * l));
    for (std::size_t k = 0; k < px; ++k) in.image.data[b * px + k] = static_cast<float>(c.image[r * px + k]) / 65535.0f;
    const auto v = z.apply(c.stats[r]);
    for (std::size_t k = 0; k < kNumStats; ++k) in.stats.data[b * kNumStats + k] = static_cast<float>(v[k]);
  }
  return in;
}

// ---------------------------------------------------------------------------
// Prediction

struct Predictions {
  std::vector<int> predicted;
  std::vector<double> g, s;
  std::vector<float> probs;  // rows x C
};

/// Evaluates each row on its own, so every result is independent of which
/// other rows are requested and in what order.
inline Predictions predict_rows(const GfNet<float>& model, const FeatureCache& c, const StatsNormalizer& z,
                                const std::vector<std::size_t>& rows, unsigned jobs = 1) {
  const std::size_t n = rows.size(), nc = model.config().n_classes;
  Predictions p;
  p.predicted.resize(n);
  p.g.resize(n);
  p.s.resize(n);
  p.probs.resize(n * nc);
  parallel_for(n, std::max(1u, jobs), [&](std::size_t i) {
    const auto [probs, gates] = model.predict(make_batch(c, {rows[i]}, z));
    std::copy(probs.begin(), probs.end(), p.probs.begin() + static_cast<std::ptrdiff_t>(i * nc));
    p.predicted[i] = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    p.g[i] = gates[0].g;
    p.s[i] = gates[0].s;
  });
  return p;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  int epochs = nn::kTotalEpochs;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  int warmup_epochs = nn::kWarmupEpochs;
  double base_lr = nn::kBaseLr;
  double weight_decay = nn::kWeightDecay;
  unsigned eval_jobs = 1;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<double> val_accuracy;
  double lr = 0;  // at the last step of the epoch
  double seconds = 0;
};

struct TrainResult {
  std::vector<double> batch_losses;
  std::vector<EpochLog> epochs;
  int best_epoch = -1;  // 0-based; -1 when no epoch ran
  std::optional<double> best_val_accuracy;
  std::int64_t steps = 0;
};

/// Parameter values and batch-norm buffers, for keeping the best epoch.
struct ModelSnapshot {
  std::vector<std::vector<float>> values;
  std::vector<nn::BatchNormState<float>> bn;

  static ModelSnapshot capture(const nn::ParameterSet<float>& ps) {
    ModelSnapshot s;
    for (const auto& p : ps.params()) s.values.push_back(p.value.data);
    for (const auto& b : ps.bn()) s.bn.push_back(b.state);
    return s;
  }
  void restore(nn::ParameterSet<float>& ps) const {
    for (std::size_t i = 0; i < values.size(); ++i) ps.params()[i].value.data = values[i];
    for (std::size_t i = 0; i < bn.size(); ++i) ps.bn()[i].state = bn[i];
  }
};

namespace detail {

/// Large per-step buffers would otherwise be mapped and unmapped on every
/// batch; keeping them on the heap saves about a third of the step time.
inline void tune_allocator_for_training() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace detail

inline std::uint64_t shuffle_key(std::uint64_t seed, int epoch) {
  return mix64(substream_key(seed, Stream::kShuffle) ^ static_cast<std::uint64_t>(epoch));
}

inline std::uint64_t dropout_key(std::uint64_t seed, std::int64_t step) {
  return mix64(substream_key(seed, Stream::kDropout) ^ static_cast<std::uint64_t>(step));
}

/// Mini-batch training with Adam and the warmup + cosine schedule. The
/// training rows are reshuffled every epoch; after each epoch the validation
/// accuracy is measured and the parameters of the best epoch (ties keep the
/// earlier one) are restored at the end. Without validation rows the final
/// epoch is kept. Deterministic for fixed inputs and options.
inline TrainResult train(GfNet<float>& model, const FeatureCache& cache, const StatsNormalizer& z,
                         const std::vector<std::size_t>& train_rows, const std::vector<std::size_t>& val_rows,
                         const TrainOptions& o, nn::OptimizerState<float>* state = nullptr,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (o.epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (o.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (o.epochs > 0 && train_rows.empty()) throw InvalidArgument("no training rows");
  detail::tune_allocator_for_training();
  nn::OptimizerState<float> local(model.params());
  nn::OptimizerState<float>& opt = state ? *state : local;
  if (opt.m.size() != model.params().params().size()) opt = nn::OptimizerState<float>(model.params());
  opt.base_lr = o.base_lr;
  opt.weight_decay = o.weight_decay;

  TrainResult res;
  const auto steps_per_epoch = static_cast<std::int64_t>((train_rows.size() + o.batch_size - 1) / o.batch_size);
  const int warmup = std::min(o.warmup_epochs, std::max(o.epochs - 1, 0));
  std::optional<ModelSnapshot> best;
  std::vector<std::size_t> order = train_rows;
  std::vector<int> labels;
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    CounterRng rng(shuffle_key(o.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double loss_sum = 0;
    EpochLog log;
    log.epoch = epoch;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * o.batch_size;
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(lo + o.batch_size, order.size())));
      labels.clear();
      for (auto r : rows) labels.push_back(cache.labels[r]);
      const std::int64_t step = static_cast<std::int64_t>(epoch) * steps_per_epoch + b;
      nn::Tape<float> t;
      float loss_value = 0;
      try {
        const auto out = model.forward(t, make_batch(cache, rows, z), true, dropout_key(o.seed, step));
        nn::Var loss = nn::softmax_xent(t, out.logits, labels);
        loss_value = t.value(loss).data[0];
        if (!std::isfinite(loss_value)) throw nn::NumericError("non-finite loss");
        model.params().zero_grad();
        t.backward(loss);
        log.lr = nn::lr_at(step, steps_per_epoch, o.epochs, warmup, o.base_lr);
        nn::adam_step(opt, model.params(), log.lr);
      } catch (const nn::NumericError& e) {
        std::ostringstream msg;
        msg << e.what() << " at epoch " << epoch << ", batch " << b << " (rows";
        for (std::size_t k = 0; k < std::min<std::size_t>(rows.size(), 8); ++k) msg << " " << rows[k];
        if (rows.size() > 8) msg << " ...";
        msg << ")";
        throw nn::NumericError(msg.str());
      }
      res.batch_losses.push_back(loss_value);
      loss_sum += loss_value;
      ++res.steps;
    }
    log.mean_loss = loss_sum / static_cast<double>(std::max<std::int64_t>(steps_per_epoch, 1));
    if (!val_rows.empty()) {
      const auto p = predict_rows(model, cache, z, val_rows, o.eval_jobs);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < val_rows.size(); ++i) correct += p.predicted[i] == cache.labels[val_rows[i]];
      log.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_rows.size());
      if (!res.best_val_accuracy || *log.val_accuracy > *res.best_val_accuracy) {
        res.best_val_accuracy = log.val_accuracy;
        res.best_epoch = epoch;
        best = ModelSnapshot::capture(model.params());
      }
    } else {
      res.best_epoch = epoch;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (best) best->restore(model.params());
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation reports

struct JsrBucket {
  double jsr_db = 0;
  ConfusionMatrix cm;
  std::optional<double> accuracy;                    // empty bucket -> none
  std::vector<std::optional<double>> class_accuracy;  // per model class
  std::vector<std::pair<std::string, double>> family_macro_f1;
  Distribution g, s;
};

struct EvalReport {
  std::vector<int> class_ids;
  ConfusionMatrix cm;
  double accuracy = 0;
  F1Scores f1;
  std::vector<std::pair<std::string, double>> family_macro_f1;
  std::vector<JsrBucket> buckets;
  std::vector<std::string> warnings;
};

inline std::vector<std::pair<std::string, double>> family_f1(const ConfusionMatrix& cm, const std::vector<int>& ids) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [fam, members] : family_groups(ids)) out.emplace_back(std::string(family_name(fam)), macro_f1(cm, members));
  return out;
}

/// Builds the report from per-row predictions; buckets follow `jsr_grid`.
inline EvalReport make_report(const FeatureCache& c, const std::vector<std::size_t>& rows, const Predictions& p,
                              const std::vector<double>& jsr_grid) {
  EvalReport r;
  r.class_ids = c.class_ids;
  const std::size_t nc = c.class_ids.size();
  std::vector<int> truth;
  for (auto row : rows) truth.push_back(c.labels[row]);
  r.cm = confusion(truth, p.predicted, nc);
  r.accuracy = overall_accuracy(r.cm);
  r.f1 = f1_per_class(r.cm);
  for (std::size_t i = 0; i < nc; ++i)
    if (r.f1.zero_support[i])
      r.warnings.push_back("class " + std::string(jamming_class(c.class_ids[i]).name) +
                           " has no test samples; its F1 is reported as 0");
  r.family_macro_f1 = family_f1(r.cm, r.class_ids);
  for (double jsr : jsr_grid) {
    JsrBucket b;
    b.jsr_db = jsr;
    std::vector<int> t, pr;
    std::vector<double> gs, ss;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (std::abs(c.jsr_db[rows[i]] - jsr) < 1e-9) {
        t.push_back(truth[i]);
        pr.push_back(p.predicted[i]);
        gs.push_back(p.g[i]);
        ss.push_back(p.s[i]);
      }
    b.cm = confusion(t, pr, nc);
    if (!t.empty()) {
      b.accuracy = overall_accuracy(b.cm);
      b.family_macro_f1 = family_f1(b.cm, r.class_ids);
    }
    for (std::size_t k = 0; k < nc; ++k) {
      const auto support = b.cm.row_sum(k);
      b.class_accuracy.push_back(support ? std::optional<double>(static_cast<double>(b.cm.at(k, k)) / static_cast<double>(support))
                                         : std::nullopt);
    }
    b.g = summarize(gs);
    b.s = summarize(ss);
    r.buckets.push_back(std::move(b));
  }
  return r;
}

inline EvalReport evaluate(const GfNet<float>& model, const FeatureCache& c, const StatsNormalizer& z,
                           const std::vector<std::size_t>& rows, const std::vector<double>& jsr_grid, unsigned jobs = 1) {
  return make_report(c, rows, predict_rows(model, c, z, rows, jobs), jsr_grid);
}

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

inline std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace detail

inline std::string gate_csv(const EvalReport& r) {
  std::ostringstream o;
  o << "jsr_db,n,g_mean,g_std";
  for (int q = 0; q <= 10; ++q) o << ",g_p" << q * 10;
  o << ",s_mean,s_std";
  for (int q = 0; q <= 10; ++q) o << ",s_p" << q * 10;
  o << "\n";
  for (const auto& b : r.buckets) {
    o << detail::fmt(b.jsr_db) << "," << b.g.n;
    for (const auto* d : {&b.g, &b.s}) {
      o << "," << (d->n ? detail::fmt(d->mean) : "") << "," << (d->n ? detail::fmt(d->stddev) : "");
      for (int q = 0; q <= 10; ++q) o << "," << (d->n ? detail::fmt(d->deciles[static_cast<std::size_t>(q)]) : "");
    }
    o << "\n";
  }
  return o.str();
}

inline std::string summary_text(const EvalReport& r) {
  std::ostringstream o;
  o << "overall accuracy: " << detail::fmt(r.accuracy) << " (" << r.cm.total() << " samples)\n";
  o << "accuracy by JSR:\n";
  for (const auto& b : r.buckets)
    o << "  " << std::setw(5) << b.jsr_db << " dB  " << (b.accuracy ? detail::fmt(*b.accuracy, 4) : "-") << "  (n="
      << b.cm.total() << ", mean g=" << (b.g.n ? detail::fmt(b.g.mean, 4) : "-")
      << ", mean s=" << (b.s.n ? detail::fmt(b.s.mean, 4) : "-") << ")\n";
  o << "macro F1 by family:\n";
  for (const auto& [name, f] : r.family_macro_f1) o << "  " << name << ": " << detail::fmt(f, 4) << "\n";
  for (const auto& w : r.warnings) o << "warning: " << w << "\n";
  return o.str();
}

/// Writes summary.txt plus CSV tables into `dir`.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t nc = r.class_ids.size();
  std::ostringstream acc, cls, f1, fam, cm;
  acc << "jsr_db,n,accuracy\n";
  cls << "jsr_db,class_id,class_name,n,accuracy\n";
  for (const auto& b : r.buckets) {
    acc << detail::fmt(b.jsr_db) << "," << b.cm.total() << "," << detail::opt_fmt(b.accuracy) << "\n";
    for (std::size_t k = 0; k < nc; ++k)
      cls << detail::fmt(b.jsr_db) << "," << r.class_ids[k] << ",\"" << jamming_class(r.class_ids[k]).name << "\","
          << b.cm.row_sum(k) << "," << detail::opt_fmt(b.class_accuracy[k]) << "\n";
  }
  f1 << "class_id,class_name,precision,recall,f1,zero_support\n";
  for (std::size_t k = 0; k < nc; ++k)
    f1 << r.class_ids[k] << ",\"" << jamming_class(r.class_ids[k]).name << "\"," << detail::fmt(r.f1.precision[k]) << ","
       << detail::fmt(r.f1.recall[k]) << "," << detail::fmt(r.f1.f1[k]) << "," << (r.f1.zero_support[k] ? 1 : 0) << "\n";
  fam << "scope,family,macro_f1\n";
  for (const auto& [name, v] : r.family_macro_f1) fam << "all," << name << "," << detail::fmt(v) << "\n";
  for (const auto& b : r.buckets)
    for (const auto& [name, v] : b.family_macro_f1) fam << detail::fmt(b.jsr_db) << "," << name << "," << detail::fmt(v) << "\n";
  cm << "truth\\prediction";
  for (std::size_t k = 0; k < nc; ++k) cm << "," << r.class_ids[k];
  cm << "\n";
  for (std::size_t i = 0; i < nc; ++i) {
    cm << r.class_ids[i];
    for (std::size_t k = 0; k < nc; ++k) cm << "," << r.cm.at(i, k);
    cm << "\n";
  }
  detail::write_text(dir / "summary.txt", summary_text(r));
  detail::write_text(dir / "accuracy_by_jsr.csv", acc.str());
  detail::write_text(dir / "class_accuracy.csv", cls.str());
  detail::write_text(dir / "f1.csv", f1.str());
  detail::write_text(dir / "family_f1.csv", fam.str());
  detail::write_text(dir / "confusion.csv", cm.str());
  detail::write_text(dir / "gates.csv", gate_csv(r));
}

/// Per-sample gate values for plotting: jsr_db, class_id, g, s.
inline std::string gate_samples_csv(const FeatureCache& c, const std::vector<std::size_t>& rows, const Predictions& p) {
  std::ostringstream o;
  o << "jsr_db,class_id,g,s\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    o << detail::fmt(c.jsr_db[rows[i]]) << "," << c.class_ids[static_cast<std::size_t>(c.labels[rows[i]])] << ","
      << detail::fmt(p.g[i], 9) << "," << detail::fmt(p.s[i], 9) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Model checkpoints

struct TrainedModel {
  std::unique_ptr<GfNet<float>> model;
  StatsNormalizer normalizer;
  std::vector<int> class_ids;
  nlohmann::json extra;
};

inline nlohmann::json normalizer_to_json(const StatsNormalizer& z) { return {{"mean", z.mean}, {"stddev", z.stddev}}; }

inline StatsNormalizer normalizer_from_json(const nlohmann::json& j) {
  StatsNormalizer z;
  z.mean = j.at("mean").get<std::array<double, kNumStats>>();
  z.stddev = j.at("stddev").get<std::array<double, kNumStats>>();
  return z;
}

inline void save_model(const std::filesystem::path& dir, const GfNet<float>& model, const StatsNormalizer& z,
                       const std::vector<int>& class_ids, const nn::OptimizerState<float>* opt,
                       nlohmann::json extra = nlohmann::json::object()) {
  extra["model_config"] = model_config_to_json(model.config());
  extra["stats_normalizer"] = normalizer_to_json(z);
  extra["class_ids"] = class_ids;
  nn::save_checkpoint(dir, model.params(), opt, extra);
}

inline TrainedModel load_model(const std::filesystem::path& dir, nn::OptimizerState<float>* opt = nullptr) {
  const auto info = nn::read_checkpoint_info(dir);
  TrainedModel t;
  try {
    t.model = std::make_unique<GfNet<float>>(model_config_from_json(info.extra.at("model_config")));
    t.normalizer = normalizer_from_json(info.extra.at("stats_normalizer"));
    t.class_ids = info.extra.at("class_ids").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw nn::CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  if (t.class_ids.size() != t.model->config().n_classes)
    throw nn::CheckpointError("checkpoint class list does not match n_classes");
  const auto full = nn::load_checkpoint(dir, t.model->params(), opt);
  t.extra = full.extra;
  return t;
}

/// FNV-1a of the tensor blob, for comparing checkpoints.
inline std::string checkpoint_hash(const std::filesystem::path& dir) {
  return detail::hex64(detail::fnv1a(detail::read_file(dir / nn::kCheckpointBlob)));
}

}  // namespace jamlab
