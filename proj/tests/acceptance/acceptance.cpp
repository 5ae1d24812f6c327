// Acceptance runner. Each criterion is a self-contained experiment that
// prints one "[PASS] ACnn ..." or "[FAIL] ACnn ..." line; the exit status is
// 0 iff every requested criterion passed.

#include "CLI11.hpp"
#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "grad_check.hpp"
#include "jamlab/nn/complex.hpp"
#include "jamlab/theory.hpp"
#include "jamlab/training.hpp"
#include "model_fixtures.hpp"

using namespace jamlab;
using gradcheck::random_tensor;
using nn::Tape;
using nn::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  unsigned jobs = 1;
  bool verbose = false;
  std::filesystem::path work;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string mins(double s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << s / 60.0 << " min";
  return os.str();
}

void log(const Context& c, const std::string& s) {
  if (c.verbose) std::cerr << "  " << s << '\n';
}

// ---------------------------------------------------------------------------
// 1. Determinism

Outcome ac1(const Context& ctx) {
  Stopwatch sw;
  GenerateOptions o;
  for (int c = 0; c < kNumClasses; ++c) o.class_ids.push_back(c);
  o.jsr_grid = {10.0, 30.0, 50.0};
  o.train_per_stratum = 2;
  o.test_per_stratum = 1;
  o.seed_base = 11;
  o.jobs = ctx.jobs;
  const auto d = generate_dataset(o);
  std::size_t regenerated = 0;
  for (const auto& r : d.records) {
    LinkBudget b;
    b.jsr_db = r.jsr_db;
    const auto again = compose_snapshot(r.class_id, b, r.sample_idx);
    if (again.seed != derive_seed({r.class_id, jsr_index_from_db(r.jsr_db), r.sample_idx}) ||
        again.signal.size() != r.signal.size() ||
        std::memcmp(again.signal.data(), r.signal.data(), r.signal.size() * sizeof(cfloat)) != 0)
      return {false, "snapshot (class " + std::to_string(r.class_id) + ", JSR " + num(r.jsr_db) + ", sample " +
                         std::to_string(r.sample_idx) + ") differs on regeneration"};
    ++regenerated;
  }
  const auto dir = ctx.work / "ac1_dataset";
  std::filesystem::remove_all(dir);
  write_dataset(d, dir);
  const auto back = read_dataset(dir);
  bool same = back.records.size() == d.records.size() && manifest_to_jsonl(back.manifest) == manifest_to_jsonl(d.manifest);
  for (std::size_t i = 0; same && i < d.records.size(); ++i) {
    const auto& a = d.records[i];
    const auto& b = back.records[i];
    same = a.class_id == b.class_id && a.jsr_db == b.jsr_db && a.seed == b.seed && a.sample_idx == b.sample_idx &&
           a.signal.size() == b.signal.size() &&
           std::memcmp(a.signal.data(), b.signal.data(), a.signal.size() * sizeof(cfloat)) == 0;
  }
  std::filesystem::remove_all(dir);
  const double t = sw.seconds();
  const bool pass = same && t < 60.0;
  return {pass, std::to_string(regenerated) + " snapshots regenerated bit-identically; write/read round trip " +
                    (same ? "bit-exact" : "MISMATCH") + "; " + num(t, 3) + " s (limit 60 s)"};
}

// ---------------------------------------------------------------------------
// 2. Power calibration

Outcome ac2(const Context& ctx) {
  LinkBudget b;
  b.jsr_db = 30.0;
  const double pj = b.jamming_power();
  double worst_db = 0, worst_cm = 0;
  std::string worst_name;
  for (const auto& jc : jamming_classes()) {
    const auto powers = detail::map_batch(100, ctx.jobs, [&](std::size_t i) {
      const auto comps = compose_components(jc.id, b, derive_seed({jc.id, jsr_index_from_db(30.0), static_cast<std::int64_t>(i)}));
      double dev = 0;
      if (jc.constant_modulus)
        for (const auto& v : comps.jamming.samples) dev = std::max(dev, std::abs(std::norm(v) / pj - 1.0));
      return std::pair{mean_power(comps.jamming.samples), dev};
    });
    double acc = 0;
    for (const auto& [p, dev] : powers) {
      acc += p;
      worst_cm = std::max(worst_cm, dev);
    }
    const double err = std::abs(linear_to_db(acc / 100.0 / pj));
    if (err >= worst_db) {
      worst_db = err;
      worst_name = jc.name;
    }
  }
  const bool pass = worst_db <= 0.1 && worst_cm <= 1e-9;
  return {pass, "worst mean-power error " + num(worst_db, 3) + " dB (" + worst_name +
                    ", limit 0.1 dB); worst constant-modulus deviation " + num(worst_cm, 3) + " (limit 1e-9)"};
}

// ---------------------------------------------------------------------------
// 3. Link budget

Outcome ac3(const Context& ctx) {
  const LinkBudget b;
  const double expected = -205.0 + 76.02 - (-157.0);
  const double arith = b.noise_to_signal_db();
  const auto ratios = detail::map_batch(100, ctx.jobs, [&](std::size_t i) {
    const auto c = compose_components(std::nullopt, b, mix64(0xAC3 + i));
    return std::pair{mean_power(c.noise.samples), mean_power(c.gnss.samples)};
  });
  double pn = 0, ps = 0;
  for (const auto& [n, s] : ratios) {
    pn += n;
    ps += s;
  }
  const double measured = linear_to_db(pn / ps);
  const bool pass = std::abs(arith - expected) <= 0.01 && std::abs(measured - expected) <= 0.05;
  return {pass, "noise relative to signal " + num(arith, 6) + " dB (expected " + num(expected, 6) +
                    " dB, limit 0.01 dB); composed snapshots measure " + num(measured, 5) + " dB"};
}

// ---------------------------------------------------------------------------
// 4. STFT

Outcome ac4(const Context&) {
  const std::size_t frames = stft_frame_count(kSnapshotLength);
  double worst_parseval = 0;
  bool range_ok = true;
  const auto w = hamming(kStftWindow);
  for (const auto& jc : jamming_classes()) {
    LinkBudget b;
    const auto x = compose_components(jc.id, b, mix64(0xAC4 + static_cast<std::uint64_t>(jc.id))).received().samples;
    const auto s = stft(x);
    if (s.rows != frames) return {false, "frame count " + std::to_string(s.rows) + " != " + std::to_string(frames)};
    for (std::size_t m = 0; m < s.rows; ++m) {
      double time = 0, freq = 0;
      for (std::size_t n = 0; n < kStftWindow; ++n) time += std::norm(x[m * kStftHop + n] * w[n]);
      for (std::size_t k = 0; k < s.cols; ++k) freq += std::norm(s(m, k));
      worst_parseval = std::max(worst_parseval, std::abs(freq / static_cast<double>(kStftWindow) - time) / time);
    }
    const auto img = log_psd_normalize(s);
    const auto [lo, hi] = std::minmax_element(img.image.data.begin(), img.image.data.end());
    range_ok = range_ok && !img.degenerate && *lo == 0.0 && *hi == 1.0;
  }
  const bool pass = frames == 289 && worst_parseval < 1e-6 && range_ok;
  return {pass, std::to_string(frames) + " frames (L=" + std::to_string(kStftWindow) + ", hop " +
                    std::to_string(kStftHop) + "); worst per-frame Parseval error " + num(worst_parseval, 3) +
                    " (limit 1e-6); normalized min/max " + (range_ok ? "exactly 0/1" : "NOT 0/1") +
                    " on all 21 classes"};
}

// ---------------------------------------------------------------------------
// 5. Gradient suite

Outcome ac5(const Context& ctx) {
  using namespace nn;
  Stopwatch sw;
  std::vector<std::pair<std::string, gradcheck::Report>> reps;
  auto run = [&](const std::string& name, std::vector<Tensor<double>> in, std::vector<Parameter<double>*> ps,
                 const gradcheck::Graph& g, std::size_t cap = 0) {
    reps.emplace_back(name, gradcheck::check(std::move(in), std::move(ps), g, 1e-6, 99, cap));
    log(ctx, name + ": " + num(reps.back().second.max_rel_error, 3));
  };
  const auto a = random_tensor({3, 4}, 20, 1.0, 0.05), b = random_tensor({3, 4}, 21);
  run("add", {a, b}, {}, [](auto& t, auto& in) { return add(t, in[0], in[1]); });
  run("sub", {a, b}, {}, [](auto& t, auto& in) { return sub(t, in[0], in[1]); });
  run("mul", {a, b}, {}, [](auto& t, auto& in) { return mul(t, in[0], in[1]); });
  run("affine", {a}, {}, [](auto& t, auto& in) { return affine(t, in[0], 1.7, -0.3); });
  run("relu", {a}, {}, [](auto& t, auto& in) { return relu(t, in[0]); });
  run("crelu", {a}, {}, [](auto& t, auto& in) { return crelu(t, in[0]); });
  run("sigmoid", {a}, {}, [](auto& t, auto& in) { return sigmoid(t, in[0]); });
  run("silu", {a}, {}, [](auto& t, auto& in) { return silu(t, in[0]); });
  run("reshape", {a, b}, {}, [](auto& t, auto& in) { return mul(t, reshape(t, in[0], {12}), reshape(t, in[1], {12})); });
  run("scale_rows", {random_tensor({3, 2, 4}, 22), random_tensor({3, 1}, 23)}, {},
      [](auto& t, auto& in) { return scale_rows(t, in[0], in[1]); });
  run("channel_scale", {random_tensor({2, 3, 4, 5}, 24), random_tensor({2, 3}, 25)}, {},
      [](auto& t, auto& in) { return channel_scale(t, in[0], in[1]); });
  ParameterSet<double> ps(2);
  Linear<double> fc(ps, "fc", 5, 3);
  run("linear", {random_tensor({4, 5}, 26)}, {fc.w, fc.b}, [&](auto& t, auto& in) { return fc(t, in[0]); });
  run("conv1d", {random_tensor({2, 3, 10}, 27), random_tensor({4, 3, 3}, 28), random_tensor({4}, 29)}, {},
      [](auto& t, auto& in) { return conv1d(t, in[0], in[1], std::optional<Var>(in[2]), 2, 1); });
  ComplexConv1d<double> cc(ps, "cc", 2, 3, 3, 2, 1);
  run("complex_conv1d", {random_tensor({2, 4, 9}, 10)}, {cc.w_re, cc.w_im},
      [&](auto& t, auto& in) { return cc(t, in[0]); });
  for (auto [k, s, p] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 2, 1}, {1, 1, 0}, {5, 1, 2}})
    run("conv2d k" + std::to_string(k), {random_tensor({2, 2, 7, 6}, 30), random_tensor({3, 2, k, k}, 31), random_tensor({3}, 32)},
        {}, [s = s, p = p](auto& t, auto& in) { return conv2d(t, in[0], in[1], std::optional<Var>(in[2]), s, p); });
  for (std::size_t s : {1u, 2u})
    run("depthwise_conv2d s" + std::to_string(s), {random_tensor({2, 3, 7, 7}, 33), random_tensor({3, 1, 3, 3}, 34)}, {},
        [s](auto& t, auto& in) { return depthwise_conv2d(t, in[0], in[1], s, 1); });
  for (bool training : {true, false}) {
    BatchNormState<double> st(3);
    st.running_mean = {0.1, -0.2, 0.3};
    st.running_var = {0.5, 1.5, 2.0};
    run(std::string("batchnorm ") + (training ? "train" : "eval"),
        {random_tensor({4, 3, 5}, 35), random_tensor({3}, 36), random_tensor({3}, 37)}, {},
        [&](auto& t, auto& in) { return batchnorm(t, in[0], in[1], in[2], st, training); });
  }
  run("global_avg_pool", {random_tensor({2, 3, 4, 4}, 38)}, {}, [](auto& t, auto& in) { return global_avg_pool(t, in[0]); });
  run("modulus", {random_tensor({2, 6, 5}, 39)}, {}, [](auto& t, auto& in) { return modulus(t, in[0]); });
  run("dropout", {random_tensor({4, 8}, 40)}, {}, [](auto& t, auto& in) { return dropout(t, in[0], 0.5, 1234, true); });
  SqueezeExcite<double> se(ps, "se", 4, 2);
  run("squeeze_excite", {random_tensor({2, 4, 3, 3}, 41)},
      {se.reduce.w, se.reduce.b, se.expand.w, se.expand.b},
      [&](auto& t, auto& in) { return se(t, in[0]); });
  const std::vector<int> labels3{2, 0, 1};
  run("softmax_xent", {random_tensor({3, 4}, 42)}, {}, [&](auto& t, auto& in) { return softmax_xent(t, in[0], labels3); });

  GfNet<double> m(fixtures::tiny_config(3));
  std::uint64_t key = 20;
  for (auto& p : m.params().params())
    if (p.name.rfind("gate_", 0) == 0) fixtures::randomize(p, key++);
  const auto in = fixtures::random_input<double>(m.config(), 3, 21);
  std::vector<Parameter<double>*> params;
  for (auto& p : m.params().params()) params.push_back(&p);
  run("end-to-end truncated model", {}, params,
      [&](Tape<double>& t, const std::vector<Var>&) { return softmax_xent(t, m.forward(t, in, true, 22).logits, labels3); },
      6);

  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& [name, r] : reps) {
    checked += r.checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  }
  const double t = sw.seconds();
  const bool pass = worst < 1e-4 && t < 300.0;
  return {pass, std::to_string(reps.size()) + " checks, " + std::to_string(checked) + " entries; worst relative error " +
                    num(worst, 3) + " (" + worst_name + ", limit 1e-4); " + num(t, 3) + " s (limit 300 s)"};
}

// ---------------------------------------------------------------------------
// 6. Metric oracle

Outcome ac6(const Context&) {
  const auto cm = confusion({0, 1, 1, 2}, {0, 0, 1, 2}, 3);
  const double acc = overall_accuracy(cm);
  const double f1 = f1_per_class(cm).f1[1];
  const bool pass = acc == 0.75 && f1 == 2.0 / 3.0;
  return {pass, "labels [0,1,1,2], predictions [0,0,1,2]: accuracy " + num(acc, 17) + " (expected 0.75), class-1 F1 " +
                    num(f1, 17) + " (expected 2/3)"};
}

// ---------------------------------------------------------------------------
// Shared training harness for 7-9

struct Experiment {
  std::string name;
  std::vector<int> class_ids;
  std::vector<double> jsr_grid;
  std::int64_t train_per_stratum = 0, test_per_stratum = 0;
  std::uint64_t seed = 0;
  GateMode mode = GateMode::kLearned;
};

inline constexpr double kValFraction = 0.1;

struct Trained {
  Dataset data;
  FeatureCache cache;
  Split split;
  StatsNormalizer z;
  EvalReport report;
  double seconds = 0;
};

/// Generates the data, builds features, trains a default reduced model for
/// the full epoch budget and evaluates on the test pool.
std::vector<Trained> run_experiments(const Context& ctx, const std::vector<Experiment>& exps) {
  std::vector<Trained> out;
  std::map<std::string, std::size_t> data_cache;
  for (const auto& e : exps) {
    Stopwatch sw;
    Trained r;
    GenerateOptions o;
    o.class_ids = e.class_ids;
    o.jsr_grid = e.jsr_grid;
    o.train_per_stratum = e.train_per_stratum;
    o.test_per_stratum = e.test_per_stratum;
    o.seed_base = static_cast<std::int64_t>(e.seed);
    o.jobs = ctx.jobs;
    r.data = generate_dataset(o);
    r.cache = build_feature_cache(r.data, ctx.jobs);
    r.split = make_split(r.data.manifest, kValFraction, e.seed);
    r.z = fit_normalizer(r.cache, r.split.train);
    log(ctx, e.name + ": " + std::to_string(r.split.train.size()) + " train, " + std::to_string(r.split.val.size()) +
                 " val, " + std::to_string(r.split.test.size()) + " test; features in " + num(sw.seconds(), 3) + " s");
    ModelConfig mc;
    mc.n_classes = e.class_ids.size();
    mc.gate_mode = e.mode;
    mc.init_seed = e.seed;
    GfNet<float> model(mc);
    TrainOptions to;
    to.seed = e.seed;
    to.eval_jobs = ctx.jobs;
    train(model, r.cache, r.z, r.split.train, r.split.val, to, nullptr, [&](const EpochLog& l) {
      log(ctx, e.name + " epoch " + std::to_string(l.epoch) + " loss " + num(l.mean_loss) + " val " +
                   (l.val_accuracy ? num(*l.val_accuracy) : std::string("-")) + " (" + num(l.seconds, 3) + " s)");
    });
    r.report = evaluate(model, r.cache, r.z, r.split.test, r.data.manifest.jsr_grid, ctx.jobs);
    r.seconds = sw.seconds();
    log(ctx, summary_text(r.report));
    out.push_back(std::move(r));
  }
  return out;
}

// {CWI, LChirp Wide Fast, FH, PJ, BLGNI, QPSK}
const std::vector<int> kDeskClasses{19, 8, 18, 17, 20, 1};

// ---------------------------------------------------------------------------
// 7. Desk training

Outcome ac7(const Context& ctx) {
  const auto r = run_experiments(ctx, {{"desk", kDeskClasses, {30.0, 40.0, 50.0}, 200, 50, 7}})[0];
  const bool pass = r.report.accuracy >= 0.95;
  return {pass, "6 classes x JSR {30,40,50} dB, 200 train + 50 test per stratum, 30 epochs: test accuracy " +
                    num(r.report.accuracy) + " (limit 0.95); " + mins(r.seconds)};
}

// ---------------------------------------------------------------------------
// 8. Modality crossing

double bucket_accuracy(const EvalReport& r, double jsr) {
  for (const auto& b : r.buckets)
    if (b.jsr_db == jsr && b.accuracy) return *b.accuracy;
  throw InvalidArgument("no test samples at JSR " + num(jsr));
}

Outcome ac8(const Context& ctx) {
  std::vector<int> all;
  for (int c = 0; c < kNumClasses; ++c) all.push_back(c);
  const auto r = run_experiments(ctx, {{"iq-only", all, {10.0, 50.0}, 100, 30, 8, GateMode::kForceIq},
                                       {"stft-only", all, {10.0, 50.0}, 100, 30, 8, GateMode::kForceStft}});
  const double iq10 = bucket_accuracy(r[0].report, 10), iq50 = bucket_accuracy(r[0].report, 50);
  const double st10 = bucket_accuracy(r[1].report, 10), st50 = bucket_accuracy(r[1].report, 50);
  const bool pass = st10 >= iq10 && iq50 >= st50;
  return {pass, "21 classes, 100 train + 30 test per stratum: 10 dB STFT-only " + num(st10) + " vs IQ-only " + num(iq10) +
                    "; 50 dB IQ-only " + num(iq50) + " vs STFT-only " + num(st50) + "; " +
                    mins(r[0].seconds + r[1].seconds)};
}

// ---------------------------------------------------------------------------
// 9. Gate trend

Outcome ac9(const Context& ctx) {
  const auto r = run_experiments(ctx, {{"gate-trend", kDeskClasses, jsr_range(kJsrMinDb, jsr_db_from_index(kNumJsrLevels - 1), kJsrStepDb), 30, 10, 9}})[0];
  auto mean_g = [&](double lo, double hi) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& b : r.report.buckets)
      if (b.jsr_db >= lo && b.jsr_db <= hi) {
        s += b.g.mean * static_cast<double>(b.g.n);
        n += b.g.n;
      }
    return s / static_cast<double>(n);
  };
  const double low = mean_g(10, 20), high = mean_g(40, 50);
  const bool pass = low > high;
  return {pass, "6 classes x 21 JSR levels, 30 train + 10 test per stratum: mean g " + num(low) + " at 10-20 dB vs " +
                    num(high) + " at 40-50 dB (test accuracy " + num(r.report.accuracy) + "); " + mins(r.seconds)};
}

// ---------------------------------------------------------------------------
// 10. Ambiguity

Outcome ac10(const Context& ctx) {
  const auto r = ambiguity_demo(40.0, 100, 0, ctx.jobs);
  log(ctx, ambiguity_verdict(r));
  const bool pass = ambiguity_holds(r);
  return {pass, "40 dB, n = 100: spectrogram distance " + num(r.spectrogram_distance) + " vs baseline " +
                    num(r.awgn_baseline) + " (limit " + num(kAmbiguityBaselineFactor) + "x); kurtosis gap " +
                    num(r.kurtosis_gap) + " (limit " + num(kAmbiguityMinKurtosisGap) + ")"};
}

// ---------------------------------------------------------------------------
// 11. Reliability crossing

Outcome ac11(const Context& ctx) {
  DiscriminabilityOptions o;
  o.jobs = ctx.jobs;
  const auto c = reliability_curve({10.0, 50.0}, class_source(5), class_source(20), o);
  log(ctx, reliability_verdict(c));
  const auto& lo = c.points[0];
  const auto& hi = c.points[1];
  bool identities = optimal_alpha(lo.r_iq, lo.r_iq) == 0.5 && optimal_alpha(hi.r_stft, hi.r_stft) == 0.5;
  for (const auto& p : c.points) identities = identities && optimal_alpha(p.r_iq, p.r_stft) + optimal_alpha(p.r_stft, p.r_iq) == 1.0;
  const bool pass = reliability_crosses(c) && identities;
  return {pass, "64-QAM vs BLGNI, n = " + std::to_string(o.n) + ": 10 dB R_S " + num(lo.r_stft) + " vs R_I " +
                    num(lo.r_iq) + "; 50 dB R_I " + num(hi.r_iq) + " vs R_S " + num(hi.r_stft) + "; alpha* identities " +
                    (identities ? "exact" : "VIOLATED")};
}

const std::map<int, std::pair<const char*, std::function<Outcome(const Context&)>>>& criteria() {
  static const std::map<int, std::pair<const char*, std::function<Outcome(const Context&)>>> m = {
      {1, {"determinism", ac1}},        {2, {"power calibration", ac2}}, {3, {"link budget", ac3}},
      {4, {"STFT", ac4}},               {5, {"gradient suite", ac5}},    {6, {"metric oracle", ac6}},
      {7, {"desk training", ac7}},      {8, {"modality crossing", ac8}}, {9, {"gate trend", ac9}},
      {10, {"ambiguity", ac10}},        {11, {"reliability crossing", ac11}},
  };
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> which;
  Context ctx;
  ctx.work = std::filesystem::temp_directory_path() / "jamlab_acceptance";
  app.add_option("-c,--criterion", which, "Criterion number(s) to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("-j,--jobs", ctx.jobs, "Worker threads for generation and evaluation")->check(CLI::Range(1u, 256u));
  app.add_flag("-v,--verbose", ctx.verbose, "Print progress to stderr");
  app.add_option("--work-dir", ctx.work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  if (which.empty())
    for (const auto& [k, v] : criteria()) which.push_back(k);

  std::filesystem::create_directories(ctx.work);
  bool all = true;
  for (int k : which) {
    const auto& [name, fn] = criteria().at(k);
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "AC" << std::setw(2) << std::setfill('0') << k << std::setfill(' ')
              << ' ' << name << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
