#pragma once

// The `jamlab` command-line tool. Subcommands:
//   generate       synthesize a dataset directory
//   train          train a model on a dataset
//   eval           evaluate a checkpoint, optionally bucketed by JSR
//   report-gates   per-JSR gate statistics and per-sample gate values
//   check          ambiguity | reliability theory checks
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jamlab/config.hpp"
#include "jamlab/dataset_io.hpp"
#include "jamlab/theory.hpp"
#include "jamlab/training.hpp"

namespace jamlab::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int parse_class(const std::string& s) {
  const auto id = class_id_from_name(s);
  if (!id) throw UsageError("unknown jamming class '" + s + "'");
  return *id;
}

inline std::vector<int> parse_classes(const std::vector<std::string>& items) {
  std::vector<int> out;
  std::set<int> seen;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      const int id = parse_class(tok);
      if (seen.insert(id).second) out.push_back(id);
    }
  }
  if (out.empty()) throw UsageError("empty class list");
  return out;
}

/// Refuses to overwrite `dir` unless `force`; with force only a directory
/// that already looks like our output (marker file present) is removed.
inline void prepare_output(const fs::path& dir, bool force, const char* marker) {
  if (fs::exists(dir)) {
    if (!force) throw UsageError(dir.string() + " exists; pass --force to overwrite");
    if (fs::is_directory(dir) && !fs::is_empty(dir) && !fs::exists(dir / marker))
      throw UsageError(dir.string() + " is not a jamlab output directory; refusing to remove it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

inline void write_text(const fs::path& p, const std::string& text) { detail::write_text(p, text); }

/// --jobs, else JAMLAB_JOBS, else nothing.
inline std::optional<unsigned> jobs_override(std::optional<unsigned> flag) {
  if (flag) return flag;
  if (const char* v = std::getenv("JAMLAB_JOBS")) {
    try {
      const long n = std::stol(v);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("JAMLAB_JOBS must be a positive integer, got '") + v + "'");
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::vector<std::string> classes;
  double jsr_min = kJsrMinDb, jsr_max = jsr_db_from_index(kNumJsrLevels - 1), jsr_step = kJsrStepDb;
  std::int64_t per_class = 100;
  std::optional<std::int64_t> test_per_class;
  std::int64_t seed_base = 0;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  std::string config, out;
  bool force = false;
};

inline int cmd_generate(const GenerateArgs& a, unsigned jobs, std::ostream& out) {
  GenerateOptions o;
  if (a.classes.empty()) {
    for (int c = 0; c < kNumClasses; ++c) o.class_ids.push_back(c);
  } else {
    o.class_ids = parse_classes(a.classes);
  }
  o.jsr_grid = jsr_range(a.jsr_min, a.jsr_max, a.jsr_step);
  o.train_per_stratum = a.per_class;
  o.test_per_stratum = a.test_per_class.value_or(a.per_class / 2);
  o.seed_base = a.seed_base;
  o.jobs = jobs;
  if (!a.config.empty()) o.budget = load_run_config(a.config).link_budget;
  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0)) throw UsageError("--val-fraction must be in [0, 1)");
  auto plan = plan_dataset(o);
  prepare_output(a.out, a.force, kManifestFileName);
  Dataset d = generate_dataset(o);
  d.manifest.val_fraction = a.val_fraction;
  d.manifest.split_seed = a.split_seed;
  write_dataset(d, a.out);
  out << "wrote " << d.records.size() << " records in " << plan.strata.size() << " strata to " << a.out << "\n";
  out << "classes: " << plan.class_ids.size() << ", JSR levels: " << plan.jsr_grid.size() << " ("
      << plan.jsr_grid.front() << " to " << plan.jsr_grid.back() << " dB)\n";
  out << "per stratum: " << o.train_per_stratum << " train pool + " << o.test_per_stratum << " test pool\n";
  for (const auto& s : d.manifest.strata)
    out << "  " << s.file << ": " << s.count << " (class " << s.class_id << ", " << s.jsr_db << " dB)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, out;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> gate_mode;
  std::optional<std::size_t> batch_size;
  bool force = false;
  bool quiet = false;
};

inline constexpr const char* kRunConfigFile = "config.json";

/// Errors when the configuration contradicts what the dataset was built with.
inline void check_manifest(const RunConfig& c, const DatasetManifest& m) {
  if (c.link_budget_set && (c.link_budget.gnss_power_dbw != m.budget.gnss_power_dbw ||
                            c.link_budget.noise_density_dbw_hz != m.budget.noise_density_dbw_hz))
    throw InvalidArgument("config link_budget differs from the dataset's");
  if (c.n_classes_set && c.model.n_classes != m.class_ids.size())
    throw InvalidArgument("config model.n_classes is " + std::to_string(c.model.n_classes) + " but the dataset has " +
                          std::to_string(m.class_ids.size()) + " classes");
  if (m.val_fraction && *m.val_fraction != c.training.val_fraction)
    throw InvalidArgument("config training.val_fraction differs from the dataset's stored split");
}

inline int cmd_train(const TrainArgs& a, std::optional<unsigned> jobs_flag, std::ostream& out) {
  RunConfig c;
  if (!a.config.empty()) c = load_run_config(a.config);
  if (a.epochs) c.training.epochs = *a.epochs;
  if (a.seed) c.seed = *a.seed;
  if (a.batch_size) c.training.batch_size = *a.batch_size;
  if (a.gate_mode) c.model.gate_mode = gate_mode_from_name(*a.gate_mode);
  if (jobs_flag) c.jobs = *jobs_flag;
  if (!a.data.empty()) c.data_path = a.data;
  if (!a.out.empty()) c.out_path = a.out;
  if (!c.data_path) throw UsageError("no dataset: pass --data or set paths.data");
  if (!c.out_path) throw UsageError("no output directory: pass --out or set paths.out");
  if (c.training.epochs < 0) throw UsageError("--epochs must be non-negative");
  if (c.training.batch_size == 0) throw UsageError("--batch-size must be positive");

  const auto manifest = read_manifest(*c.data_path);
  if (!c.val_fraction_set && manifest.val_fraction) c.training.val_fraction = *manifest.val_fraction;
  check_manifest(c, manifest);
  const std::uint64_t split_seed = manifest.split_seed.value_or(c.seed);
  prepare_output(*c.out_path, a.force, kRunConfigFile);

  const Dataset d = read_dataset(*c.data_path);
  const auto cache = build_feature_cache(d, c.jobs);
  const auto split = make_split(d.manifest, c.training.val_fraction, split_seed);
  const auto z = fit_normalizer(cache, split.train);
  c.model.n_classes = d.manifest.class_ids.size();
  if (!c.init_seed_set) c.model.init_seed = c.seed;
  GfNet<float> model(c.model);
  TrainOptions to;
  to.epochs = c.training.epochs;
  to.batch_size = c.training.batch_size;
  to.seed = c.seed;
  to.warmup_epochs = c.training.warmup_epochs;
  to.base_lr = c.training.base_lr;
  to.weight_decay = c.training.weight_decay;
  to.eval_jobs = c.jobs;
  if (!a.quiet)
    out << split.train.size() << " train, " << split.val.size() << " val, " << split.test.size() << " test\n";
  nn::OptimizerState<float> opt(model.params());
  const auto res = train(model, cache, z, split.train, split.val, to, &opt, [&](const EpochLog& l) {
    if (!a.quiet)
      out << "epoch " << l.epoch << " loss " << detail::fmt(l.mean_loss) << " val "
          << (l.val_accuracy ? detail::fmt(*l.val_accuracy) : std::string("-")) << " lr " << detail::fmt(l.lr) << "\n";
  });

  const fs::path dir = *c.out_path;
  nlohmann::json extra = {{"dataset_hash", d.manifest.config_hash()},
                          {"val_fraction", c.training.val_fraction},
                          {"split_seed", split_seed},
                          {"seed", c.seed},
                          {"best_epoch", res.best_epoch}};
  save_model(dir / "checkpoint", model, z, d.manifest.class_ids, &opt, extra);
  std::ostringstream loss, ep;
  loss << "step,loss\n";
  for (std::size_t i = 0; i < res.batch_losses.size(); ++i) loss << i << "," << detail::fmt(res.batch_losses[i], 9) << "\n";
  ep << "epoch,mean_loss,val_accuracy,lr,seconds\n";
  for (const auto& l : res.epochs)
    ep << l.epoch << "," << detail::fmt(l.mean_loss, 9) << "," << detail::opt_fmt(l.val_accuracy) << ","
       << detail::fmt(l.lr, 9) << "," << detail::fmt(l.seconds) << "\n";
  write_text(dir / "loss.csv", loss.str());
  write_text(dir / "epochs.csv", ep.str());
  write_text(dir / kRunConfigFile, run_config_to_json(c).dump(2) + "\n");
  out << "checkpoint " << (dir / "checkpoint").string() << " (hash " << checkpoint_hash(dir / "checkpoint") << ")";
  if (res.best_epoch >= 0) {
    out << ", best epoch " << res.best_epoch;
    if (res.best_val_accuracy) out << " val " << detail::fmt(*res.best_val_accuracy);
  }
  out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval and report-gates

struct LoadedEval {
  TrainedModel model;
  Dataset data;
  FeatureCache cache;
  std::vector<std::size_t> rows;
};

/// Accepts either the training output directory or the checkpoint itself.
inline fs::path checkpoint_dir(const fs::path& p) {
  return fs::exists(p / "checkpoint" / nn::kCheckpointBlob) ? p / "checkpoint" : p;
}

inline LoadedEval load_for_eval(const std::string& ckpt, const std::string& data, const std::string& split,
                                unsigned jobs) {
  LoadedEval e;
  e.model = load_model(checkpoint_dir(ckpt));
  e.data = read_dataset(data);
  if (e.data.manifest.class_ids != e.model.class_ids)
    throw InvalidArgument("dataset classes do not match the checkpoint's class list");
  e.cache = build_feature_cache(e.data, jobs, e.model.model->config().image_size);
  if (split == "all") {
    e.rows.resize(e.data.records.size());
    std::iota(e.rows.begin(), e.rows.end(), std::size_t{0});
    return e;
  }
  const double vf = e.model.extra.value("val_fraction", e.data.manifest.val_fraction.value_or(0.0));
  const auto seed = e.model.extra.value("split_seed", e.data.manifest.split_seed.value_or(0));
  auto s = make_split(e.data.manifest, vf, seed);
  if (split == "train") e.rows = std::move(s.train);
  else if (split == "val") e.rows = std::move(s.val);
  else if (split == "test") e.rows = std::move(s.test);
  else throw UsageError("--split must be train, val, test or all");
  if (e.rows.empty()) throw InvalidArgument("the " + split + " split is empty");
  return e;
}

struct EvalArgs {
  std::string ckpt, data, split = "test", out;
  bool bucket_by_jsr = false;
};

inline int cmd_eval(const EvalArgs& a, unsigned jobs, std::ostream& out) {
  const auto e = load_for_eval(a.ckpt, a.data, a.split, jobs);
  const std::vector<double> grid = a.bucket_by_jsr ? e.data.manifest.jsr_grid : std::vector<double>{};
  const auto r = evaluate(*e.model.model, e.cache, e.model.normalizer, e.rows, grid, jobs);
  if (!a.out.empty()) write_report(r, a.out);
  out << a.split << " split, " << e.rows.size() << " samples\n" << summary_text(r);
  return kExitOk;
}

struct GateArgs {
  std::string ckpt, data, split = "test", out, samples;
};

inline int cmd_report_gates(const GateArgs& a, unsigned jobs, std::ostream& out) {
  const auto e = load_for_eval(a.ckpt, a.data, a.split, jobs);
  const auto p = predict_rows(*e.model.model, e.cache, e.model.normalizer, e.rows, jobs);
  const auto r = make_report(e.cache, e.rows, p, e.data.manifest.jsr_grid);
  const auto csv = gate_csv(r);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "wrote " << a.out << "\n";
  }
  if (!a.samples.empty()) write_text(a.samples, gate_samples_csv(e.cache, e.rows, p));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check

struct CheckArgs {
  std::vector<double> jsr;
  std::size_t n = 0;  // 0 -> per-check default
  std::uint64_t seed = 0;
  std::string data, class_a = "64qam", class_b = "blgni", out;
  std::size_t band_bins = SummaryOptions{}.band_bins, top_k = SummaryOptions{}.top_k;
  bool matched = false;
};

inline int cmd_check_ambiguity(const CheckArgs& a, unsigned jobs, std::ostream& out) {
  const std::vector<double> grid = a.jsr.empty() ? std::vector<double>{10.0} : a.jsr;
  std::vector<AmbiguityResult> rs;
  for (double j : grid) {
    jsr_index_from_db(j);
    rs.push_back(ambiguity_demo(j, a.n ? a.n : 100, a.seed, jobs));
    out << ambiguity_verdict(rs.back()) << "\n";
  }
  if (!a.out.empty()) write_text(a.out, ambiguity_csv(rs));
  bool all = true;
  for (const auto& r : rs) all = all && ambiguity_holds(r);
  out << (all ? "verdict: spectrograms ambiguous, IQ statistics separate"
              : "verdict: ambiguity not reproduced at every JSR")
      << "\n";
  return kExitOk;
}

inline int cmd_check_reliability(const CheckArgs& a, unsigned jobs, std::ostream& out) {
  DiscriminabilityOptions o;
  o.seed = a.seed;
  o.jobs = jobs;
  o.summary = {a.band_bins, a.top_k};
  if (a.n) o.n = a.n;
  const int ca = parse_class(a.class_a), cb = parse_class(a.class_b);
  if (ca == cb) throw UsageError("--class-a and --class-b must differ");
  ReliabilityCurve c;
  if (!a.data.empty()) {
    if (!a.jsr.empty()) throw UsageError("--jsr cannot be combined with --data; the dataset fixes the grid");
    c = reliability_curve_from_dataset(read_dataset(a.data), ca, cb, o);
  } else {
    std::vector<double> grid = a.jsr;
    if (grid.empty()) grid = {10.0, 50.0};
    for (double j : grid) jsr_index_from_db(j);
    if (a.matched) {
      c = reliability_curve(grid, matched_qam_source(), matched_blgni_source(), o);
    } else {
      c = reliability_curve(grid, class_source(ca), class_source(cb), o);
    }
  }
  const auto csv = reliability_csv(c);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
  }
  out << jamming_class(ca).name << " vs " << jamming_class(cb).name << "\n" << reliability_verdict(c) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Jamming classification lab: dataset synthesis, gated fusion training and theory checks", "jamlab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  std::optional<unsigned> jobs;
  app.add_option("-j,--jobs", jobs, "Worker threads (falls back to JAMLAB_JOBS, then 1)")
      ->check(CLI::PositiveNumber);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Synthesize a dataset directory");
  gen->add_option("--classes", ga.classes, "Class slugs, names or ids, comma separated (default: all 21)");
  gen->add_option("--jsr-min", ga.jsr_min, "Lowest JSR in dB")->capture_default_str();
  gen->add_option("--jsr-max", ga.jsr_max, "Highest JSR in dB")->capture_default_str();
  gen->add_option("--jsr-step", ga.jsr_step, "JSR step in dB")->capture_default_str();
  gen->add_option("--per-class", ga.per_class, "Training-pool snapshots per class and JSR")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--test-per-class", ga.test_per_class, "Test-pool snapshots per class and JSR (default: half of --per-class)")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--seed-base", ga.seed_base, "First sample index of every stratum")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--val-fraction", ga.val_fraction, "Validation fraction stored with the dataset")->capture_default_str();
  gen->add_option("--split-seed", ga.split_seed, "Seed of the stored validation split")->capture_default_str();
  gen->add_option("--config", ga.config, "Run config supplying the link budget")->check(CLI::ExistingFile);
  gen->add_option("-o,--out", ga.out, "Output directory")->required();
  gen->add_flag("--force", ga.force, "Replace an existing dataset directory");

  TrainArgs ta;
  std::optional<std::string> gate_mode;
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("-c,--config", ta.config, "Run config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--data", ta.data, "Dataset directory (overrides paths.data)");
  tr->add_option("-o,--out", ta.out, "Output directory (overrides paths.out)");
  tr->add_option("--epochs", ta.epochs, "Override training.epochs");
  tr->add_option("--seed", ta.seed, "Override seed");
  tr->add_option("--batch-size", ta.batch_size, "Override training.batch_size");
  tr->add_option("--gate-mode", gate_mode, "Override model.gate_mode")
      ->check(CLI::IsMember({"learned", "force_iq", "force_stft"}));
  tr->add_flag("--force", ta.force, "Replace an existing output directory");
  tr->add_flag("-q,--quiet", ta.quiet, "Only print the final line");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ea.ckpt, "Training output or checkpoint directory")->required();
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--split", ea.split, "train, val, test or all")->capture_default_str();
  ev->add_flag("--bucket-by-jsr", ea.bucket_by_jsr, "Report accuracy and gates per JSR level");
  ev->add_option("-o,--out", ea.out, "Directory for the CSV report");

  GateArgs rg;
  auto* gates = app.add_subcommand("report-gates", "Gate statistics per JSR level");
  gates->add_option("--ckpt", rg.ckpt, "Training output or checkpoint directory")->required();
  gates->add_option("--data", rg.data, "Dataset directory")->required();
  gates->add_option("--split", rg.split, "train, val, test or all")->capture_default_str();
  gates->add_option("-o,--out", rg.out, "CSV file (default: stdout)");
  gates->add_option("--samples", rg.samples, "Also write per-sample gate values to this CSV file");

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Theory checks");
  check->require_subcommand(1);
  auto* amb = check->add_subcommand("ambiguity", "64-QAM versus matched BLGNI: spectrogram and IQ statistics");
  amb->add_option("--jsr", ca.jsr, "JSR levels in dB (default: 10)");
  amb->add_option("--n", ca.n, "Snapshots per batch (default: 100)");
  amb->add_option("--seed", ca.seed, "Seed")->capture_default_str();
  amb->add_option("-o,--out", ca.out, "CSV file");
  auto* rel = check->add_subcommand("reliability", "Gaussian-KL discriminability of the IQ and STFT summaries");
  rel->add_option("--jsr", ca.jsr, "JSR levels in dB for generated snapshots (default: 10 50)");
  rel->add_option("--data", ca.data, "Use the snapshots of a dataset; one row per JSR in it");
  rel->add_option("--class-a", ca.class_a, "First class")->capture_default_str();
  rel->add_option("--class-b", ca.class_b, "Second class")->capture_default_str();
  rel->add_flag("--matched", ca.matched, "Use the spectrum-matched 64-QAM and BLGNI generators");
  rel->add_option("--n", ca.n, "Generated snapshots per class and JSR (default: 300)");
  rel->add_option("--seed", ca.seed, "Seed")->capture_default_str();
  rel->add_option("--band-bins", ca.band_bins, "STFT bins per band")->capture_default_str();
  rel->add_option("--top-k", ca.top_k, "Strongest bands kept")->capture_default_str();
  rel->add_option("-o,--out", ca.out, "CSV file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto jobs_set = jobs_override(jobs);
    const unsigned n_jobs = jobs_set.value_or(1);
    if (*gen) return cmd_generate(ga, n_jobs, out);
    if (*tr) {
      ta.gate_mode = gate_mode;
      return cmd_train(ta, jobs_set, out);
    }
    if (*ev) return cmd_eval(ea, n_jobs, out);
    if (*gates) return cmd_report_gates(rg, n_jobs, out);
    if (*amb) return cmd_check_ambiguity(ca, n_jobs, out);
    if (*rel) return cmd_check_reliability(ca, n_jobs, out);
  } catch (const UsageError& e) {
    err << "jamlab: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "jamlab: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace jamlab::cli
