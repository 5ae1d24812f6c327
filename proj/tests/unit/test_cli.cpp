#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jamlab/cli.hpp"

using namespace jamlab;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "jamlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  fs::path root;

  void SetUp() override {
    root = fs::temp_directory_path() /
           ("jamlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  std::string path(const std::string& name) const { return (root / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(root / name) << text; }

  // Two easily separated classes at one JSR.
  std::string small_data(const std::string& name = "data", const std::string& per = "8", const std::string& test = "2") {
    const auto r = run({"generate", "--classes", "cwi,blgni", "--jsr-min", "40", "--jsr-max", "40", "--per-class", per,
                        "--test-per-class", test, "--val-fraction", "0", "--out", path(name)});
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }
};

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_F(CliTest, GenerateDefaultsCoverFullGrid) {
  const auto r = run({"generate", "--per-class", "1", "--out", path("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto d = read_dataset(path("d"));
  EXPECT_EQ(d.records.size(), 441u);
  EXPECT_EQ(d.manifest.class_ids.size(), 21u);
  EXPECT_EQ(d.manifest.jsr_grid.size(), 21u);
  EXPECT_EQ(d.manifest.jsr_grid.front(), 10.0);
  EXPECT_EQ(d.manifest.jsr_grid.back(), 50.0);
  EXPECT_NE(r.out.find("441 records in 441 strata"), std::string::npos);
}

TEST_F(CliTest, GenerateSingleStratum) {
  const auto r = run({"generate", "--classes", "cwi", "--jsr-min", "40", "--jsr-max", "40", "--per-class", "4", "--out",
                      path("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(path("d"));
  ASSERT_EQ(m.strata.size(), 1u);
  EXPECT_EQ(m.strata[0].class_id, 19);
  EXPECT_EQ(m.strata[0].jsr_db, 40.0);
  EXPECT_EQ(m.strata[0].count, 6u);  // 4 train + 2 test
}

TEST_F(CliTest, GenerateOutputIsIndependentOfJobs) {
  const std::vector<std::string> base{"generate", "--classes", "fh,pj", "--jsr-min", "20", "--jsr-max", "24",
                                      "--per-class", "3"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", path("a")});
  b.insert(b.begin(), {"--jobs", "3"});
  b.insert(b.end(), {"--out", path("b")});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(read_dataset(path("a")).records, read_dataset(path("b")).records);
}

TEST_F(CliTest, ExistingOutputNeedsForce) {
  small_data("d");
  const std::vector<std::string> again{"generate", "--classes", "cwi", "--jsr-min", "40", "--jsr-max", "40",
                                       "--per-class", "2", "--out", path("d")};
  const auto r = run(again);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  auto forced = again;
  forced.push_back("--force");
  EXPECT_EQ(run(forced).code, 0);
  EXPECT_EQ(read_manifest(path("d")).strata.size(), 1u);
  // A directory that is not a dataset is never removed.
  fs::create_directories(root / "keep");
  write("keep/notes.txt", "x");
  auto other = again;
  other[other.size() - 1] = path("keep");
  other.push_back("--force");
  EXPECT_EQ(run(other).code, 2);
  EXPECT_TRUE(fs::exists(root / "keep/notes.txt"));
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"generate", "--classes", "nope", "--out", path("d")}).code, 2);
  EXPECT_EQ(run({"generate"}).code, 2);  // --out is required
  EXPECT_EQ(run({"train", "--gate-mode", "sideways"}).code, 2);
  EXPECT_EQ(run({"check"}).code, 2);
}

TEST_F(CliTest, HelpOnEverySubcommand) {
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"--help"}, {"generate", "--help"}, {"train", "--help"}, {"eval", "--help"},
        {"report-gates", "--help"}, {"check", "--help"}, {"check", "ambiguity", "--help"},
        {"check", "reliability", "--help"}}) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 0) << args.back();
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << args.back();
  }
}

TEST_F(CliTest, JobsEnvironmentFallback) {
  ::setenv("JAMLAB_JOBS", "zero", 1);
  EXPECT_EQ(run({"generate", "--classes", "cwi", "--jsr-min", "40", "--jsr-max", "40", "--per-class", "1", "--out",
                 path("d")})
                .code,
            2);
  ::setenv("JAMLAB_JOBS", "2", 1);
  EXPECT_EQ(run({"generate", "--classes", "cwi", "--jsr-min", "40", "--jsr-max", "40", "--per-class", "1", "--out",
                 path("d")})
                .code,
            0);
  ::unsetenv("JAMLAB_JOBS");
}

TEST_F(CliTest, TrainZeroEpochsWritesInitialCheckpoint) {
  const auto data = small_data();
  const auto r = run({"train", "--data", data, "--out", path("m"), "--epochs", "0", "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint", "loss.csv", "epochs.csv", "config.json"}) EXPECT_TRUE(fs::exists(root / "m" / f)) << f;
  EXPECT_EQ(read_csv(slurp(root / "m/epochs.csv")).size(), 1u);  // header only
  const auto t = load_model(root / "m/checkpoint");
  EXPECT_EQ(t.class_ids, (std::vector<int>{19, 20}));
  // The saved config round-trips through the loader.
  const auto c = load_run_config(root / "m/config.json");
  EXPECT_EQ(c.training.epochs, 0);
  EXPECT_EQ(c.model.n_classes, 2u);
}

TEST_F(CliTest, SameSeedSameCheckpointHash) {
  const auto data = small_data();
  auto train = [&](const std::string& out, const std::string& seed) {
    const auto r = run({"train", "--data", data, "--out", path(out), "--epochs", "2", "--batch-size", "8", "--seed", seed,
                        "-q"});
    EXPECT_EQ(r.code, 0) << r.err;
    return checkpoint_hash(root / out / "checkpoint");
  };
  const auto a = train("a", "5"), b = train("b", "5"), c = train("c", "6");
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST_F(CliTest, ConfigFlagsWinAndUnknownKeysFail) {
  const auto data = small_data();
  write("cfg.json", R"({"training": {"epochs": 3, "batch_size": 4}, "seed": 9, "paths": {"data": ")" + data + R"("}})");
  const auto r = run({"train", "-c", path("cfg.json"), "--epochs", "0", "--out", path("m"), "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = load_run_config(root / "m/config.json");
  EXPECT_EQ(c.training.epochs, 0);
  EXPECT_EQ(c.training.batch_size, 4u);
  EXPECT_EQ(c.seed, 9u);

  write("bad.json", R"({"training": {"epochs": 1, "learning_rate": 0.1}})");
  const auto bad = run({"train", "-c", path("bad.json"), "--data", data, "--out", path("b")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("learning_rate"), std::string::npos);
  EXPECT_FALSE(fs::exists(root / "b"));
  write("bad2.json", R"({"colour": "blue"})");
  EXPECT_EQ(run({"train", "-c", path("bad2.json"), "--data", data, "--out", path("b")}).code, 1);
}

TEST_F(CliTest, TrainRejectsManifestMismatch) {
  const auto data = small_data();
  write("n.json", R"({"model": {"n_classes": 21}})");
  auto r = run({"train", "-c", path("n.json"), "--data", data, "--out", path("m")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("n_classes"), std::string::npos);
  write("b.json", R"({"link_budget": {"gnss_power_dbw": -150}})");
  r = run({"train", "-c", path("b.json"), "--data", data, "--out", path("m")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("link_budget"), std::string::npos);
  write("v.json", R"({"training": {"val_fraction": 0.3}})");
  r = run({"train", "-c", path("v.json"), "--data", data, "--out", path("m")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("val_fraction"), std::string::npos);
}

TEST_F(CliTest, EvalOnTrainSplitOfOverfitModelIsPerfect) {
  const auto data = small_data();
  const auto t = run({"train", "--data", data, "--out", path("m"), "--epochs", "40", "--batch-size", "16", "-q"});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto r = run({"eval", "--ckpt", path("m"), "--data", data, "--split", "train", "--bucket-by-jsr", "--out",
                      path("report")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("overall accuracy: 1 (16 samples)"), std::string::npos) << r.out;
  const auto acc = read_csv(slurp(root / "report/accuracy_by_jsr.csv"));
  ASSERT_EQ(acc.size(), 2u);
  EXPECT_EQ(acc[1][0], "40");
  EXPECT_EQ(acc[1][2], "1");
  // The test split has 2 + 2 samples.
  const auto test = run({"eval", "--ckpt", path("m/checkpoint"), "--data", data});
  ASSERT_EQ(test.code, 0) << test.err;
  EXPECT_NE(test.out.find("(4 samples)"), std::string::npos) << test.out;
}

TEST_F(CliTest, EvalRejectsMismatchedClasses) {
  const auto data = small_data();
  ASSERT_EQ(run({"train", "--data", data, "--out", path("m"), "--epochs", "0", "-q"}).code, 0);
  ASSERT_EQ(run({"generate", "--classes", "cwi,fh", "--jsr-min", "40", "--jsr-max", "40", "--per-class", "2", "--out",
                 path("other")})
                .code,
            0);
  const auto r = run({"eval", "--ckpt", path("m"), "--data", path("other")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("class"), std::string::npos);
}

TEST_F(CliTest, ReportGatesOnUntrainedModelIsOneHalf) {
  ASSERT_EQ(run({"generate", "--classes", "cwi,blgni", "--jsr-min", "10", "--jsr-max", "14", "--per-class", "2",
                 "--test-per-class", "2", "--out", path("d")})
                .code,
            0);
  ASSERT_EQ(run({"train", "--data", path("d"), "--out", path("m"), "--epochs", "0", "-q"}).code, 0);
  const auto r = run({"report-gates", "--ckpt", path("m"), "--data", path("d"), "--out", path("g.csv"), "--samples",
                      path("s.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(slurp(root / "g.csv"));
  ASSERT_EQ(rows.size(), 4u);  // header + 10, 12, 14 dB
  EXPECT_EQ(rows[0][2], "g_mean");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][1], "4");
    EXPECT_EQ(rows[i][2], "0.5");
    EXPECT_EQ(rows[i][3], "0");
  }
  const auto samples = read_csv(slurp(root / "s.csv"));
  ASSERT_EQ(samples.size(), 13u);
  for (std::size_t i = 1; i < samples.size(); ++i) EXPECT_EQ(samples[i][2], "0.5");
}

TEST_F(CliTest, ReliabilityFromDataHasOneRowPerJsr) {
  ASSERT_EQ(run({"generate", "--classes", "64qam,blgni", "--jsr-min", "10", "--jsr-max", "50", "--jsr-step", "40",
                 "--per-class", "40", "--test-per-class", "10", "--out", path("d")})
                .code,
            0);
  const auto r = run({"check", "reliability", "--data", path("d"), "--out", path("r.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(slurp(root / "r.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"jsr_db", "r_iq", "r_stft", "alpha_star", "ridge"}));
  EXPECT_EQ(rows[1][0], "10");
  EXPECT_EQ(rows[2][0], "50");
  EXPECT_NE(r.out.find("alpha*"), std::string::npos);
  // A class absent from the data is an error.
  EXPECT_EQ(run({"check", "reliability", "--data", path("d"), "--class-a", "cwi"}).code, 1);
}

TEST_F(CliTest, AmbiguityCheckWritesCsvAndVerdict) {
  const auto r = run({"check", "ambiguity", "--jsr", "30", "--n", "8", "--out", path("a.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(slurp(root / "a.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], "30");
  EXPECT_NE(r.out.find("verdict:"), std::string::npos);
  EXPECT_EQ(run({"check", "ambiguity", "--jsr", "31"}).code, 1);  // off the 2 dB grid
}
