#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "jamlab/dataset_io.hpp"

using namespace jamlab;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("jamlab_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<SnapshotRecord> random_records(std::size_t n, int class_id, double jsr, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<SnapshotRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].class_id = class_id;
    out[i].jsr_db = jsr;
    out[i].sample_idx = static_cast<std::int64_t>(i);
    out[i].seed = derive_seed({class_id, jsr_index_from_db(jsr), out[i].sample_idx});
    out[i].signal.resize(kSnapshotLength);
    for (auto& v : out[i].signal)
      v = {std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()) & 0xBF7FFFFFu),
           static_cast<float>(rng.normal())};
  }
  return out;
}

bool bit_identical(const std::vector<cfloat>& a, const std::vector<cfloat>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(cfloat)) == 0;
}

void corrupt(const fs::path& p, std::size_t offset, char value) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(value);
}

}  // namespace

TEST(StratumFile, EmptyListIsHeaderOnly) {
  TempDir t;
  write_stratum_file(t.path / "e.bin", 4, 12.0, {});
  EXPECT_EQ(fs::file_size(t.path / "e.bin"), kStratumHeaderBytes);
  auto [h, sig] = read_stratum_file(t.path / "e.bin");
  EXPECT_EQ(h.count, 0u);
  EXPECT_EQ(h.class_id, 4);
  EXPECT_EQ(h.jsr_centidb, 1200);
  EXPECT_TRUE(sig.empty());
}

TEST(StratumFile, OneRecordSize) {
  TempDir t;
  write_stratum_file(t.path / "one.bin", 0, 10.0, random_records(1, 0, 10.0, 1));
  EXPECT_EQ(fs::file_size(t.path / "one.bin"), 18u + 32000u);
}

TEST(StratumFile, HeaderBytesAreLittleEndian) {
  TempDir t;
  write_stratum_file(t.path / "h.bin", 19, 50.0, random_records(3, 19, 50.0, 2));
  std::ifstream in(t.path / "h.bin", std::ios::binary);
  unsigned char b[18];
  in.read(reinterpret_cast<char*>(b), 18);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(b), 5), "CGI21");
  EXPECT_EQ(b[5], 1);
  EXPECT_EQ(b[6], 0);
  EXPECT_EQ(b[7], 19);
  EXPECT_EQ(b[8] | (b[9] << 8), 5000);
  EXPECT_EQ(b[10], 3);
  EXPECT_EQ(b[14] | (b[15] << 8), 4000);
}

TEST(StratumFile, FiftyRecordRoundTripIsBitExact) {
  TempDir t;
  const auto recs = random_records(50, 7, 36.0, 3);
  write_stratum_file(t.path / "r.bin", 7, 36.0, recs);
  auto [h, sig] = read_stratum_file(t.path / "r.bin");
  ASSERT_EQ(sig.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_TRUE(bit_identical(sig[i], recs[i].signal)) << i;
}

TEST(StratumFile, DistinctDiagnostics) {
  TempDir t;
  const auto p = t.path / "d.bin";
  auto code_of = [&](auto mutate) {
    write_stratum_file(p, 1, 20.0, random_records(2, 1, 20.0, 4));
    mutate();
    try {
      read_stratum_file(p);
    } catch (const DatasetError& e) {
      return e.code();
    }
    return DatasetErrc::kIo;
  };
  EXPECT_EQ(code_of([&] { corrupt(p, 0, 'X'); }), DatasetErrc::kBadMagic);
  EXPECT_EQ(code_of([&] { corrupt(p, 5, 9); }), DatasetErrc::kBadVersion);
  EXPECT_EQ(code_of([&] { fs::resize_file(p, fs::file_size(p) - 5); }), DatasetErrc::kTruncated);
  EXPECT_EQ(code_of([&] { fs::resize_file(p, 12); }), DatasetErrc::kTruncated);
  EXPECT_EQ(code_of([&] { corrupt(p, 10, 1); }), DatasetErrc::kCountLengthMismatch);
  EXPECT_THROW(read_stratum_file(t.path / "missing.bin"), DatasetError);
}

TEST(StratumFile, RejectsMixedStrata) {
  TempDir t;
  auto recs = random_records(2, 1, 20.0, 5);
  recs[1].class_id = 2;
  EXPECT_THROW(write_stratum_file(t.path / "m.bin", 1, 20.0, recs), DatasetError);
}

TEST(Dataset, GenerateWriteReadRoundTrip) {
  TempDir t;
  GenerateOptions o;
  o.class_ids = {19, 20, 3};
  o.jsr_grid = {10.0, 30.0};
  o.train_per_stratum = 4;
  o.test_per_stratum = 2;
  o.seed_base = 11;
  const auto d = generate_dataset(o);
  ASSERT_EQ(d.records.size(), 3u * 2u * 6u);
  write_dataset(d, t.path);
  validate_dataset(t.path);
  const auto back = read_dataset(t.path);
  EXPECT_EQ(back.manifest, d.manifest);
  ASSERT_EQ(back.records.size(), d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    EXPECT_TRUE(bit_identical(back.records[i].signal, d.records[i].signal));
    EXPECT_EQ(back.records[i].seed, d.records[i].seed);
    EXPECT_EQ(back.records[i].sample_idx, d.records[i].sample_idx);
  }
  // Regenerating any single record from its seed triple gives the same bits.
  const auto& r = back.records[17];
  LinkBudget b;
  b.jsr_db = r.jsr_db;
  EXPECT_TRUE(bit_identical(compose_snapshot(r.class_id, b, r.sample_idx).signal, r.signal));
}

TEST(Dataset, WorkerCountDoesNotChangeOutput) {
  GenerateOptions o;
  o.class_ids = {0, 17};
  o.jsr_grid = {20.0, 22.0};
  o.train_per_stratum = 2;
  o.test_per_stratum = 1;
  const auto a = generate_dataset(o);
  o.jobs = 3;
  const auto b = generate_dataset(o);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i], b.records[i]);
}

TEST(Dataset, ManifestCountMismatchIsDetected) {
  TempDir t;
  GenerateOptions o;
  o.class_ids = {19};
  o.jsr_grid = {40.0};
  o.train_per_stratum = 2;
  o.test_per_stratum = 1;
  const auto d = generate_dataset(o);
  write_dataset(d, t.path);
  write_stratum_file(t.path / d.manifest.strata[0].file, 19, 40.0,
                     std::vector<SnapshotRecord>(d.records.begin(), d.records.begin() + 2));
  try {
    validate_dataset(t.path);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.code(), DatasetErrc::kManifestMismatch);
  }
  EXPECT_THROW(read_dataset(t.path), DatasetError);
}

TEST(Manifest, TamperedHashIsRejected) {
  GenerateOptions o;
  o.class_ids = {2};
  o.jsr_grid = {10.0};
  auto text = manifest_to_jsonl(plan_dataset(o));
  EXPECT_NO_THROW(manifest_from_jsonl(text));
  const auto pos = text.find("\"seed_base\":0");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "\"seed_base\":1");
  EXPECT_THROW(manifest_from_jsonl(text), DatasetError);
  EXPECT_THROW(manifest_from_jsonl("{\"type\":\"bogus\"}\n"), DatasetError);
  EXPECT_THROW(manifest_from_jsonl("not json\n"), DatasetError);
}

TEST(Split, FractionZeroGivesEmptyVal) {
  GenerateOptions o;
  o.class_ids = {0, 1};
  o.jsr_grid = {10.0};
  const auto s = make_split(plan_dataset(o), 0.0, 1);
  EXPECT_TRUE(s.val.empty());
  EXPECT_EQ(s.train.size(), 200u);
  EXPECT_EQ(s.test.size(), 100u);
}

TEST(Split, TwentyPercentPerStratum) {
  GenerateOptions o;
  o.class_ids = {0, 5, 20};
  o.jsr_grid = {10.0, 12.0, 50.0};
  const auto m = plan_dataset(o);
  const auto s = make_split(m, 0.2, 9);
  std::map<std::size_t, int> per_stratum;
  for (auto i : s.val) per_stratum[i / 150]++;
  ASSERT_EQ(per_stratum.size(), 9u);
  for (const auto& [k, n] : per_stratum) EXPECT_EQ(n, 20);
}

TEST(Split, SetsPartitionTheDataAndTestNeverTouchesTrainPool) {
  GenerateOptions o;
  o.class_ids = {3, 9, 18};
  o.jsr_grid = {20.0, 40.0};
  o.train_per_stratum = 7;
  o.test_per_stratum = 3;
  o.seed_base = 5;
  const auto m = plan_dataset(o);
  const auto s = make_split(m, 0.3, 4);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto i : *part) EXPECT_TRUE(all.insert(i).second) << "duplicate " << i;
  EXPECT_EQ(all.size(), m.total_records());
  EXPECT_EQ(*all.rbegin(), m.total_records() - 1);
  // Map positions back to (stratum, sample index).
  auto sample_of = [&](std::size_t pos) {
    const auto& st = m.strata[pos / 10];
    return std::pair{pos / 10, st.sample_at(pos % 10)};
  };
  for (auto i : s.test) {
    const auto [si, idx] = sample_of(i);
    EXPECT_GE(idx, m.strata[si].test_pool.begin);
  }
  for (const auto* part : {&s.train, &s.val})
    for (auto i : *part) {
      const auto [si, idx] = sample_of(i);
      EXPECT_LT(idx, m.strata[si].train_pool.end);
    }
  EXPECT_EQ(s.val.size(), 6u * 2u);  // round(0.3 * 7) = 2 per stratum
}

TEST(Split, DeterministicAndSeedSensitive) {
  GenerateOptions o;
  o.class_ids = {0};
  o.jsr_grid = {10.0};
  const auto m = plan_dataset(o);
  EXPECT_EQ(make_split(m, 0.2, 1).val, make_split(m, 0.2, 1).val);
  EXPECT_NE(make_split(m, 0.2, 1).val, make_split(m, 0.2, 2).val);
  EXPECT_THROW(make_split(m, 1.0, 1), InvalidArgument);
  EXPECT_THROW(make_split(m, -0.1, 1), InvalidArgument);
}

TEST(Plan, JsrRangeAndLimits) {
  EXPECT_EQ(jsr_range(10, 50, 2).size(), 21u);
  EXPECT_EQ(jsr_range(40, 40, 2), std::vector<double>{40.0});
  EXPECT_THROW(jsr_range(11, 15, 2), InvalidArgument);
  GenerateOptions o;
  o.class_ids = {0};
  o.jsr_grid = {10.0};
  o.seed_base = kMaxSampleIndex;
  EXPECT_THROW(plan_dataset(o), InvalidArgument);
}
