#pragma once

// On-disk datasets: one binary file per (class, JSR) stratum plus a JSON Lines
// manifest, and the train/val/test split.
//
// Stratum file layout (all little-endian):
//   offset 0   char[5]  "CGI21"
//   offset 5   u16      format version (1)
//   offset 7   u8       class id
//   offset 8   i16      JSR in hundredths of a dB
//   offset 10  u32      record count
//   offset 14  u32      samples per record
//   offset 18  f32[count * length * 2]  I/Q interleaved, record after record
//
// Manifest lines are JSON objects tagged by "type": one "header", one "class"
// per class id, one "jsr_grid", one "stratum" per file, and optionally one
// "split". See docs in README.md.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/classes.hpp"
#include "jamlab/rng.hpp"
#include "jamlab/signal.hpp"
#include "jamlab/synthesis.hpp"

namespace jamlab {

namespace fs = std::filesystem;

inline constexpr char kDatasetMagic[5] = {'C', 'G', 'I', '2', '1'};
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kStratumHeaderBytes = 18;
inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kManifestFileName = "manifest.jsonl";

enum class DatasetErrc {
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kCountLengthMismatch,
  kManifest,
  kManifestMismatch,
  kMixedStratum,
};

inline const char* to_string(DatasetErrc e) {
  switch (e) {
    case DatasetErrc::kIo: return "io";
    case DatasetErrc::kBadMagic: return "bad magic";
    case DatasetErrc::kBadVersion: return "unsupported version";
    case DatasetErrc::kTruncated: return "truncated file";
    case DatasetErrc::kCountLengthMismatch: return "count/length disagreement";
    case DatasetErrc::kManifest: return "malformed manifest";
    case DatasetErrc::kManifestMismatch: return "manifest does not match files";
    case DatasetErrc::kMixedStratum: return "records from different strata";
  }
  return "?";
}

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  DatasetErrc code() const noexcept { return code_; }

 private:
  DatasetErrc code_;
};

// ---------------------------------------------------------------------------
// Little-endian primitives

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<T>(u);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrc::kIo, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError(DatasetErrc::kIo, "write failed for " + path.string());
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stratum files

struct StratumHeader {
  std::uint16_t version = kDatasetVersion;
  int class_id = 0;
  std::int16_t jsr_centidb = 0;
  std::uint32_t count = 0;
  std::uint32_t length = static_cast<std::uint32_t>(kSnapshotLength);
};

inline std::string encode_stratum(const StratumHeader& h, const std::vector<SnapshotRecord>& records) {
  std::string out;
  out.reserve(kStratumHeaderBytes + records.size() * h.length * 8);
  out.append(kDatasetMagic, 5);
  detail::put_le<std::uint16_t>(out, h.version);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(h.class_id));
  detail::put_le<std::int16_t>(out, h.jsr_centidb);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  detail::put_le<std::uint32_t>(out, h.length);
  for (const auto& r : records)
    for (const auto& v : r.signal) {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v.real()));
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v.imag()));
    }
  return out;
}

inline StratumHeader decode_stratum_header(const std::string& bytes, const std::string& name) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kDatasetMagic, 5) != 0)
    throw DatasetError(DatasetErrc::kBadMagic, name);
  if (bytes.size() < kStratumHeaderBytes)
    throw DatasetError(DatasetErrc::kTruncated, name + ": header is " + std::to_string(bytes.size()) + " bytes");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  StratumHeader h;
  h.version = detail::get_le<std::uint16_t>(p + 5);
  if (h.version != kDatasetVersion)
    throw DatasetError(DatasetErrc::kBadVersion, name + ": version " + std::to_string(h.version));
  h.class_id = detail::get_le<std::uint8_t>(p + 7);
  h.jsr_centidb = detail::get_le<std::int16_t>(p + 8);
  h.count = detail::get_le<std::uint32_t>(p + 10);
  h.length = detail::get_le<std::uint32_t>(p + 14);
  const std::uint64_t payload = static_cast<std::uint64_t>(h.count) * h.length * 8;
  const std::uint64_t actual = bytes.size() - kStratumHeaderBytes;
  if (actual < payload)
    throw DatasetError(DatasetErrc::kTruncated, name + ": payload has " + std::to_string(actual) +
                                                    " bytes, header promises " + std::to_string(payload));
  if (actual > payload)
    throw DatasetError(DatasetErrc::kCountLengthMismatch,
                       name + ": " + std::to_string(actual - payload) + " trailing bytes beyond count x length");
  return h;
}

/// Writes one stratum file. Every record must share class, JSR and length.
inline void write_stratum_file(const fs::path& path, int class_id, double jsr_db,
                               const std::vector<SnapshotRecord>& records) {
  StratumHeader h;
  h.class_id = class_id;
  h.jsr_centidb = jsr_to_centidb(jsr_db);
  h.length = records.empty() ? static_cast<std::uint32_t>(kSnapshotLength)
                             : static_cast<std::uint32_t>(records.front().signal.size());
  for (const auto& r : records) {
    if (r.class_id != class_id || jsr_to_centidb(r.jsr_db) != h.jsr_centidb)
      throw DatasetError(DatasetErrc::kMixedStratum, path.string());
    if (r.signal.size() != h.length)
      throw DatasetError(DatasetErrc::kCountLengthMismatch, path.string() + ": records of unequal length");
  }
  detail::write_file(path, encode_stratum(h, records));
}

/// Reads the raw signals of one stratum file.
inline std::pair<StratumHeader, std::vector<std::vector<cfloat>>> read_stratum_file(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const StratumHeader h = decode_stratum_header(bytes, path.string());
  std::vector<std::vector<cfloat>> signals(h.count, std::vector<cfloat>(h.length));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kStratumHeaderBytes;
  for (auto& s : signals)
    for (auto& v : s) {
      const float re = std::bit_cast<float>(detail::get_le<std::uint32_t>(p));
      const float im = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4));
      v = {re, im};
      p += 8;
    }
  return {h, std::move(signals)};
}

// ---------------------------------------------------------------------------
// Manifest

/// Half-open range of sample indices.
struct IndexRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct StratumEntry {
  int class_id = 0;
  double jsr_db = 0.0;
  std::string file;
  std::uint32_t count = 0;
  IndexRange train_pool;  // sample indices reserved for training + validation
  IndexRange test_pool;   // allocated after the train pool

  int jsr_idx() const { return jsr_index_from_db(jsr_db); }
  std::int64_t sample_at(std::size_t i) const {
    const auto k = static_cast<std::int64_t>(i);
    return k < train_pool.size() ? train_pool.begin + k : test_pool.begin + (k - train_pool.size());
  }
  bool operator==(const StratumEntry&) const = default;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  LinkBudget budget;  // jsr_db unused; per stratum
  std::int64_t seed_base = 0;
  std::vector<double> jsr_grid;
  std::vector<int> class_ids;
  std::vector<StratumEntry> strata;
  // Split parameters when a split was stored alongside the data.
  std::optional<double> val_fraction;
  std::optional<std::uint64_t> split_seed;

  std::size_t total_records() const {
    std::size_t n = 0;
    for (const auto& s : strata) n += s.count;
    return n;
  }

  /// Hash of everything that determines the generated samples.
  std::string config_hash() const {
    nlohmann::json j = {{"gnss_power_dbw", budget.gnss_power_dbw},
                        {"noise_density_dbw_hz", budget.noise_density_dbw_hz},
                        {"seed_base", seed_base},
                        {"jsr_grid", jsr_grid},
                        {"classes", class_ids}};
    for (const auto& s : strata)
      j["strata"].push_back({s.class_id, s.jsr_db, s.train_pool.begin, s.train_pool.end,
                             s.test_pool.begin, s.test_pool.end});
    return detail::hex64(detail::fnv1a(j.dump()));
  }

  bool operator==(const DatasetManifest&) const = default;
};

inline std::string stratum_file_name(int class_id, double jsr_db) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "c%02d_%s_j%02d.bin", class_id,
                std::string(jamming_class(class_id).slug).c_str(),
                static_cast<int>(std::lround(jsr_db)));
  return buf;
}

inline std::string manifest_to_jsonl(const DatasetManifest& m) {
  using nlohmann::json;
  std::string out;
  auto line = [&out](const json& j) { out += j.dump() + "\n"; };
  line({{"type", "header"},
        {"schema_version", m.schema_version},
        {"format", "CGI21"},
        {"format_version", kDatasetVersion},
        {"sample_rate_hz", kSampleRateHz},
        {"length", kSnapshotLength},
        {"gnss_power_dbw", m.budget.gnss_power_dbw},
        {"noise_density_dbw_hz", m.budget.noise_density_dbw_hz},
        {"seed_base", m.seed_base},
        {"config_hash", m.config_hash()}});
  for (int id : m.class_ids) {
    const auto& c = jamming_class(id);
    line({{"type", "class"},
          {"id", id},
          {"name", c.name},
          {"slug", c.slug},
          {"family", family_name(c.family)}});
  }
  line({{"type", "jsr_grid"}, {"values_db", m.jsr_grid}});
  for (const auto& s : m.strata)
    line({{"type", "stratum"},
          {"class_id", s.class_id},
          {"jsr_db", s.jsr_db},
          {"file", s.file},
          {"count", s.count},
          {"train_pool", {s.train_pool.begin, s.train_pool.end}},
          {"test_pool", {s.test_pool.begin, s.test_pool.end}}});
  if (m.val_fraction && m.split_seed)
    line({{"type", "split"}, {"val_fraction", *m.val_fraction}, {"seed", *m.split_seed}});
  return out;
}

inline DatasetManifest manifest_from_jsonl(const std::string& text, const std::string& origin = "manifest") {
  using nlohmann::json;
  DatasetManifest m;
  bool have_header = false;
  std::string stored_hash;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != kManifestSchemaVersion)
          throw DatasetError(DatasetErrc::kBadVersion,
                             origin + ": manifest schema " + std::to_string(m.schema_version));
        if (j.at("length").get<std::size_t>() != kSnapshotLength ||
            j.at("sample_rate_hz").get<double>() != kSampleRateHz)
          throw DatasetError(DatasetErrc::kManifest, origin + ": unsupported snapshot geometry");
        m.budget.gnss_power_dbw = j.at("gnss_power_dbw").get<double>();
        m.budget.noise_density_dbw_hz = j.at("noise_density_dbw_hz").get<double>();
        m.seed_base = j.at("seed_base").get<std::int64_t>();
        stored_hash = j.at("config_hash").get<std::string>();
        have_header = true;
      } else if (type == "class") {
        m.class_ids.push_back(j.at("id").get<int>());
      } else if (type == "jsr_grid") {
        m.jsr_grid = j.at("values_db").get<std::vector<double>>();
      } else if (type == "stratum") {
        StratumEntry s;
        s.class_id = j.at("class_id").get<int>();
        s.jsr_db = j.at("jsr_db").get<double>();
        s.file = j.at("file").get<std::string>();
        s.count = j.at("count").get<std::uint32_t>();
        const auto tr = j.at("train_pool").get<std::vector<std::int64_t>>();
        const auto te = j.at("test_pool").get<std::vector<std::int64_t>>();
        if (tr.size() != 2 || te.size() != 2)
          throw DatasetError(DatasetErrc::kManifest, origin + ": pool ranges need two bounds");
        s.train_pool = {tr[0], tr[1]};
        s.test_pool = {te[0], te[1]};
        if (s.train_pool.size() < 0 || s.test_pool.size() < 0 ||
            static_cast<std::int64_t>(s.count) != s.train_pool.size() + s.test_pool.size())
          throw DatasetError(DatasetErrc::kManifest,
                             origin + ": stratum " + s.file + " count disagrees with its pools");
        m.strata.push_back(s);
      } else if (type == "split") {
        m.val_fraction = j.at("val_fraction").get<double>();
        m.split_seed = j.at("seed").get<std::uint64_t>();
      } else {
        throw DatasetError(DatasetErrc::kManifest, origin + ": unknown line type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw DatasetError(DatasetErrc::kManifest, origin + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw DatasetError(DatasetErrc::kManifest, origin + ": missing header line");
  if (stored_hash != m.config_hash())
    throw DatasetError(DatasetErrc::kManifest, origin + ": config hash mismatch");
  return m;
}

// ---------------------------------------------------------------------------
// Whole datasets

/// Records in manifest order: strata in manifest order, and within each
/// stratum the train pool followed by the test pool.
struct Dataset {
  DatasetManifest manifest;
  std::vector<SnapshotRecord> records;
};

struct GenerateOptions {
  std::vector<int> class_ids;
  std::vector<double> jsr_grid;
  std::int64_t train_per_stratum = 100;
  std::int64_t test_per_stratum = 50;
  std::int64_t seed_base = 0;
  LinkBudget budget;
  unsigned jobs = 1;
};

/// All JSR grid values between lo and hi inclusive with the given step.
inline std::vector<double> jsr_range(double lo_db, double hi_db, double step_db) {
  if (!(step_db > 0.0)) throw InvalidArgument("JSR step must be positive");
  if (hi_db < lo_db) throw InvalidArgument("JSR maximum below minimum");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double v = lo_db + k * step_db;
    if (v > hi_db + 1e-9) break;
    jsr_index_from_db(v);  // validates the grid
    out.push_back(v);
  }
  return out;
}

inline DatasetManifest plan_dataset(const GenerateOptions& o) {
  if (o.class_ids.empty() || o.jsr_grid.empty()) throw InvalidArgument("empty class list or JSR grid");
  if (o.train_per_stratum < 0 || o.test_per_stratum < 0 || o.seed_base < 0)
    throw InvalidArgument("negative sample counts or seed base");
  if (o.seed_base + o.train_per_stratum + o.test_per_stratum - 1 > kMaxSampleIndex)
    throw InvalidArgument("sample indices exceed the 20-bit seed lane");
  DatasetManifest m;
  m.budget = o.budget;
  m.seed_base = o.seed_base;
  m.class_ids = o.class_ids;
  m.jsr_grid = o.jsr_grid;
  for (int c : o.class_ids) {
    jamming_class(c);
    for (double jsr : o.jsr_grid) {
      jsr_index_from_db(jsr);
      StratumEntry s;
      s.class_id = c;
      s.jsr_db = jsr;
      s.file = stratum_file_name(c, jsr);
      s.train_pool = {o.seed_base, o.seed_base + o.train_per_stratum};
      s.test_pool = {s.train_pool.end, s.train_pool.end + o.test_per_stratum};
      s.count = static_cast<std::uint32_t>(o.train_per_stratum + o.test_per_stratum);
      m.strata.push_back(s);
    }
  }
  return m;
}

/// Runs f(i) for i in [0, n) on up to `jobs` threads. Each i must write only
/// its own outputs, so results never depend on the worker count.
template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& f) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<SnapshotRecord> generate_stratum(const DatasetManifest& m, const StratumEntry& s) {
  LinkBudget b = m.budget;
  b.jsr_db = s.jsr_db;
  std::vector<SnapshotRecord> out;
  out.reserve(s.count);
  for (std::size_t i = 0; i < s.count; ++i) out.push_back(compose_snapshot(s.class_id, b, s.sample_at(i)));
  return out;
}

inline Dataset generate_dataset(const GenerateOptions& o) {
  Dataset d;
  d.manifest = plan_dataset(o);
  const auto& strata = d.manifest.strata;
  std::vector<std::vector<SnapshotRecord>> parts(strata.size());
  parallel_for(strata.size(), o.jobs, [&](std::size_t i) { parts[i] = generate_stratum(d.manifest, strata[i]); });
  d.records.reserve(d.manifest.total_records());
  for (auto& p : parts)
    for (auto& r : p) d.records.push_back(std::move(r));
  return d;
}

/// Writes all stratum files and the manifest into `dir` (created if needed).
inline void write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  std::size_t pos = 0;
  for (const auto& s : d.manifest.strata) {
    if (pos + s.count > d.records.size())
      throw DatasetError(DatasetErrc::kManifestMismatch, "fewer records than the manifest lists");
    std::vector<SnapshotRecord> part(d.records.begin() + static_cast<std::ptrdiff_t>(pos),
                                     d.records.begin() + static_cast<std::ptrdiff_t>(pos + s.count));
    for (std::size_t i = 0; i < part.size(); ++i)
      if (part[i].sample_idx != s.sample_at(i))
        throw DatasetError(DatasetErrc::kManifestMismatch, s.file + ": record order differs from the manifest");
    write_stratum_file(dir / s.file, s.class_id, s.jsr_db, part);
    pos += s.count;
  }
  if (pos != d.records.size())
    throw DatasetError(DatasetErrc::kManifestMismatch, "more records than the manifest lists");
  detail::write_file(dir / kManifestFileName, manifest_to_jsonl(d.manifest));
}

inline DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path p = dir / kManifestFileName;
  return manifest_from_jsonl(detail::read_file(p), p.string());
}

/// Reads the manifest and every stratum file, checking that they agree.
inline Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.records.reserve(d.manifest.total_records());
  for (const auto& s : d.manifest.strata) {
    auto [h, signals] = read_stratum_file(dir / s.file);
    if (h.class_id != s.class_id || h.jsr_centidb != jsr_to_centidb(s.jsr_db) || h.count != s.count)
      throw DatasetError(DatasetErrc::kManifestMismatch,
                         s.file + ": header (class " + std::to_string(h.class_id) + ", count " +
                             std::to_string(h.count) + ") disagrees with the manifest");
    const int jsr_idx = s.jsr_idx();
    for (std::size_t i = 0; i < signals.size(); ++i) {
      SnapshotRecord r;
      r.signal = std::move(signals[i]);
      r.class_id = s.class_id;
      r.jsr_db = s.jsr_db;
      r.sample_idx = s.sample_at(i);
      r.seed = derive_seed({s.class_id, jsr_idx, r.sample_idx});
      d.records.push_back(std::move(r));
    }
  }
  return d;
}

/// Checks per-stratum counts against the file headers without loading data.
inline void validate_dataset(const fs::path& dir) {
  const auto m = read_manifest(dir);
  for (const auto& s : m.strata) {
    std::ifstream in(dir / s.file, std::ios::binary);
    if (!in) throw DatasetError(DatasetErrc::kIo, "missing stratum file " + s.file);
    std::string head(kStratumHeaderBytes, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    if (head.size() < 5 || std::memcmp(head.data(), kDatasetMagic, 5) != 0)
      throw DatasetError(DatasetErrc::kBadMagic, s.file);
    if (head.size() < kStratumHeaderBytes) throw DatasetError(DatasetErrc::kTruncated, s.file);
    const auto* p = reinterpret_cast<const unsigned char*>(head.data());
    if (detail::get_le<std::uint16_t>(p + 5) != kDatasetVersion) throw DatasetError(DatasetErrc::kBadVersion, s.file);
    const auto count = detail::get_le<std::uint32_t>(p + 10);
    const auto length = detail::get_le<std::uint32_t>(p + 14);
    const std::uint64_t expected = kStratumHeaderBytes + static_cast<std::uint64_t>(count) * length * 8;
    if (size < expected) throw DatasetError(DatasetErrc::kTruncated, s.file);
    if (size > expected) throw DatasetError(DatasetErrc::kCountLengthMismatch, s.file);
    if (count != s.count)
      throw DatasetError(DatasetErrc::kManifestMismatch,
                         s.file + ": " + std::to_string(count) + " records on disk, manifest lists " +
                             std::to_string(s.count));
  }
}

// ---------------------------------------------------------------------------
// Split

/// Positions into Dataset::records.
struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Draws a stratified validation set of round(fraction * pool) records from
/// each stratum's train pool; the test pool is passed through untouched.
/// A fraction of 0 yields an empty validation set.
inline Split make_split(const DatasetManifest& m, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw InvalidArgument("validation fraction must lie in [0, 1)");
  Split out;
  std::size_t base = 0;
  for (std::size_t si = 0; si < m.strata.size(); ++si) {
    const auto& s = m.strata[si];
    const auto pool = static_cast<std::size_t>(s.train_pool.size());
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool)));
    std::vector<std::size_t> order(pool);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with a per-stratum key so strata do not share draws.
    CounterRng rng(mix64(substream_key(seed, Stream::kSplit) ^
                         derive_seed({s.class_id, s.jsr_idx(), 0})));
    for (std::size_t i = pool; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(val.begin(), val.end());
    std::vector<bool> is_val(pool, false);
    for (auto v : val) is_val[v] = true;
    for (std::size_t i = 0; i < pool; ++i) (is_val[i] ? out.val : out.train).push_back(base + i);
    for (std::size_t i = pool; i < s.count; ++i) out.test.push_back(base + i);
    base += s.count;
  }
  return out;
}

}  // namespace jamlab
