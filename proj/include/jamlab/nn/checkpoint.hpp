#pragma once

// Checkpoints: a JSON manifest plus one blob of little-endian tensors.
//
// <dir>/checkpoint.json lists every tensor (parameters, batch-norm running
// statistics and, when saved, Adam moments) with its shape, dtype and byte
// offset into <dir>/tensors.bin, together with the optimizer step and a free
// "extra" object for model configuration and normalization constants.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/nn/optim.hpp"

namespace jamlab::nn {

inline constexpr const char* kCheckpointManifest = "checkpoint.json";
inline constexpr const char* kCheckpointBlob = "tensors.bin";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32le" : "f64le";
}

template <typename T>
void append_le(std::string& blob, const std::vector<T>& v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T x : v) {
    const U u = std::bit_cast<U>(x);
    for (std::size_t b = 0; b < sizeof(U); ++b) blob.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  }
}

template <typename T>
void read_le(const std::string& blob, std::size_t offset, std::vector<T>& v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (offset + v.size() * sizeof(U) > blob.size()) throw CheckpointError("checkpoint blob is truncated");
  for (std::size_t i = 0; i < v.size(); ++i) {
    U u = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b)
      u |= static_cast<U>(static_cast<unsigned char>(blob[offset + i * sizeof(U) + b])) << (8 * b);
    v[i] = std::bit_cast<T>(u);
  }
}

}  // namespace detail

struct CheckpointInfo {
  std::int64_t step = 0;
  bool has_optimizer = false;
  nlohmann::json extra = nlohmann::json::object();
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet<T>& ps, const OptimizerState<T>* opt,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, const std::string& kind, const Shape& shape, const std::vector<T>& v) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", blob.size()}});
    detail::append_le(blob, v);
  };
  for (const auto& p : ps.params()) put(p.name, "param", p.value.shape, p.value.data);
  for (const auto& b : ps.bn()) {
    const Shape s{b.state.running_mean.size()};
    put(b.name, "bn_mean", s, b.state.running_mean);
    put(b.name, "bn_var", s, b.state.running_var);
  }
  if (opt) {
    if (opt->m.size() != ps.params().size()) throw CheckpointError("optimizer state does not match parameters");
    for (std::size_t k = 0; k < ps.params().size(); ++k) {
      put(ps.params()[k].name, "adam_m", ps.params()[k].value.shape, opt->m[k]);
      put(ps.params()[k].name, "adam_v", ps.params()[k].value.shape, opt->v[k]);
    }
  }
  nlohmann::json man = {{"version", kCheckpointVersion},
                        {"dtype", detail::dtype_name<T>()},
                        {"blob", kCheckpointBlob},
                        {"blob_bytes", blob.size()},
                        {"step", opt ? opt->step : 0},
                        {"has_optimizer", opt != nullptr},
                        {"tensors", tensors},
                        {"extra", extra}};
  {
    std::ofstream out(dir / kCheckpointBlob, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("cannot write " + (dir / kCheckpointBlob).string());
  }
  std::ofstream out(dir / kCheckpointManifest, std::ios::trunc);
  out << man.dump(1) << "\n";
  if (!out) throw CheckpointError("cannot write " + (dir / kCheckpointManifest).string());
}

/// Reads only the manifest's step, optimizer flag and extra object.
inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  std::ifstream in(dir / kCheckpointManifest);
  if (!in) throw CheckpointError("cannot open " + (dir / kCheckpointManifest).string());
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  CheckpointInfo info;
  info.step = man.value("step", std::int64_t{0});
  info.has_optimizer = man.value("has_optimizer", false);
  if (man.contains("extra")) info.extra = man["extra"];
  return info;
}

/// Loads tensors into an already-constructed parameter set (and optimizer
/// state when given). Names, kinds and shapes must match exactly.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, ParameterSet<T>& ps, OptimizerState<T>* opt) {
  std::ifstream in(dir / kCheckpointManifest);
  if (!in) throw CheckpointError("cannot open " + (dir / kCheckpointManifest).string());
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (man.value("version", 0) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  if (man.value("dtype", std::string()) != detail::dtype_name<T>()) throw CheckpointError("checkpoint dtype mismatch");
  std::ifstream bin(dir / kCheckpointBlob, std::ios::binary);
  if (!bin) throw CheckpointError("cannot open " + (dir / kCheckpointBlob).string());
  std::ostringstream ss;
  ss << bin.rdbuf();
  const std::string blob = ss.str();
  if (blob.size() != man.value("blob_bytes", std::size_t{0})) throw CheckpointError("checkpoint blob size mismatch");

  const auto& tensors = man.at("tensors");
  std::size_t cursor = 0;
  auto take = [&](const std::string& name, const std::string& kind, const Shape& shape, std::vector<T>& dst) {
    if (cursor >= tensors.size()) throw CheckpointError("checkpoint is missing tensor '" + name + "' (" + kind + ")");
    const auto& e = tensors[cursor++];
    if (e.at("name") != name || e.at("kind") != kind)
      throw CheckpointError("checkpoint tensor order differs at '" + name + "' (" + kind + ")");
    if (e.at("shape").get<Shape>() != shape)
      throw CheckpointError("checkpoint shape mismatch for '" + name + "'");
    detail::read_le(blob, e.at("offset").get<std::size_t>(), dst);
  };
  for (auto& p : ps.params()) take(p.name, "param", p.value.shape, p.value.data);
  for (auto& b : ps.bn()) {
    const Shape s{b.state.running_mean.size()};
    take(b.name, "bn_mean", s, b.state.running_mean);
    take(b.name, "bn_var", s, b.state.running_var);
  }
  CheckpointInfo info;
  info.step = man.value("step", std::int64_t{0});
  info.has_optimizer = man.value("has_optimizer", false);
  info.extra = man.value("extra", nlohmann::json::object());
  if (opt && info.has_optimizer) {
    *opt = OptimizerState<T>(ps);
    for (std::size_t k = 0; k < ps.params().size(); ++k) {
      take(ps.params()[k].name, "adam_m", ps.params()[k].value.shape, opt->m[k]);
      take(ps.params()[k].name, "adam_v", ps.params()[k].value.shape, opt->v[k]);
    }
    opt->step = info.step;
  }
  return info;
}

}  // namespace jamlab::nn
