#pragma once

// The gated-fusion classifier.
//
// Three inputs per snapshot: the complex IQ sequence, the 224 x 224
// spectrogram image and the 6-element z-scored statistics vector.
//
//   z_iq    = IqEncoder(iq)                 complex residual CNN, modulus + pool
//   z_stft  = StftEncoder(image)            MBConv + SE CNN, pool
//   g       = sigmoid(MLP_g(v))             primary gate
//   s       = sigmoid(w_s . v + b_s)        auxiliary gate
//   Z_fused = g * Proj_stft(z_stft) + (1 - g) * Proj_iq(z_iq)
//   Z_final = Z_fused + s * MLP_proc(v)
//   logits  = Linear(dropout(Z_final))

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/dsp.hpp"
#include "jamlab/nn/layers.hpp"

namespace jamlab {

inline constexpr std::size_t kFusionDim = 256;

enum class GateMode { kLearned, kForceIq, kForceStft };

inline const char* gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::kLearned: return "learned";
    case GateMode::kForceIq: return "force_iq";
    case GateMode::kForceStft: return "force_stft";
  }
  return "?";
}

inline GateMode gate_mode_from_name(const std::string& s) {
  if (s == "learned") return GateMode::kLearned;
  if (s == "force_iq" || s == "iq") return GateMode::kForceIq;
  if (s == "force_stft" || s == "stft") return GateMode::kForceStft;
  throw InvalidArgument("unknown gate mode '" + s + "' (learned, force_iq, force_stft)");
}

struct MbStageConfig {
  std::size_t out = 16;
  std::size_t expand = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  bool operator==(const MbStageConfig&) const = default;
};

struct ModelConfig {
  std::size_t n_classes = kNumClasses;
  std::size_t iq_length = kSnapshotLength;
  std::size_t image_size = kImageSize;
  std::size_t iq_feature_dim = 128;
  std::size_t stft_feature_dim = 160;
  std::size_t fusion_dim = kFusionDim;

  std::size_t iq_stem_channels = 8;
  std::size_t iq_stem_kernel = 16;
  std::size_t iq_stem_stride = 8;
  std::vector<std::size_t> iq_widths{8, 16, 24, 32};

  std::size_t stft_stem_channels = 8;
  std::size_t stft_stem_kernel = 8;
  std::size_t stft_stem_stride = 8;
  std::vector<MbStageConfig> stft_stages{{16, 1, 3, 2}, {24, 2, 3, 2}, {40, 4, 5, 2}, {80, 4, 3, 2}};

  std::size_t gate_hidden = 32;
  std::size_t proc_hidden = 64;
  double dropout = 0.5;
  GateMode gate_mode = GateMode::kLearned;
  std::uint64_t init_seed = 0;

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw InvalidArgument(std::string("model config: ") + what + " must be positive");
    };
    positive(n_classes, "n_classes");
    positive(iq_length, "iq_length");
    positive(image_size, "image_size");
    positive(iq_feature_dim, "iq_feature_dim");
    positive(stft_feature_dim, "stft_feature_dim");
    positive(iq_stem_channels, "iq_stem_channels");
    positive(iq_stem_kernel, "iq_stem_kernel");
    positive(iq_stem_stride, "iq_stem_stride");
    positive(stft_stem_channels, "stft_stem_channels");
    positive(stft_stem_kernel, "stft_stem_kernel");
    positive(stft_stem_stride, "stft_stem_stride");
    positive(gate_hidden, "gate_hidden");
    positive(proc_hidden, "proc_hidden");
    if (fusion_dim != kFusionDim) throw InvalidArgument("model config: fusion_dim is fixed at 256");
    if (iq_widths.empty() || stft_stages.empty()) throw InvalidArgument("model config: encoders need stages");
    for (auto w : iq_widths) positive(w, "iq_widths entry");
    for (const auto& s : stft_stages) {
      positive(s.out, "stage out");
      positive(s.expand, "stage expand");
      positive(s.stride, "stage stride");
      if (s.kernel % 2 == 0) throw InvalidArgument("model config: stage kernels must be odd");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("model config: dropout must lie in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const MbStageConfig& s) {
  j = {{"out", s.out}, {"expand", s.expand}, {"kernel", s.kernel}, {"stride", s.stride}};
}

inline void from_json(const nlohmann::json& j, MbStageConfig& s) {
  for (const auto& [k, v] : j.items())
    if (k != "out" && k != "expand" && k != "kernel" && k != "stride")
      throw InvalidArgument("unknown stage key '" + k + "'");
  s.out = j.value("out", s.out);
  s.expand = j.value("expand", s.expand);
  s.kernel = j.value("kernel", s.kernel);
  s.stride = j.value("stride", s.stride);
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"n_classes", c.n_classes},
          {"iq_length", c.iq_length},
          {"image_size", c.image_size},
          {"iq_feature_dim", c.iq_feature_dim},
          {"stft_feature_dim", c.stft_feature_dim},
          {"fusion_dim", c.fusion_dim},
          {"iq_stem_channels", c.iq_stem_channels},
          {"iq_stem_kernel", c.iq_stem_kernel},
          {"iq_stem_stride", c.iq_stem_stride},
          {"iq_widths", c.iq_widths},
          {"stft_stem_channels", c.stft_stem_channels},
          {"stft_stem_kernel", c.stft_stem_kernel},
          {"stft_stem_stride", c.stft_stem_stride},
          {"stft_stages", c.stft_stages},
          {"gate_hidden", c.gate_hidden},
          {"proc_hidden", c.proc_hidden},
          {"dropout", c.dropout},
          {"gate_mode", gate_mode_name(c.gate_mode)},
          {"init_seed", c.init_seed}};
}

/// Reads a model config; absent keys keep their defaults, unknown keys throw.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (!j.is_object()) throw InvalidArgument("model config must be a JSON object");
  const nlohmann::json known = model_config_to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw InvalidArgument("unknown model config key '" + k + "'");
  try {
    c.n_classes = j.value("n_classes", c.n_classes);
    c.iq_length = j.value("iq_length", c.iq_length);
    c.image_size = j.value("image_size", c.image_size);
    c.iq_feature_dim = j.value("iq_feature_dim", c.iq_feature_dim);
    c.stft_feature_dim = j.value("stft_feature_dim", c.stft_feature_dim);
    c.fusion_dim = j.value("fusion_dim", c.fusion_dim);
    c.iq_stem_channels = j.value("iq_stem_channels", c.iq_stem_channels);
    c.iq_stem_kernel = j.value("iq_stem_kernel", c.iq_stem_kernel);
    c.iq_stem_stride = j.value("iq_stem_stride", c.iq_stem_stride);
    c.iq_widths = j.value("iq_widths", c.iq_widths);
    c.stft_stem_channels = j.value("stft_stem_channels", c.stft_stem_channels);
    c.stft_stem_kernel = j.value("stft_stem_kernel", c.stft_stem_kernel);
    c.stft_stem_stride = j.value("stft_stem_stride", c.stft_stem_stride);
    c.stft_stages = j.value("stft_stages", c.stft_stages);
    c.gate_hidden = j.value("gate_hidden", c.gate_hidden);
    c.proc_hidden = j.value("proc_hidden", c.proc_hidden);
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("gate_mode")) c.gate_mode = gate_mode_from_name(j["gate_mode"].get<std::string>());
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Input preparation

/// IQ planes [re..., im...] after zero-mean / unit-variance normalization and
/// rotation by minus the phase of the first sample whose power reaches half
/// the mean power. This removes the absolute carrier phase: a global phase
/// rotation of the input leaves the planes unchanged.
template <typename T>
std::vector<T> iq_input_planes(const std::vector<cdouble>& x) {
  if (x.empty()) throw InvalidArgument("empty IQ sequence");
  cdouble mu = 0.0;
  for (const auto& v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0;
  for (const auto& v : x) var += std::norm(v - mu);
  var /= static_cast<double>(x.size());
  const double gain = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  cdouble rot{1.0, 0.0};
  for (const auto& v : x)
    if (var > 0.0 && std::norm(v - mu) >= 0.5 * var) {
      rot = std::conj(v - mu) / std::abs(v - mu);
      break;
    }
  std::vector<T> out(2 * x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    const cdouble v = (x[n] - mu) * gain * rot;
    out[n] = static_cast<T>(v.real());
    out[x.size() + n] = static_cast<T>(v.imag());
  }
  return out;
}

/// A batch of model inputs: iq [N, 2, L], image [N, 1, H, W], stats [N, 6]
/// (already z-scored).
template <typename T>
struct ModelInput {
  nn::Tensor<T> iq;
  nn::Tensor<T> image;
  nn::Tensor<T> stats;

  std::size_t batch() const { return stats.rank() ? stats.dim(0) : 0; }
};

template <typename T>
struct ModelOutput {
  nn::Var logits, g, s;
  nn::Var z_iq, z_stft, p_iq, p_stft, proc, z_fused, z_final;  // invalid when skipped
};

struct GateReadout {
  double g = 0;
  double s = 0;
};

// ---------------------------------------------------------------------------
// Model

template <typename T>
class GfNet {
 public:
  explicit GfNet(ModelConfig cfg) : cfg_(std::move(cfg)), ps_(cfg_.init_seed) {
    cfg_.validate();
    build_iq();
    build_stft();
    gate_hidden_ = nn::Linear<T>(ps_, "gate_g.hidden", kNumStats, cfg_.gate_hidden);
    gate_out_ = nn::Linear<T>(ps_, "gate_g.out", cfg_.gate_hidden, 1, /*zero_init=*/true);
    gate_s_ = nn::Linear<T>(ps_, "gate_s", kNumStats, 1, /*zero_init=*/true);
    proc_hidden_ = nn::Linear<T>(ps_, "proc.hidden", kNumStats, cfg_.proc_hidden);
    proc_out_ = nn::Linear<T>(ps_, "proc.out", cfg_.proc_hidden, cfg_.fusion_dim);
    proj_iq_ = nn::Linear<T>(ps_, "proj_iq", cfg_.iq_feature_dim, cfg_.fusion_dim);
    proj_stft_ = nn::Linear<T>(ps_, "proj_stft", cfg_.stft_feature_dim, cfg_.fusion_dim);
    classifier_ = nn::Linear<T>(ps_, "classifier", cfg_.fusion_dim, cfg_.n_classes);
  }

  GfNet(const GfNet&) = delete;
  GfNet& operator=(const GfNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return ps_; }
  const nn::ParameterSet<T>& params() const { return ps_; }
  void set_gate_mode(GateMode m) { cfg_.gate_mode = m; }

  /// IQ encoder: [N, 2, L] -> [N, iq_feature_dim].
  nn::Var encode_iq(nn::Tape<T>& t, nn::Var iq, bool training) const {
    const auto& s = t.shape(iq);
    if (s.size() != 3 || s[1] != 2 || s[2] != cfg_.iq_length)
      throw nn::ShapeError("encode_iq: expected [N, 2, " + std::to_string(cfg_.iq_length) + "], got " +
                           nn::shape_string(s));
    nn::Var h = nn::crelu(t, iq_stem_bn_(t, iq_stem_(t, iq), training));
    checked(t, h, "iq.stem");
    for (std::size_t i = 0; i < iq_blocks_.size(); ++i) {
      const auto& b = iq_blocks_[i];
      nn::Var a = nn::crelu(t, b.bn1(t, b.conv1(t, h), training));
      a = b.bn2(t, b.conv2(t, a), training);
      nn::Var skip = b.skip_bn(t, b.skip(t, h), training);
      h = nn::crelu(t, nn::add(t, a, skip));
      checked(t, h, "iq.stage" + std::to_string(i + 1));
    }
    nn::Var z = nn::global_avg_pool(t, nn::modulus(t, iq_head_(t, h)));
    checked(t, z, "iq.head");
    return z;
  }

  /// Spectrogram encoder: [N, 1, H, W] -> [N, stft_feature_dim].
  nn::Var encode_stft(nn::Tape<T>& t, nn::Var image, bool training) const {
    const auto& s = t.shape(image);
    if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
      throw nn::ShapeError("encode_stft: expected [N, 1, " + std::to_string(cfg_.image_size) + ", " +
                           std::to_string(cfg_.image_size) + "], got " + nn::shape_string(s));
    nn::Var h = nn::silu(t, stft_stem_bn_(t, stft_stem_(t, image), training));
    checked(t, h, "stft.stem");
    for (std::size_t i = 0; i < mb_blocks_.size(); ++i) {
      const auto& b = mb_blocks_[i];
      nn::Var x = h;
      if (b.expand.w) x = nn::silu(t, b.expand_bn(t, b.expand(t, x), training));
      x = nn::silu(t, b.dw_bn(t, b.dw(t, x), training));
      x = b.se(t, x);
      x = b.project_bn(t, b.project(t, x), training);
      h = b.residual ? nn::add(t, x, h) : x;
      checked(t, h, "stft.stage" + std::to_string(i + 1));
    }
    nn::Var z = nn::global_avg_pool(t, nn::silu(t, stft_head_bn_(t, stft_head_(t, h), training)));
    checked(t, z, "stft.head");
    return z;
  }

  /// g = sigmoid(MLP(v)), [N, 6] -> [N, 1].
  nn::Var gate_primary(nn::Tape<T>& t, nn::Var v) const {
    return nn::sigmoid(t, gate_out_(t, nn::relu(t, gate_hidden_(t, v))));
  }

  /// s = sigmoid(w . v + b), [N, 6] -> [N, 1].
  nn::Var gate_aux(nn::Tape<T>& t, nn::Var v) const { return nn::sigmoid(t, gate_s_(t, v)); }

  nn::Var project_iq(nn::Tape<T>& t, nn::Var z) const { return proj_iq_(t, z); }
  nn::Var project_stft(nn::Tape<T>& t, nn::Var z) const { return proj_stft_(t, z); }
  nn::Var process_stats(nn::Tape<T>& t, nn::Var v) const { return proc_out_(t, nn::relu(t, proc_hidden_(t, v))); }

  /// g * p_stft + (1 - g) * p_iq for g of shape [N, 1].
  static nn::Var fuse(nn::Tape<T>& t, nn::Var p_iq, nn::Var p_stft, nn::Var g) {
    return nn::add(t, nn::scale_rows(t, p_stft, g), nn::scale_rows(t, p_iq, nn::affine(t, g, T{-1}, T{1})));
  }

  /// z_fused + s * proc.
  static nn::Var inject_aux(nn::Tape<T>& t, nn::Var z_fused, nn::Var proc, nn::Var s) {
    return nn::add(t, z_fused, nn::scale_rows(t, proc, s));
  }

  /// Full forward pass. In the forced gate modes the unused encoder is not
  /// evaluated and g is the constant 0 (force_iq) or 1 (force_stft).
  ModelOutput<T> forward(nn::Tape<T>& t, const ModelInput<T>& in, bool training, std::uint64_t dropout_key = 0) const {
    const std::size_t n = in.batch();
    if (n == 0) throw nn::ShapeError("forward: empty batch");
    if (in.stats.shape != nn::Shape{n, kNumStats})
      throw nn::ShapeError("forward: stats must be [N, 6], got " + nn::shape_string(in.stats.shape));
    ModelOutput<T> out;
    nn::Var v = t.constant(in.stats);
    if (cfg_.gate_mode != GateMode::kForceStft) {
      out.z_iq = encode_iq(t, t.constant(in.iq), training);
      out.p_iq = project_iq(t, out.z_iq);
    }
    if (cfg_.gate_mode != GateMode::kForceIq) {
      out.z_stft = encode_stft(t, t.constant(in.image), training);
      out.p_stft = project_stft(t, out.z_stft);
    }
    switch (cfg_.gate_mode) {
      case GateMode::kLearned:
        out.g = gate_primary(t, v);
        out.z_fused = fuse(t, out.p_iq, out.p_stft, out.g);
        break;
      case GateMode::kForceIq:
        out.g = t.constant(nn::Tensor<T>({n, 1}, T{0}));
        out.z_fused = out.p_iq;
        break;
      case GateMode::kForceStft:
        out.g = t.constant(nn::Tensor<T>({n, 1}, T{1}));
        out.z_fused = out.p_stft;
        break;
    }
    checked(t, out.g, "gate_g");
    out.s = gate_aux(t, v);
    out.proc = process_stats(t, v);
    out.z_final = inject_aux(t, out.z_fused, out.proc, out.s);
    checked(t, out.z_final, "fusion");
    nn::Var d = nn::dropout(t, out.z_final, cfg_.dropout, dropout_key, training);
    out.logits = classifier_(t, d);
    checked(t, out.logits, "classifier");
    return out;
  }

  /// Inference: class probabilities [N, C] (row-major) and gate readouts.
  std::pair<std::vector<T>, std::vector<GateReadout>> predict(const ModelInput<T>& in) const {
    nn::Tape<T> t(/*grad_enabled=*/false);
    const auto out = forward(t, in, false);
    auto probs = nn::softmax_rows(t.value(out.logits));
    std::vector<GateReadout> gates(in.batch());
    for (std::size_t i = 0; i < gates.size(); ++i)
      gates[i] = {static_cast<double>(t.value(out.g).data[i]), static_cast<double>(t.value(out.s).data[i])};
    return {std::move(probs), std::move(gates)};
  }

 private:
  struct IqBlock {
    nn::ComplexConv1d<T> conv1, conv2, skip;
    nn::BatchNorm<T> bn1, bn2, skip_bn;
  };

  struct MbBlock {
    nn::Conv2d<T> expand;  // absent (null weight) when the expansion ratio is 1
    nn::BatchNorm<T> expand_bn;
    nn::DepthwiseConv2d<T> dw;
    nn::BatchNorm<T> dw_bn;
    nn::SqueezeExcite<T> se;
    nn::Conv2d<T> project;
    nn::BatchNorm<T> project_bn;
    bool residual = false;
  };

  static void checked(const nn::Tape<T>& t, nn::Var v, const std::string& layer) { nn::check_finite(t, v, layer); }

  void build_iq() {
    const std::size_t k = cfg_.iq_stem_kernel, st = cfg_.iq_stem_stride;
    iq_stem_ = nn::ComplexConv1d<T>(ps_, "iq.stem", 1, cfg_.iq_stem_channels, k, st, k > st ? (k - st) / 2 : 0);
    iq_stem_bn_ = nn::BatchNorm<T>(ps_, "iq.stem.bn", 2 * cfg_.iq_stem_channels);
    std::size_t in = cfg_.iq_stem_channels;
    for (std::size_t i = 0; i < cfg_.iq_widths.size(); ++i) {
      const std::size_t w = cfg_.iq_widths[i];
      const std::string p = "iq.stage" + std::to_string(i + 1);
      IqBlock b;
      b.conv1 = nn::ComplexConv1d<T>(ps_, p + ".conv1", in, w, 3, 2, 1);
      b.bn1 = nn::BatchNorm<T>(ps_, p + ".bn1", 2 * w);
      b.conv2 = nn::ComplexConv1d<T>(ps_, p + ".conv2", w, w, 3, 1, 1);
      b.bn2 = nn::BatchNorm<T>(ps_, p + ".bn2", 2 * w);
      b.skip = nn::ComplexConv1d<T>(ps_, p + ".skip", in, w, 1, 2, 0);
      b.skip_bn = nn::BatchNorm<T>(ps_, p + ".skip_bn", 2 * w);
      iq_blocks_.push_back(b);
      in = w;
    }
    iq_head_ = nn::ComplexConv1d<T>(ps_, "iq.head", in, cfg_.iq_feature_dim, 1, 1, 0);
  }

  void build_stft() {
    const std::size_t k = cfg_.stft_stem_kernel, st = cfg_.stft_stem_stride;
    stft_stem_ = nn::Conv2d<T>(ps_, "stft.stem", 1, cfg_.stft_stem_channels, k, st, k > st ? (k - st + 1) / 2 : 0);
    stft_stem_bn_ = nn::BatchNorm<T>(ps_, "stft.stem.bn", cfg_.stft_stem_channels);
    std::size_t in = cfg_.stft_stem_channels;
    for (std::size_t i = 0; i < cfg_.stft_stages.size(); ++i) {
      const auto& sc = cfg_.stft_stages[i];
      const std::string p = "stft.stage" + std::to_string(i + 1);
      const std::size_t mid = in * sc.expand;
      MbBlock b;
      if (sc.expand > 1) {
        b.expand = nn::Conv2d<T>(ps_, p + ".expand", in, mid, 1, 1, 0);
        b.expand_bn = nn::BatchNorm<T>(ps_, p + ".expand_bn", mid);
      }
      b.dw = nn::DepthwiseConv2d<T>(ps_, p + ".dw", mid, sc.kernel, sc.stride);
      b.dw_bn = nn::BatchNorm<T>(ps_, p + ".dw_bn", mid);
      b.se = nn::SqueezeExcite<T>(ps_, p + ".se", mid, std::max<std::size_t>(1, in / 4));
      b.project = nn::Conv2d<T>(ps_, p + ".project", mid, sc.out, 1, 1, 0);
      b.project_bn = nn::BatchNorm<T>(ps_, p + ".project_bn", sc.out);
      b.residual = sc.stride == 1 && in == sc.out;
      mb_blocks_.push_back(b);
      in = sc.out;
    }
    stft_head_ = nn::Conv2d<T>(ps_, "stft.head", in, cfg_.stft_feature_dim, 1, 1, 0);
    stft_head_bn_ = nn::BatchNorm<T>(ps_, "stft.head.bn", cfg_.stft_feature_dim);
  }

  ModelConfig cfg_;
  nn::ParameterSet<T> ps_;

  nn::ComplexConv1d<T> iq_stem_, iq_head_;
  nn::BatchNorm<T> iq_stem_bn_;
  std::vector<IqBlock> iq_blocks_;

  nn::Conv2d<T> stft_stem_, stft_head_;
  nn::BatchNorm<T> stft_stem_bn_, stft_head_bn_;
  std::vector<MbBlock> mb_blocks_;

  nn::Linear<T> gate_hidden_, gate_out_, gate_s_, proc_hidden_, proc_out_, proj_iq_, proj_stft_, classifier_;
};

}  // namespace jamlab
