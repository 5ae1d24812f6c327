#pragma once

// Parameter storage and the layers the classifier is built from.

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>

#include "jamlab/nn/ops.hpp"
#include "jamlab/rng.hpp"

namespace jamlab::nn {

enum class Init { kZeros, kOnes, kHeNormal, kUniformFanIn };

/// Owns every learnable tensor and batch-norm buffer of a model. Addresses are
/// stable, so layers keep plain pointers into the set. Initial values depend
/// only on (seed, parameter name).
template <typename T>
class ParameterSet {
 public:
  struct BnEntry {
    std::string name;
    BatchNormState<T> state;
  };

  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<T>& add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1) {
    for (const auto& p : params_)
      if (p.name == name) throw ShapeError("duplicate parameter name '" + name + "'");
    Tensor<T> v(std::move(shape));
    CounterRng rng(mix64(substream_key(seed_, Stream::kInit) ^ name_hash(name)));
    const double fan = static_cast<double>(std::max<std::size_t>(fan_in, 1));
    for (auto& e : v.data) {
      switch (init) {
        case Init::kZeros: e = T{0}; break;
        case Init::kOnes: e = T{1}; break;
        case Init::kHeNormal: e = static_cast<T>(rng.normal() * std::sqrt(2.0 / fan)); break;
        case Init::kUniformFanIn: e = static_cast<T>(rng.uniform(-1.0, 1.0) / std::sqrt(fan)); break;
      }
    }
    params_.emplace_back(name, std::move(v));
    return params_.back();
  }

  BatchNormState<T>& add_bn(const std::string& name, std::size_t channels) {
    bn_.push_back({name, BatchNormState<T>(channels)});
    return bn_.back().state;
  }

  std::deque<Parameter<T>>& params() { return params_; }
  const std::deque<Parameter<T>>& params() const { return params_; }
  std::deque<BnEntry>& bn() { return bn_; }
  const std::deque<BnEntry>& bn() const { return bn_; }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t name_hash(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001B3ULL;
    return h;
  }

  std::uint64_t seed_;
  std::deque<Parameter<T>> params_;
  std::deque<BnEntry> bn_;
};

template <typename T>
struct Linear {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, bool zero_init = false) {
    w = &ps.add(name + ".weight", {out, in}, zero_init ? Init::kZeros : Init::kUniformFanIn, in);
    b = &ps.add(name + ".bias", {out}, zero_init ? Init::kZeros : Init::kUniformFanIn, in);
  }
  Var operator()(Tape<T>& t, Var x) const { return linear(t, x, t.param(*w), t.param(*b)); }
};

/// Complex 1-D convolution without bias (a batch norm always follows).
template <typename T>
struct ComplexConv1d {
  Parameter<T>* w_re = nullptr;
  Parameter<T>* w_im = nullptr;
  std::size_t stride = 1, pad = 0;

  ComplexConv1d() = default;
  ComplexConv1d(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                std::size_t stride_, std::size_t pad_)
      : stride(stride_), pad(pad_) {
    // Real and imaginary parts each carry half the He variance.
    w_re = &ps.add(name + ".weight_re", {out, in, k}, Init::kHeNormal, 2 * in * k);
    w_im = &ps.add(name + ".weight_im", {out, in, k}, Init::kHeNormal, 2 * in * k);
  }
  Var operator()(Tape<T>& t, Var x) const {
    return complex_conv1d(t, x, t.param(*w_re), t.param(*w_im), stride, pad);
  }
};

template <typename T>
struct Conv2d {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  std::size_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
         std::size_t stride_, std::size_t pad_, bool bias = false)
      : stride(stride_), pad(pad_) {
    w = &ps.add(name + ".weight", {out, in, k, k}, Init::kHeNormal, in * k * k);
    if (bias) b = &ps.add(name + ".bias", {out}, Init::kZeros);
  }
  Var operator()(Tape<T>& t, Var x) const {
    std::optional<Var> bv;
    if (b) bv = t.param(*b);
    return conv2d(t, x, t.param(*w), bv, stride, pad);
  }
};

template <typename T>
struct DepthwiseConv2d {
  Parameter<T>* w = nullptr;
  std::size_t stride = 1, pad = 0;

  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParameterSet<T>& ps, const std::string& name, std::size_t channels, std::size_t k,
                  std::size_t stride_)
      : stride(stride_), pad(k / 2) {
    w = &ps.add(name + ".weight", {channels, 1, k, k}, Init::kHeNormal, k * k);
  }
  Var operator()(Tape<T>& t, Var x) const { return depthwise_conv2d(t, x, t.param(*w), stride, pad); }
};

template <typename T>
struct BatchNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormState<T>* state = nullptr;

  BatchNorm() = default;
  BatchNorm(ParameterSet<T>& ps, const std::string& name, std::size_t channels) {
    gamma = &ps.add(name + ".gamma", {channels}, Init::kOnes);
    beta = &ps.add(name + ".beta", {channels}, Init::kZeros);
    state = &ps.add_bn(name, channels);
  }
  Var operator()(Tape<T>& t, Var x, bool training) const {
    return batchnorm(t, x, t.param(*gamma), t.param(*beta), *state, training);
  }
};

/// Squeeze-and-excitation: pool, bottleneck MLP with SiLU, sigmoid channel gates.
template <typename T>
struct SqueezeExcite {
  Linear<T> reduce, expand;

  SqueezeExcite() = default;
  SqueezeExcite(ParameterSet<T>& ps, const std::string& name, std::size_t channels, std::size_t squeezed)
      : reduce(ps, name + ".reduce", channels, std::max<std::size_t>(squeezed, 1)),
        expand(ps, name + ".expand", std::max<std::size_t>(squeezed, 1), channels) {}

  /// The per-channel gates in (0, 1), shape [N, C].
  Var gates(Tape<T>& t, Var x) const {
    return sigmoid(t, expand(t, silu(t, reduce(t, global_avg_pool(t, x)))));
  }
  Var operator()(Tape<T>& t, Var x) const { return channel_scale(t, x, gates(t, x)); }
};

}  // namespace jamlab::nn
