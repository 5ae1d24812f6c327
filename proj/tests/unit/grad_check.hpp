#pragma once

// Central-difference gradient checking in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "jamlab/nn/layers.hpp"

namespace gradcheck {

using jamlab::nn::Parameter;
using jamlab::nn::Tape;
using jamlab::nn::Tensor;
using jamlab::nn::Var;

using Graph = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

struct Report {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor): relative where gradients are O(1) and
/// absolute below `floor`, so finite-difference noise on near-zero entries
/// does not dominate.
inline double rel_error(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Tensor<double> random_tensor(jamlab::nn::Shape s, std::uint64_t key, double scale = 1.0,
                                    double min_abs = 0.0) {
  jamlab::CounterRng r(key);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) {
    do v = r.normal() * scale;
    while (std::abs(v) < min_abs);
  }
  return t;
}

/// Checks d(sum(w * f(inputs, params)))/d(inputs, params) for a fixed random
/// weight tensor w. `f` must rebuild the graph from scratch on each call.
/// When `max_per_tensor` is non-zero only that many evenly spaced entries of
/// each tensor are probed.
inline Report check(std::vector<Tensor<double>> inputs, std::vector<Parameter<double>*> params, const Graph& f,
                    double h = 1e-6, std::uint64_t weight_key = 99, std::size_t max_per_tensor = 0) {
  auto evaluate = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape<double> t;
    std::vector<Var> vs;
    for (auto& in : inputs) vs.push_back(t.leaf(in));
    Var y = f(t, vs);
    const auto w = random_tensor(t.shape(y), weight_key);
    Var loss = jamlab::nn::weighted_sum(t, y, w);
    if (with_grad) {
      for (auto* p : params) p->zero_grad();
      t.backward(loss);
      for (auto& v : vs) grads->push_back(t.has_grad(v) ? t.grad(v) : std::vector<double>(t.value(v).size(), 0.0));
    }
    return t.value(loss).data[0];
  };

  std::vector<std::vector<double>> input_grads;
  evaluate(true, &input_grads);
  std::vector<std::vector<double>> param_grads;
  for (auto* p : params) param_grads.push_back(p->grad.data);

  Report rep;
  auto probe = [&](double& x, double analytic) {
    const double saved = x;
    x = saved + h;
    const double up = evaluate(false, nullptr);
    x = saved - h;
    const double down = evaluate(false, nullptr);
    x = saved;
    rep.max_rel_error = std::max(rep.max_rel_error, rel_error(analytic, (up - down) / (2 * h)));
    ++rep.checked;
  };
  auto step_for = [&](std::size_t n) {
    return max_per_tensor == 0 ? std::size_t{1} : std::max<std::size_t>(1, (n + max_per_tensor - 1) / max_per_tensor);
  };
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); i += step_for(inputs[k].size()))
      probe(inputs[k].data[i], input_grads[k][i]);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->value.size(); i += step_for(params[k]->value.size()))
      probe(params[k]->value.data[i], param_grads[k][i]);
  return rep;
}

}  // namespace gradcheck
