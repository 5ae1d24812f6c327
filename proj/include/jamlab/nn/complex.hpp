#pragma once

// Complex tensors as (re, im) pairs, and value-level wrappers around the
// complex tape ops for code that does not need gradients.

#include <cmath>

#include "jamlab/nn/ops.hpp"

namespace jamlab::nn {

template <typename T>
struct ComplexTensor {
  Tensor<T> re;
  Tensor<T> im;

  ComplexTensor() = default;
  ComplexTensor(Tensor<T> r, Tensor<T> i) : re(std::move(r)), im(std::move(i)) {
    if (re.shape != im.shape)
      throw ShapeError("complex tensor parts differ: " + shape_string(re.shape) + " vs " + shape_string(im.shape));
  }
  const Shape& shape() const { return re.shape; }
  bool operator==(const ComplexTensor&) const = default;
};

/// [N, C, ...] complex -> real [N, 2C, ...] with real parts first.
template <typename T>
Tensor<T> stack_complex(const ComplexTensor<T>& z) {
  const auto& s = z.shape();
  if (s.size() < 2) throw ShapeError("stack_complex: expected [N, C, ...]");
  const std::size_t n = s[0], block = z.re.size() / std::max<std::size_t>(n, 1);
  Shape out = s;
  out[1] *= 2;
  Tensor<T> y(out);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(z.re.ptr() + i * block, block, y.ptr() + 2 * i * block);
    std::copy_n(z.im.ptr() + i * block, block, y.ptr() + (2 * i + 1) * block);
  }
  return y;
}

template <typename T>
ComplexTensor<T> split_complex(const Tensor<T>& x) {
  if (x.rank() < 2 || x.dim(1) % 2 != 0) throw ShapeError("split_complex: expected [N, 2C, ...]");
  Shape s = x.shape;
  s[1] /= 2;
  const std::size_t n = s[0], block = shape_size(s) / std::max<std::size_t>(n, 1);
  Tensor<T> re(s), im(s);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.ptr() + 2 * i * block, block, re.ptr() + i * block);
    std::copy_n(x.ptr() + (2 * i + 1) * block, block, im.ptr() + i * block);
  }
  return {std::move(re), std::move(im)};
}

/// h [N, Cin, L] complex, W [Cout, Cin, K] complex -> [N, Cout, Lout] complex.
template <typename T>
ComplexTensor<T> complex_conv1d(const ComplexTensor<T>& h, const ComplexTensor<T>& w, std::size_t stride,
                                std::size_t pad) {
  Tape<T> t;
  Var x = t.constant(stack_complex(h));
  Var y = complex_conv1d(t, x, t.constant(w.re), t.constant(w.im), stride, pad);
  return split_complex(t.value(y));
}

template <typename T>
ComplexTensor<T> crelu(const ComplexTensor<T>& z) {
  ComplexTensor<T> out = z;
  for (auto* part : {&out.re, &out.im})
    for (auto& v : part->data) v = v > T{0} ? v : T{0};
  return out;
}

/// e^{j theta} z.
template <typename T>
ComplexTensor<T> rotate_phase(const ComplexTensor<T>& z, double theta) {
  const T c = static_cast<T>(std::cos(theta)), s = static_cast<T>(std::sin(theta));
  ComplexTensor<T> out = z;
  for (std::size_t i = 0; i < z.re.size(); ++i) {
    out.re.data[i] = c * z.re.data[i] - s * z.im.data[i];
    out.im.data[i] = s * z.re.data[i] + c * z.im.data[i];
  }
  return out;
}

}  // namespace jamlab::nn
