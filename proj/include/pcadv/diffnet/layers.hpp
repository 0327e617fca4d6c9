#pragma once

// Building blocks shared by the classifiers and the auto-encoder: dense
// layers applied row-wise (a "shared MLP" when rows are points), ReLU and
// column-wise max pooling, each with an explicit backward pass.
//
// Kernels are templated on the scalar so the same code runs in float for
// training/attacks and in double for finite-difference checks. Every row is
// processed by an identical instruction sequence, which is what makes the
// pointnet classifiers bit-exactly permutation invariant.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pcadv/error.hpp"
#include "pcadv/rng.hpp"
#include "pcadv/tensor.hpp"

namespace pcadv::nn {

template <typename T>
struct DenseLayer {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> w;   // in x out
  std::vector<T> wt;  // out x in (backward)
  std::vector<T> b;   // out

  static DenseLayer from_bundle(const TensorBundle& params, const std::string& name) {
    const Tensor& wten = params.at(name + ".weight");
    const Tensor& bten = params.at(name + ".bias");
    if (wten.shape.size() != 2 || bten.shape.size() != 1 || bten.shape[0] != wten.shape[1])
      throw InvalidInput("layer '" + name + "' has inconsistent parameter shapes");
    DenseLayer l;
    l.name = name;
    l.in = wten.shape[0];
    l.out = wten.shape[1];
    l.w.assign(wten.data.begin(), wten.data.end());
    l.b.assign(bten.data.begin(), bten.data.end());
    l.wt.resize(l.w.size());
    for (std::size_t i = 0; i < l.in; ++i)
      for (std::size_t o = 0; o < l.out; ++o) l.wt[o * l.in + i] = l.w[i * l.out + o];
    return l;
  }
};

/// Parameter gradients of one dense layer.
template <typename T>
struct DenseGrad {
  std::vector<T> w;
  std::vector<T> b;

  explicit DenseGrad(const DenseLayer<T>& l) : w(l.w.size(), T(0)), b(l.b.size(), T(0)) {}
  DenseGrad() = default;
};

/// y[r] = x[r] W + b for each of `rows` rows.
template <typename T>
void dense_forward(const DenseLayer<T>& l, const T* x, std::size_t rows, T* y) {
  const std::size_t in = l.in, out = l.out;
  const T* __restrict w = l.w.data();
  const T* __restrict b = l.b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict yr = y + r * out;
    const T* __restrict xr = x + r * in;
    for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      const T* __restrict wr = w + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
}

/// Backward of dense_forward. Rows whose `active` flag is 0 carry zero
/// output gradient and are skipped. `dx` may be null when the input gradient
/// is not needed; `grad` may be null when parameter gradients are not needed.
/// `dx` is overwritten (not accumulated) for active rows and zeroed otherwise.
template <typename T>
void dense_backward(const DenseLayer<T>& l, const T* x, const T* dy, std::size_t rows,
                    const std::vector<char>* active, T* dx, DenseGrad<T>* grad) {
  const std::size_t in = l.in, out = l.out;
  const T* __restrict wt = l.wt.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* __restrict dyr = dy + r * out;
    if (active && !(*active)[r]) {
      if (dx)
        for (std::size_t i = 0; i < in; ++i) dx[r * in + i] = T(0);
      continue;
    }
    if (grad) {
      const T* __restrict xr = x + r * in;
      T* __restrict gb = grad->b.data();
      for (std::size_t o = 0; o < out; ++o) gb[o] += dyr[o];
      for (std::size_t i = 0; i < in; ++i) {
        const T xi = xr[i];
        if (xi == T(0)) continue;
        T* __restrict gw = grad->w.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) gw[o] += xi * dyr[o];
      }
    }
    if (dx) {
      T* __restrict dxr = dx + r * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] = T(0);
      for (std::size_t o = 0; o < out; ++o) {
        const T d = dyr[o];
        if (d == T(0)) continue;
        const T* __restrict wr = wt + o * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
      }
    }
  }
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = x > T(0) ? x : T(0);
}

/// Zeroes gradient entries whose forward activation was not positive
/// (ReLU'(0) = 0). Marks rows that still carry gradient in `active`.
template <typename T>
void relu_backward(const std::vector<T>& act, std::vector<T>& grad, std::size_t cols,
                   std::vector<char>* active) {
  const std::size_t rows = cols ? act.size() / cols : 0;
  if (active) active->assign(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    char any = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t k = r * cols + c;
      if (!(act[k] > T(0))) grad[k] = T(0);
      any |= grad[k] != T(0);
    }
    if (active) (*active)[r] = any;
  }
}

/// Column-wise max over rows. Ties resolve to the lowest row.
template <typename T>
void max_pool_rows(const std::vector<T>& x, std::size_t rows, std::size_t cols, std::vector<T>& out,
                   std::vector<std::uint32_t>& arg) {
  out.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(cols));
  arg.assign(cols, 0);
  for (std::size_t r = 1; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c)
      if (xr[c] > out[c]) {
        out[c] = xr[c];
        arg[c] = static_cast<std::uint32_t>(r);
      }
  }
}

template <typename T>
void check_finite(const std::vector<T>& v, const std::string& layer) {
  for (const T& x : v)
    if (!std::isfinite(x)) throw NumericFailure(layer, "non-finite activation in layer '" + layer + "'");
}

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline void add_dense_params(TensorBundle& params, const std::string& name, std::size_t in, std::size_t out,
                             Rng& rng) {
  Tensor w({static_cast<std::uint32_t>(in), static_cast<std::uint32_t>(out)});
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-limit, limit));
  params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", Tensor({static_cast<std::uint32_t>(out)}));
}

/// Copies per-layer gradients into a bundle laid out like the parameters.
template <typename T>
void store_grad(TensorBundle& bundle, const std::string& name, const DenseGrad<T>& g) {
  auto& w = bundle.at(name + ".weight").data;
  auto& b = bundle.at(name + ".bias").data;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(g.w[i]);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(g.b[i]);
}

}  // namespace pcadv::nn
