#pragma once

// Point-cloud classifiers: per-point shared layers, a symmetric max-pool over
// points and a small head MLP producing K logits.
//
//   pointnet_tiny  3-32-64-128 | max | 128-64-K
//   pointnet_wide  3-64-128-256 | max | 256-128-K
//   edgeconv_lite  edge(6-64, max over k neighbours) | 64-128 | max | 128-64-K
//
// The edge layer sees [x_i ; x_j - x_i] for each of the k nearest neighbours
// j of i. The neighbour graph is rebuilt from the current coordinates on
// every forward pass and is treated as constant by the backward pass.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcadv/diffnet/layers.hpp"
#include "pcadv/geometry.hpp"

namespace pcadv {

enum class Arch { pointnet_tiny, pointnet_wide, edgeconv_lite };

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::pointnet_tiny: return "pointnet_tiny";
    case Arch::pointnet_wide: return "pointnet_wide";
    case Arch::edgeconv_lite: return "edgeconv_lite";
  }
  return "unknown";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "pointnet_tiny") return Arch::pointnet_tiny;
  if (s == "pointnet_wide") return Arch::pointnet_wide;
  if (s == "edgeconv_lite") return Arch::edgeconv_lite;
  throw InvalidArgument("unknown architecture '" + std::string(s) + "'");
}

struct ClassifierModel {
  Arch arch = Arch::pointnet_tiny;
  std::size_t k_classes = 0;
  std::size_t knn_k = 8;
  TensorBundle params;
};

namespace detail {

struct ArchLayout {
  std::vector<std::size_t> point_dims;  // per-point chain (input dim first)
  std::vector<std::size_t> head_dims;   // pooled dim first, hidden..., K appended at build
  bool edge = false;
  std::size_t edge_out = 0;
};

inline ArchLayout arch_layout(Arch a) {
  switch (a) {
    case Arch::pointnet_tiny: return {{3, 32, 64, 128}, {128, 64}, false, 0};
    case Arch::pointnet_wide: return {{3, 64, 128, 256}, {256, 128}, false, 0};
    case Arch::edgeconv_lite: return {{64, 128}, {128, 64}, true, 64};
  }
  throw InvalidArgument("unknown architecture");
}

inline std::string point_layer_name(std::size_t i) { return "point" + std::to_string(i + 1); }
inline std::string head_layer_name(std::size_t i) { return "head" + std::to_string(i + 1); }

}  // namespace detail

/// Fresh classifier with Glorot-uniform weights and zero biases.
inline ClassifierModel make_classifier(Arch arch, std::size_t k_classes, std::uint64_t seed,
                                       std::size_t knn_k = 8) {
  if (k_classes < 2) throw InvalidArgument("classifier needs at least 2 classes");
  ClassifierModel m{arch, k_classes, knn_k, {}};
  Rng rng(seed);
  const auto layout = detail::arch_layout(arch);
  if (layout.edge) nn::add_dense_params(m.params, "edge1", 6, layout.edge_out, rng);
  for (std::size_t i = 0; i + 1 < layout.point_dims.size(); ++i)
    nn::add_dense_params(m.params, detail::point_layer_name(i), layout.point_dims[i], layout.point_dims[i + 1], rng);
  auto head = layout.head_dims;
  head.push_back(k_classes);
  for (std::size_t i = 0; i + 1 < head.size(); ++i)
    nn::add_dense_params(m.params, detail::head_layer_name(i), head[i], head[i + 1], rng);
  return m;
}

/// Everything the backward pass needs from a forward pass.
template <typename T>
struct ClassifierTape {
  std::size_t n = 0;
  std::vector<T> input;                 // n x 3
  NeighborTable knn;                    // edge arch only
  std::vector<std::int32_t> edge_arg;   // n x C: winning neighbour slot, -1 if inactive
  std::vector<T> edge_out;              // n x C
  std::vector<std::vector<T>> point_acts;
  std::vector<T> pooled;
  std::vector<std::uint32_t> pool_arg;
  std::vector<std::vector<T>> head_acts;  // hidden head activations
  std::vector<T> logits;
};

/// Parameter gradients, one entry per layer in forward order.
template <typename T>
struct ClassifierGrads {
  std::optional<nn::DenseGrad<T>> edge;
  std::vector<nn::DenseGrad<T>> point;
  std::vector<nn::DenseGrad<T>> head;
};

/// A classifier with weights unpacked into scalar type T, ready for repeated
/// forward/backward evaluation.
template <typename T>
class ClassifierNet {
 public:
  explicit ClassifierNet(const ClassifierModel& m) : arch_(m.arch), k_classes_(m.k_classes), knn_k_(m.knn_k) {
    const auto layout = detail::arch_layout(m.arch);
    if (layout.edge) edge_ = nn::DenseLayer<T>::from_bundle(m.params, "edge1");
    for (std::size_t i = 0; i + 1 < layout.point_dims.size(); ++i)
      point_.push_back(nn::DenseLayer<T>::from_bundle(m.params, detail::point_layer_name(i)));
    for (std::size_t i = 0; i < layout.head_dims.size(); ++i)
      head_.push_back(nn::DenseLayer<T>::from_bundle(m.params, detail::head_layer_name(i)));
    if (head_.back().out != k_classes_) throw InvalidInput("classifier head does not produce k_classes logits");
    if (edge_ && (edge_->in != 6 || edge_->out != point_.front().in))
      throw InvalidInput("edge layer shape inconsistent with architecture");
  }

  Arch arch() const { return arch_; }
  std::size_t k_classes() const { return k_classes_; }

  ClassifierGrads<T> zero_grads() const {
    ClassifierGrads<T> g;
    if (edge_) g.edge.emplace(*edge_);
    for (const auto& l : point_) g.point.emplace_back(l);
    for (const auto& l : head_) g.head.emplace_back(l);
    return g;
  }

  /// Logits for an interleaved xyz buffer. Fills `tape` when non-null.
  std::vector<T> forward(std::span<const T> xyz, ClassifierTape<T>* tape = nullptr) const {
    if (xyz.empty() || xyz.size() % 3 != 0) throw InvalidInput("classifier input must be a nonempty N x 3 array");
    const std::size_t n = xyz.size() / 3;
    ClassifierTape<T> local;
    ClassifierTape<T>& t = tape ? *tape : local;
    t.n = n;
    t.input.assign(xyz.begin(), xyz.end());
    nn::check_finite(t.input, "input");

    t.point_acts.resize(point_.size());
    const T* cur = t.input.data();
    if (edge_) {
      edge_forward(t);
      cur = t.edge_out.data();
    }
    for (std::size_t li = 0; li < point_.size(); ++li) {
      auto& act = t.point_acts[li];
      act.resize(n * point_[li].out);
      nn::dense_forward(point_[li], cur, n, act.data());
      nn::check_finite(act, point_[li].name);
      nn::relu_inplace(act);
      cur = act.data();
    }
    nn::max_pool_rows(t.point_acts.back(), n, point_.back().out, t.pooled, t.pool_arg);

    t.head_acts.resize(head_.size() - 1);
    std::vector<T> h = t.pooled;
    for (std::size_t li = 0; li < head_.size(); ++li) {
      std::vector<T> y(head_[li].out);
      nn::dense_forward(head_[li], h.data(), 1, y.data());
      nn::check_finite(y, head_[li].name);
      if (li + 1 < head_.size()) {
        nn::relu_inplace(y);
        t.head_acts[li] = y;
      }
      h = std::move(y);
    }
    t.logits = h;
    return h;
  }

  /// Back-propagates `dlogits`. Writes dLoss/dx into `dx` (size 3N) when
  /// non-null and accumulates parameter gradients into `grads` when non-null.
  void backward(const ClassifierTape<T>& t, std::span<const T> dlogits, T* dx, ClassifierGrads<T>* grads) const {
    const std::size_t n = t.n;
    // Head.
    std::vector<T> d(dlogits.begin(), dlogits.end());
    for (std::size_t li = head_.size(); li-- > 0;) {
      const std::vector<T>& in = li == 0 ? t.pooled : t.head_acts[li - 1];
      std::vector<T> din(head_[li].in);
      nn::dense_backward(head_[li], in.data(), d.data(), 1, nullptr, din.data(), grads ? &grads->head[li] : nullptr);
      if (li > 0) nn::relu_backward(t.head_acts[li - 1], din, din.size(), nullptr);
      d = std::move(din);
    }
    // Max pool: route to the winning point of each channel.
    const std::size_t c_last = point_.back().out;
    std::vector<T> dact(n * c_last, T(0));
    for (std::size_t c = 0; c < c_last; ++c) dact[t.pool_arg[c] * c_last + c] += d[c];

    std::vector<char> active;
    for (std::size_t li = point_.size(); li-- > 0;) {
      nn::relu_backward(t.point_acts[li], dact, point_[li].out, &active);
      const T* in = li > 0 ? t.point_acts[li - 1].data() : (edge_ ? t.edge_out.data() : t.input.data());
      const bool need_dx = li > 0 || edge_ || dx;
      std::vector<T> din(need_dx ? n * point_[li].in : 0);
      nn::dense_backward(point_[li], in, dact.data(), n, &active, need_dx ? din.data() : nullptr,
                         grads ? &grads->point[li] : nullptr);
      dact = std::move(din);
    }
    if (edge_) {
      edge_backward(t, dact, dx, grads ? &*grads->edge : nullptr);
    } else if (dx) {
      std::copy(dact.begin(), dact.end(), dx);
    }
  }

 private:
  void edge_forward(ClassifierTape<T>& t) const {
    const std::size_t n = t.n, k = knn_k_, c_out = edge_->out;
    if (n <= k)
      throw InvalidInput("edgeconv_lite needs more than knn_k=" + std::to_string(k) + " points, got " +
                         std::to_string(n));
    std::vector<Point> pts(n);
    for (std::size_t i = 0; i < n; ++i)
      pts[i] = {float(t.input[3 * i]), float(t.input[3 * i + 1]), float(t.input[3 * i + 2])};
    t.knn = knn_indices(pts, k);
    t.edge_out.assign(n * c_out, T(0));
    t.edge_arg.assign(n * c_out, -1);
    std::vector<T> h(c_out);
    T e[6];
    for (std::size_t i = 0; i < n; ++i) {
      const T* xi = t.input.data() + 3 * i;
      T* out = t.edge_out.data() + i * c_out;
      std::int32_t* arg = t.edge_arg.data() + i * c_out;
      const auto nb = t.knn.row(i);
      for (std::size_t s = 0; s < k; ++s) {
        const T* xj = t.input.data() + 3 * nb[s];
        e[0] = xi[0], e[1] = xi[1], e[2] = xi[2];
        e[3] = xj[0] - xi[0], e[4] = xj[1] - xi[1], e[5] = xj[2] - xi[2];
        nn::dense_forward(*edge_, e, 1, h.data());
        // ReLU then max over neighbours; only strictly positive values win.
        for (std::size_t c = 0; c < c_out; ++c)
          if (h[c] > out[c]) {
            out[c] = h[c];
            arg[c] = static_cast<std::int32_t>(s);
          }
      }
    }
    nn::check_finite(t.edge_out, edge_->name);
  }

  void edge_backward(const ClassifierTape<T>& t, const std::vector<T>& dout, T* dx, nn::DenseGrad<T>* g) const {
    const std::size_t n = t.n, c_out = edge_->out;
    if (dx)
      for (std::size_t i = 0; i < 3 * n; ++i) dx[i] = T(0);
    const T* w = edge_->w.data();  // 6 x c_out
    for (std::size_t i = 0; i < n; ++i) {
      const T* xi = t.input.data() + 3 * i;
      const auto nb = t.knn.row(i);
      for (std::size_t c = 0; c < c_out; ++c) {
        const T d = dout[i * c_out + c];
        const std::int32_t s = t.edge_arg[i * c_out + c];
        if (d == T(0) || s < 0) continue;
        const std::size_t j = nb[static_cast<std::size_t>(s)];
        const T* xj = t.input.data() + 3 * j;
        if (g) {
          const T e[6] = {xi[0], xi[1], xi[2], xj[0] - xi[0], xj[1] - xi[1], xj[2] - xi[2]};
          for (int r = 0; r < 6; ++r) g->w[r * c_out + c] += e[r] * d;
          g->b[c] += d;
        }
        if (dx) {
          for (int r = 0; r < 3; ++r) {
            const T de_self = d * w[r * c_out + c];
            const T de_rel = d * w[(r + 3) * c_out + c];
            dx[3 * i + r] += de_self - de_rel;
            dx[3 * j + r] += de_rel;
          }
        }
      }
    }
  }

  Arch arch_;
  std::size_t k_classes_;
  std::size_t knn_k_;
  std::optional<nn::DenseLayer<T>> edge_;
  std::vector<nn::DenseLayer<T>> point_;
  std::vector<nn::DenseLayer<T>> head_;
};

/// Packs per-layer gradients into a bundle with the model's parameter layout.
template <typename T>
TensorBundle to_bundle(const ClassifierModel& m, const ClassifierGrads<T>& g) {
  TensorBundle out = m.params.zeros_like();
  if (g.edge) nn::store_grad(out, "edge1", *g.edge);
  for (std::size_t i = 0; i < g.point.size(); ++i) nn::store_grad(out, detail::point_layer_name(i), g.point[i]);
  for (std::size_t i = 0; i < g.head.size(); ++i) nn::store_grad(out, detail::head_layer_name(i), g.head[i]);
  return out;
}

template <typename T = float>
std::vector<T> to_buffer(const PointCloud& x) {
  std::vector<T> out(3 * x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int d = 0; d < 3; ++d) out[3 * i + d] = static_cast<T>(x[i][d]);
  return out;
}

/// Lowest index of the largest entry.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Logits of `m` on `x`.
inline std::vector<float> forward_classifier(const ClassifierModel& m, const PointCloud& x) {
  return ClassifierNet<float>(m).forward(to_buffer(x));
}

inline std::size_t predict(const ClassifierNet<float>& net, const PointCloud& x) {
  const auto z = net.forward(to_buffer(x));
  return argmax<float>(z);
}

}  // namespace pcadv
