#pragma once

// Point-cloud auto-encoder: a pointnet-style encoder (3-64-128-q per point,
// max-pooled to a q-dim code) and a dense decoder (q-128-3N) whose output is
// read as N points.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcadv/diffnet/layers.hpp"
#include "pcadv/geometry.hpp"

namespace pcadv {

struct AEModel {
  std::size_t latent_dim = 64;
  std::size_t n_points = 0;
  TensorBundle params;
};

inline AEModel make_autoencoder(std::size_t n_points, std::size_t latent_dim, std::uint64_t seed) {
  if (latent_dim < 1) throw InvalidArgument("auto-encoder latent dimension must be >= 1");
  if (n_points < 1) throw InvalidArgument("auto-encoder needs at least one output point");
  AEModel m{latent_dim, n_points, {}};
  Rng rng(seed);
  nn::add_dense_params(m.params, "enc1", 3, 64, rng);
  nn::add_dense_params(m.params, "enc2", 64, 128, rng);
  nn::add_dense_params(m.params, "enc3", 128, latent_dim, rng);
  nn::add_dense_params(m.params, "dec1", latent_dim, 128, rng);
  nn::add_dense_params(m.params, "dec2", 128, 3 * n_points, rng);
  return m;
}

template <typename T>
struct AETape {
  std::size_t n = 0;
  std::vector<T> input;
  std::vector<std::vector<T>> enc_acts;  // 3 per-point activations
  std::vector<T> code;
  std::vector<std::uint32_t> code_arg;
  std::vector<T> hidden;  // decoder hidden (post-ReLU)
  std::vector<T> output;  // 3N
};

template <typename T>
struct AEGrads {
  std::vector<nn::DenseGrad<T>> enc;
  std::vector<nn::DenseGrad<T>> dec;
};

inline const char* const kEncoderNames[] = {"enc1", "enc2", "enc3"};
inline const char* const kDecoderNames[] = {"dec1", "dec2"};

template <typename T>
class AENet {
 public:
  explicit AENet(const AEModel& m) : n_points_(m.n_points) {
    for (const char* name : kEncoderNames) enc_.push_back(nn::DenseLayer<T>::from_bundle(m.params, name));
    for (const char* name : kDecoderNames) dec_.push_back(nn::DenseLayer<T>::from_bundle(m.params, name));
    if (enc_.back().out != m.latent_dim || dec_.front().in != m.latent_dim || dec_.back().out != 3 * m.n_points)
      throw InvalidInput("auto-encoder parameter shapes inconsistent with latent_dim / n_points");
  }

  std::size_t n_points() const { return n_points_; }

  AEGrads<T> zero_grads() const {
    AEGrads<T> g;
    for (const auto& l : enc_) g.enc.emplace_back(l);
    for (const auto& l : dec_) g.dec.emplace_back(l);
    return g;
  }

  /// Reconstruction (3N interleaved) of an N x 3 input.
  std::vector<T> forward(std::span<const T> xyz, AETape<T>* tape = nullptr) const {
    if (xyz.size() != 3 * n_points_)
      throw InvalidInput("auto-encoder built for " + std::to_string(n_points_) + " points, got " +
                         std::to_string(xyz.size() / 3));
    AETape<T> local;
    AETape<T>& t = tape ? *tape : local;
    const std::size_t n = n_points_;
    t.n = n;
    t.input.assign(xyz.begin(), xyz.end());
    nn::check_finite(t.input, "input");
    t.enc_acts.resize(enc_.size());
    const T* cur = t.input.data();
    for (std::size_t li = 0; li < enc_.size(); ++li) {
      auto& act = t.enc_acts[li];
      act.resize(n * enc_[li].out);
      nn::dense_forward(enc_[li], cur, n, act.data());
      nn::check_finite(act, enc_[li].name);
      nn::relu_inplace(act);
      cur = act.data();
    }
    nn::max_pool_rows(t.enc_acts.back(), n, enc_.back().out, t.code, t.code_arg);

    t.hidden.resize(dec_[0].out);
    nn::dense_forward(dec_[0], t.code.data(), 1, t.hidden.data());
    nn::check_finite(t.hidden, dec_[0].name);
    nn::relu_inplace(t.hidden);
    t.output.resize(dec_[1].out);
    nn::dense_forward(dec_[1], t.hidden.data(), 1, t.output.data());
    nn::check_finite(t.output, dec_[1].name);
    return t.output;
  }

  /// Back-propagates a gradient on the 3N output.
  void backward(const AETape<T>& t, std::span<const T> dout, T* dx, AEGrads<T>* grads) const {
    const std::size_t n = t.n;
    std::vector<T> dhidden(dec_[1].in);
    nn::dense_backward(dec_[1], t.hidden.data(), dout.data(), 1, nullptr, dhidden.data(),
                       grads ? &grads->dec[1] : nullptr);
    nn::relu_backward(t.hidden, dhidden, dhidden.size(), nullptr);
    std::vector<T> dcode(dec_[0].in);
    nn::dense_backward(dec_[0], t.code.data(), dhidden.data(), 1, nullptr, dcode.data(),
                       grads ? &grads->dec[0] : nullptr);

    const std::size_t c_last = enc_.back().out;
    std::vector<T> dact(n * c_last, T(0));
    for (std::size_t c = 0; c < c_last; ++c) dact[t.code_arg[c] * c_last + c] += dcode[c];
    std::vector<char> active;
    for (std::size_t li = enc_.size(); li-- > 0;) {
      nn::relu_backward(t.enc_acts[li], dact, enc_[li].out, &active);
      const T* in = li > 0 ? t.enc_acts[li - 1].data() : t.input.data();
      const bool need_dx = li > 0 || dx;
      std::vector<T> din(need_dx ? n * enc_[li].in : 0);
      nn::dense_backward(enc_[li], in, dact.data(), n, &active, need_dx ? din.data() : nullptr,
                         grads ? &grads->enc[li] : nullptr);
      dact = std::move(din);
    }
    if (dx) std::copy(dact.begin(), dact.end(), dx);
  }

 private:
  std::size_t n_points_;
  std::vector<nn::DenseLayer<T>> enc_;
  std::vector<nn::DenseLayer<T>> dec_;
};

template <typename T>
TensorBundle to_bundle(const AEModel& m, const AEGrads<T>& g) {
  TensorBundle out = m.params.zeros_like();
  for (std::size_t i = 0; i < g.enc.size(); ++i) nn::store_grad(out, kEncoderNames[i], g.enc[i]);
  for (std::size_t i = 0; i < g.dec.size(); ++i) nn::store_grad(out, kDecoderNames[i], g.dec[i]);
  return out;
}

/// G(x): reconstruction with exactly N points.
inline PointCloud forward_ae(const AEModel& g, const PointCloud& x) {
  std::vector<float> buf(3 * x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int d = 0; d < 3; ++d) buf[3 * i + d] = x[i][d];
  return PointCloud::from_flat(AENet<float>(g).forward(buf));
}

}  // namespace pcadv
