#pragma once

// Mini-batch Adam training for the classifiers (softmax cross-entropy) and
// the auto-encoder (symmetric Chamfer reconstruction loss).
//
// Per-sample gradients are computed independently (possibly in parallel) and
// reduced in sample order, so results do not depend on the worker count.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "pcadv/dataset.hpp"
#include "pcadv/diffnet/adam.hpp"
#include "pcadv/diffnet/autoencoder.hpp"
#include "pcadv/diffnet/classifier.hpp"
#include "pcadv/parallel.hpp"

namespace pcadv {

struct ClassifierTrainConfig {
  Arch arch = Arch::pointnet_tiny;
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t knn_k = 8;
};

struct AETrainConfig {
  std::size_t latent_dim = 64;
  std::size_t epochs = 120;
  std::size_t batch_size = 16;
  double lr = 1e-3;
};

struct TrainReport {
  std::vector<double> epoch_loss;      // mean training loss per epoch
  std::vector<double> epoch_accuracy;  // classifier only: training accuracy per epoch
};

/// Called before each classifier batch with the current model; may replace
/// entries of `clouds` (used by adversarial training).
using BatchTransform = std::function<void(const ClassifierModel& current, std::vector<PointCloud>& clouds,
                                          std::span<const std::uint32_t> labels, std::size_t epoch,
                                          std::size_t batch_index)>;

namespace detail {

inline void add_into(nn::DenseGrad<float>& acc, const nn::DenseGrad<float>& g) {
  for (std::size_t i = 0; i < acc.w.size(); ++i) acc.w[i] += g.w[i];
  for (std::size_t i = 0; i < acc.b.size(); ++i) acc.b[i] += g.b[i];
}

inline void scale(TensorBundle& b, float s) {
  for (auto& [_, t] : b)
    for (auto& v : t.data) v *= s;
}

/// Softmax cross-entropy and its gradient w.r.t. the logits.
inline double cross_entropy(std::span<const float> z, std::uint32_t label, std::vector<float>& dz) {
  double m = z[0];
  for (float v : z) m = std::max(m, double(v));
  double s = 0;
  for (float v : z) s += std::exp(double(v) - m);
  const double log_s = std::log(s) + m;
  dz.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    dz[i] = static_cast<float>(std::exp(double(z[i]) - log_s) - (i == label ? 1.0 : 0.0));
  return log_s - z[label];
}

inline std::vector<std::size_t> epoch_order(Rng& rng, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// Trains a classifier from scratch. Deterministic given `seed`.
inline ClassifierModel train_classifier(const LabeledDataset& data, const ClassifierTrainConfig& cfg,
                                        std::uint64_t seed, TrainReport* report = nullptr,
                                        const BatchTransform& transform = {}) {
  if (data.empty()) throw InvalidInput("train_classifier: empty dataset");
  data.validate();
  if (cfg.batch_size == 0) throw InvalidArgument("batch size must be positive");
  ClassifierModel model = make_classifier(cfg.arch, data.n_classes, SeedHasher(seed).add("init").value(), cfg.knn_k);
  Rng shuffle_rng(SeedHasher(seed).add("shuffle").value());
  AdamState adam = AdamState::init(model.params);
  const AdamConfig adam_cfg{cfg.lr};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(shuffle_rng, data.size());
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t bs = std::min(cfg.batch_size, order.size() - start);
      std::vector<PointCloud> clouds;
      std::vector<std::uint32_t> labels;
      clouds.reserve(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        clouds.push_back(data.samples[order[start + i]].cloud);
        labels.push_back(data.samples[order[start + i]].label);
      }
      if (transform) transform(model, clouds, labels, epoch, batch);

      const ClassifierNet<float> net(model);
      std::vector<ClassifierGrads<float>> grads(bs);
      std::vector<double> losses(bs);
      std::vector<char> hit(bs);
      parallel_for(bs, [&](std::size_t i) {
        ClassifierTape<float> tape;
        const auto z = net.forward(to_buffer(clouds[i]), &tape);
        std::vector<float> dz;
        losses[i] = detail::cross_entropy(z, labels[i], dz);
        hit[i] = argmax<float>(z) == labels[i];
        grads[i] = net.zero_grads();
        net.backward(tape, dz, nullptr, &grads[i]);
      });
      ClassifierGrads<float>& total = grads[0];
      for (std::size_t i = 1; i < bs; ++i) {
        if (total.edge) detail::add_into(*total.edge, *grads[i].edge);
        for (std::size_t l = 0; l < total.point.size(); ++l) detail::add_into(total.point[l], grads[i].point[l]);
        for (std::size_t l = 0; l < total.head.size(); ++l) detail::add_into(total.head[l], grads[i].head[l]);
      }
      for (std::size_t i = 0; i < bs; ++i) loss_sum += losses[i], correct += hit[i];
      TensorBundle g = to_bundle(model, total);
      detail::scale(g, 1.0f / static_cast<float>(bs));
      auto step = adam_update(adam, model.params, g, adam_cfg);
      adam = std::move(step.state);
      model.params = std::move(step.params);
    }
    if (report) {
      report->epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
      report->epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(data.size()));
    }
  }
  return model;
}

/// Symmetric Chamfer between target `x` and reconstruction `y` (interleaved
/// buffers) with the gradient w.r.t. `y` accumulated into `dy`.
inline double symmetric_chamfer_loss(std::span<const float> x, std::span<const float> y, float* dy) {
  return chamfer_directed_with_grad(x, y, nullptr, dy) + chamfer_directed_with_grad(y, x, dy, nullptr);
}

/// Trains an auto-encoder with the symmetric Chamfer reconstruction loss.
inline AEModel train_ae(const LabeledDataset& data, const AETrainConfig& cfg, std::uint64_t seed,
                        TrainReport* report = nullptr) {
  if (data.empty()) throw InvalidInput("train_ae: empty dataset");
  data.validate();
  if (cfg.batch_size == 0) throw InvalidArgument("batch size must be positive");
  AEModel model = make_autoencoder(data.n_points, cfg.latent_dim, SeedHasher(seed).add("init").value());
  Rng shuffle_rng(SeedHasher(seed).add("shuffle").value());
  AdamState adam = AdamState::init(model.params);
  const AdamConfig adam_cfg{cfg.lr};

  std::vector<std::vector<float>> buffers(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) buffers[i] = to_buffer(data.samples[i].cloud);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(shuffle_rng, data.size());
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, order.size() - start);
      const AENet<float> net(model);
      std::vector<AEGrads<float>> grads(bs);
      std::vector<double> losses(bs);
      parallel_for(bs, [&](std::size_t i) {
        const auto& x = buffers[order[start + i]];
        AETape<float> tape;
        const auto y = net.forward(x, &tape);
        std::vector<float> dy(y.size(), 0.0f);
        losses[i] = symmetric_chamfer_loss(x, y, dy.data());
        grads[i] = net.zero_grads();
        net.backward(tape, dy, nullptr, &grads[i]);
      });
      AEGrads<float>& total = grads[0];
      for (std::size_t i = 1; i < bs; ++i) {
        for (std::size_t l = 0; l < total.enc.size(); ++l) detail::add_into(total.enc[l], grads[i].enc[l]);
        for (std::size_t l = 0; l < total.dec.size(); ++l) detail::add_into(total.dec[l], grads[i].dec[l]);
      }
      for (double l : losses) loss_sum += l;
      TensorBundle g = to_bundle(model, total);
      detail::scale(g, 1.0f / static_cast<float>(bs));
      auto step = adam_update(adam, model.params, g, adam_cfg);
      adam = std::move(step.state);
      model.params = std::move(step.params);
    }
    if (report) report->epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return model;
}

/// Fraction of samples whose argmax prediction equals the label.
inline double accuracy(const ClassifierModel& m, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  const ClassifierNet<float> net(m);
  std::vector<char> hit(data.size());
  parallel_for(data.size(), [&](std::size_t i) { hit[i] = predict(net, data.samples[i].cloud) == data.samples[i].label; });
  std::size_t c = 0;
  for (char h : hit) c += h;
  return static_cast<double>(c) / static_cast<double>(data.size());
}

}  // namespace pcadv
