#pragma once

// Input-transformation defenses (outlier removal, random sampling, AE
// reconstruction) and adversarial training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcadv/attacks.hpp"
#include "pcadv/diffnet/training.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/rng.hpp"

namespace pcadv {

enum class DefenseKind { none, sor, srs, ae_reconstruct, adversarial_training, dup_net };

inline std::string_view defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::sor: return "sor";
    case DefenseKind::srs: return "srs";
    case DefenseKind::ae_reconstruct: return "ae";
    case DefenseKind::adversarial_training: return "adv_train";
    case DefenseKind::dup_net: return "dup_net";
  }
  return "unknown";
}

inline DefenseKind parse_defense(std::string_view s) {
  if (s == "none") return DefenseKind::none;
  if (s == "sor") return DefenseKind::sor;
  if (s == "srs") return DefenseKind::srs;
  if (s == "ae") return DefenseKind::ae_reconstruct;
  if (s == "adv_train") return DefenseKind::adversarial_training;
  if (s == "dup_net") return DefenseKind::dup_net;
  throw InvalidArgument("unknown defense '" + std::string(s) + "' (expected none|sor|srs|ae|adv_train|dup_net)");
}

struct DefenseConfig {
  DefenseKind kind = DefenseKind::none;
  std::size_t sor_k = 2;
  double sor_alpha = 1.1;
  double srs_drop_rate = 0.1;
  double mix_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (sor_k < 1) throw InvalidArgument("defense: sor k must be >= 1");
    if (!(sor_alpha >= 0)) throw InvalidArgument("defense: sor alpha must be non-negative");
    if (!(srs_drop_rate >= 0 && srs_drop_rate < 1)) throw InvalidArgument("defense: srs drop rate must lie in [0, 1)");
    if (!(mix_fraction > 0 && mix_fraction <= 1)) throw InvalidArgument("defense: mix fraction must lie in (0, 1]");
  }
};

/// Statistical outlier removal: drops points whose mean distance to their k
/// nearest neighbours exceeds mu + alpha * sigma (population statistics).
inline PointCloud sor_defense(const PointCloud& x, std::size_t k, double alpha) {
  if (k < 1 || k >= x.size()) throw InvalidArgument("sor_defense: need 1 <= k < N");
  if (!(alpha >= 0)) throw InvalidArgument("sor_defense: alpha must be non-negative");
  const auto nn = knn_indices(x, k);
  const std::size_t n = x.size();
  std::vector<double> mean_d(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (auto j : nn.row(i)) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = double(x[i][c]) - double(x[j][c]);
        d2 += diff * diff;
      }
      s += std::sqrt(d2);
    }
    mean_d[i] = s / static_cast<double>(k);
  }
  double mu = 0;
  for (double v : mean_d) mu += v;
  mu /= static_cast<double>(n);
  double var = 0;
  for (double v : mean_d) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  const double threshold = mu + alpha * sigma;

  std::vector<Point> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (mean_d[i] <= threshold) kept.push_back(x[i]);
  if (kept.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (mean_d[i] < mean_d[best]) best = i;
    kept.push_back(x[best]);
  }
  return PointCloud(std::move(kept));
}

/// Number of points kept by srs_defense: ceil(N * (1 - drop_rate)), with a
/// small tolerance so that e.g. 100 * 0.9 is 90 rather than 91.
inline std::size_t srs_keep_count(std::size_t n, double drop_rate) {
  const double keep = static_cast<double>(n) * (1.0 - drop_rate);
  const auto k = static_cast<std::size_t>(std::ceil(keep - 1e-9 * std::max(1.0, keep)));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Simple random sampling: keeps srs_keep_count(N, drop_rate) points chosen
/// uniformly without replacement, in their original order.
inline PointCloud srs_defense(const PointCloud& x, double drop_rate, std::uint64_t seed) {
  if (!(drop_rate >= 0 && drop_rate < 1)) throw InvalidArgument("srs_defense: drop rate must lie in [0, 1)");
  const std::size_t n = x.size();
  const std::size_t keep = srs_keep_count(n, drop_rate);
  if (keep == n) return x;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<Point> pts;
  pts.reserve(keep);
  for (auto i : idx) pts.push_back(x[i]);
  return PointCloud(std::move(pts));
}

/// Replaces the cloud with its reconstruction by a (separately trained) AE.
inline PointCloud ae_defense(const AEModel& g, const PointCloud& x) {
  if (g.n_points != x.size())
    throw InvalidInput("ae_defense: auto-encoder expects " + std::to_string(g.n_points) + " points, got " +
                       std::to_string(x.size()));
  return forward_ae(g, x);
}

/// Cheap gamma = 0 attack used to generate adversarial training samples.
inline AttackConfig adversarial_training_preset(double eps_linf = 0.18) {
  AttackConfig c = baseline_preset(eps_linf);
  c.iterations = 50;
  c.restarts = 1;
  return c;
}

/// Trains a classifier where, in every batch, round(mix_fraction * batch)
/// samples are replaced by baseline attacks against the current model.
/// mix_fraction = 0 is plain training.
inline ClassifierModel adversarial_training(const LabeledDataset& data, const AttackConfig& attack_preset,
                                            double mix_fraction, const ClassifierTrainConfig& hyper,
                                            std::uint64_t seed, TrainReport* report = nullptr) {
  if (!(mix_fraction >= 0 && mix_fraction <= 1))
    throw InvalidArgument("adversarial_training: mix fraction must lie in [0, 1]");
  if (attack_preset.constraint == ConstraintKind::soft)
    throw InvalidArgument("adversarial_training: attack preset must use a hard constraint");
  if (attack_preset.uses_ae()) throw InvalidArgument("adversarial_training: attack preset must have gamma = 0");
  attack_preset.validate();
  if (mix_fraction == 0) return train_classifier(data, hyper, seed, report);

  const BatchTransform transform = [&](const ClassifierModel& current, std::vector<PointCloud>& clouds,
                                       std::span<const std::uint32_t> labels, std::size_t epoch,
                                       std::size_t batch) {
    const auto count = static_cast<std::size_t>(std::llround(mix_fraction * static_cast<double>(clouds.size())));
    parallel_for(std::min(count, clouds.size()), [&](std::size_t i) {
      AttackConfig cfg = attack_preset;
      cfg.seed = SeedHasher(seed)
                     .add("adv")
                     .add(std::uint64_t{epoch})
                     .add(std::uint64_t{batch})
                     .add(std::uint64_t{i})
                     .value();
      const auto out = pgd_attack(current, nullptr, clouds[i], labels[i], cfg);
      clouds[i] = perturb(clouds[i], out.delta);
    });
  };
  return train_classifier(data, hyper, seed, report, transform);
}

/// Applies an input-transformation defense. `defense_ae` is required for
/// the AE defense; adversarial training is a model-level defense and is
/// the identity here.
inline PointCloud apply_defense(const DefenseConfig& cfg, const PointCloud& x, const AEModel* defense_ae,
                                std::uint64_t sample_seed) {
  switch (cfg.kind) {
    case DefenseKind::none:
    case DefenseKind::adversarial_training: return x;
    case DefenseKind::sor: return sor_defense(x, cfg.sor_k, cfg.sor_alpha);
    case DefenseKind::srs: return srs_defense(x, cfg.srs_drop_rate, SeedHasher(cfg.seed).add(sample_seed).value());
    case DefenseKind::ae_reconstruct:
      if (!defense_ae) throw ConfigError("ae defense requires a defense auto-encoder");
      return ae_defense(*defense_ae, x);
    case DefenseKind::dup_net: throw ConfigError("defense 'dup_net' is unsupported");
  }
  return x;
}

}  // namespace pcadv
