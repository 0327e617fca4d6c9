#pragma once

// Attack grid: for every (attack, victim, epsilon) work cell, attack the
// selected test samples on the victim, then evaluate each perturbed sample
// on every roster model under every defense. Work cells run in a fixed
// order; samples inside a cell run in parallel with per-sample seeds, so
// results are independent of scheduling and of interruption.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcadv/attacks.hpp"
#include "pcadv/dataset.hpp"
#include "pcadv/defenses.hpp"
#include "pcadv/diffnet/checkpoint.hpp"
#include "pcadv/harness/config.hpp"
#include "pcadv/harness/records.hpp"
#include "pcadv/parallel.hpp"

namespace pcadv::harness {

/// Loaded models of an experiment.
struct Roster {
  std::vector<std::string> names;
  std::vector<ClassifierModel> models;
  std::vector<std::optional<ClassifierModel>> hardened;
  std::optional<AEModel> attack_ae;
  std::optional<AEModel> defense_ae;

  void add(std::string name, ClassifierModel m, std::optional<ClassifierModel> hard = std::nullopt) {
    names.push_back(std::move(name));
    models.push_back(std::move(m));
    hardened.push_back(std::move(hard));
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ConfigError("model '" + std::string(name) + "' is not in the roster");
  }
};

inline Roster load_roster(const ExperimentConfig& cfg) {
  Roster r;
  auto load_cls = [](const std::string& name, const std::string& path) {
    if (!std::filesystem::exists(path))
      throw ConfigError("checkpoint for model '" + name + "' not found: " + path);
    return load_classifier(path);
  };
  for (const auto& m : cfg.models) {
    std::optional<ClassifierModel> hard;
    if (!m.hardened_checkpoint.empty()) hard = load_cls(m.name + " (hardened)", m.hardened_checkpoint);
    r.add(m.name, load_cls(m.name, m.checkpoint), std::move(hard));
  }
  auto load_ae = [](const char* what, const std::string& path) -> std::optional<AEModel> {
    if (path.empty()) return std::nullopt;
    if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " checkpoint not found: " + path);
    return load_autoencoder(path);
  };
  r.attack_ae = load_ae("attack_ae", cfg.attack_ae);
  r.defense_ae = load_ae("defense_ae", cfg.defense_ae);
  return r;
}

inline LabeledDataset load_test_data(const ExperimentConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path, Split::test);
  return make_dataset(cfg.dataset, Split::test);
}

/// One attack to run inside a work cell.
struct AttackInstance {
  std::size_t sample = 0;
  std::uint32_t label = 0;
  std::uint32_t target = 0;  // targeted mode only
};

/// Picks the samples (and targets) attacked on a victim: the first
/// n_samples test samples, optionally only those the victim classifies
/// correctly. Targets are drawn per sample and shared across victims.
inline std::vector<AttackInstance> select_instances(const ExperimentConfig& cfg, const AttackConfig& attack,
                                                    const ClassifierModel& victim, const LabeledDataset& test) {
  std::vector<std::size_t> picked;
  if (cfg.correct_only) {
    const ClassifierNet<float> net(victim);
    for (std::size_t i = 0; i < test.size() && picked.size() < cfg.n_samples; ++i)
      if (predict(net, test.samples[i].cloud) == test.samples[i].label) picked.push_back(i);
  } else {
    for (std::size_t i = 0; i < test.size() && i < cfg.n_samples; ++i) picked.push_back(i);
  }
  std::vector<AttackInstance> out;
  for (auto i : picked) {
    const auto label = test.samples[i].label;
    if (attack.mode == AttackMode::untargeted) {
      out.push_back({i, label, 0});
      continue;
    }
    std::vector<std::uint32_t> others;
    for (std::uint32_t t = 0; t < victim.k_classes; ++t)
      if (t != label) others.push_back(t);
    if (cfg.targets == TargetSelection::k_random && cfg.n_targets < others.size()) {
      Rng rng(SeedHasher(cfg.seed).add("targets").add(std::uint64_t{i}).value());
      rng.shuffle(others.begin(), others.end());
      others.resize(cfg.n_targets);
      std::sort(others.begin(), others.end());
    }
    for (auto t : others) out.push_back({i, label, t});
  }
  return out;
}

inline std::uint64_t instance_seed(std::uint64_t global, std::string_view victim, std::string_view attack,
                                   double eps, const AttackInstance& inst) {
  return SeedHasher(global)
      .add(victim)
      .add(attack)
      .add(eps)
      .add(std::uint64_t{inst.sample})
      .add(std::uint64_t{inst.target})
      .value();
}

struct GridStats {
  std::size_t cells_run = 0;
  std::size_t cells_skipped = 0;
  std::size_t attacks_run = 0;
  bool complete = true;
};

using GridLog = std::function<void(const std::string&)>;

namespace detail {

/// Defenses that produce records for transfer model `t`.
inline std::vector<const DefenseConfig*> defenses_for(const ExperimentConfig& cfg, const Roster& roster,
                                                      std::size_t t) {
  std::vector<const DefenseConfig*> out;
  for (const auto& d : cfg.defenses) {
    if (d.kind == DefenseKind::dup_net) continue;
    if (d.kind == DefenseKind::adversarial_training && !roster.hardened[t]) continue;
    out.push_back(&d);
  }
  return out;
}

inline std::vector<CellKey> expected_keys(const ExperimentConfig& cfg, const Roster& roster,
                                          const AttackEntry& a, std::size_t v, double eps) {
  std::vector<CellKey> keys;
  for (std::size_t t = 0; t < roster.names.size(); ++t)
    for (const auto* d : defenses_for(cfg, roster, t))
      keys.push_back({a.name, roster.names[v], roster.names[t], std::string(defense_name(d->kind)), eps});
  return keys;
}

/// Runs one work cell and returns its records in canonical order.
inline std::vector<Record> run_cell(const ExperimentConfig& cfg, const Roster& roster, const LabeledDataset& test,
                                    const AttackEntry& a, std::size_t v, double eps,
                                    const std::vector<AttackInstance>& instances, std::size_t& attacks_run) {
  AttackConfig base = a.config;
  base.eps = eps;
  const AEModel* ae = base.uses_ae() ? &*roster.attack_ae : nullptr;
  const std::size_t n = instances.size();
  std::vector<AttackOutcome> outcomes(n);
  parallel_for(n, [&](std::size_t i) {
    AttackConfig c = base;
    c.target = instances[i].target;
    c.seed = instance_seed(cfg.seed, roster.names[v], a.name, eps, instances[i]);
    outcomes[i] = pgd_attack(roster.models[v], ae, test.samples[instances[i].sample].cloud, instances[i].label, c);
  });
  attacks_run += n;

  double sum_linf = 0, sum_l2 = 0, sum_ch = 0;
  for (const auto& o : outcomes) sum_linf += o.norms.linf, sum_l2 += o.norms.l2, sum_ch += o.norms.chamfer_symmetric;

  std::vector<Record> out;
  for (std::size_t t = 0; t < roster.names.size(); ++t) {
    const ClassifierNet<float> plain(roster.models[t]);
    std::optional<ClassifierNet<float>> hard;
    if (roster.hardened[t]) hard.emplace(*roster.hardened[t]);
    for (const auto* d : defenses_for(cfg, roster, t)) {
      const auto& eval_net = d->kind == DefenseKind::adversarial_training ? *hard : plain;
      std::vector<char> hit(n);
      parallel_for(n, [&](std::size_t i) {
        const auto& inst = instances[i];
        const PointCloud xp = perturb(test.samples[inst.sample].cloud, outcomes[i].delta);
        const auto seed = instance_seed(cfg.seed, roster.names[v], a.name, eps, inst);
        const PointCloud xd = apply_defense(*d, xp, roster.defense_ae ? &*roster.defense_ae : nullptr, seed);
        const auto z = eval_net.forward(to_buffer(xd));
        hit[i] = attack_succeeds<float>(z, base.mode, inst.label, inst.target);
      });
      std::size_t successes = 0;
      for (char h : hit) successes += h;
      Record r;
      r.attack = a.name;
      r.victim = roster.names[v];
      r.transfer = roster.names[t];
      r.defense = std::string(defense_name(d->kind));
      r.norm_type = std::string(constraint_name(base.constraint));
      r.epsilon = eps;
      r.gamma = base.gamma;
      r.kappa = base.kappa;
      r.n_samples = n;
      r.success_rate = n ? static_cast<double>(successes) / static_cast<double>(n) : 0.0;
      r.mean_linf = n ? sum_linf / static_cast<double>(n) : 0.0;
      r.mean_l2 = n ? sum_l2 / static_cast<double>(n) : 0.0;
      r.mean_chamfer_sym = n ? sum_ch / static_cast<double>(n) : 0.0;
      r.seed = cfg.seed;
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline void check_roster(const ExperimentConfig& cfg, const Roster& roster, const LabeledDataset& test) {
  cfg.validate();
  for (const auto& m : cfg.models) roster.index_of(m.name);
  for (const auto& a : cfg.attacks)
    if (a.config.uses_ae() && !roster.attack_ae)
      throw ConfigError("attack '" + a.name + "' needs the attack auto-encoder, which is not loaded");
  for (const auto& d : cfg.defenses)
    if (d.kind == DefenseKind::ae_reconstruct && !roster.defense_ae)
      throw ConfigError("ae defense needs the defense auto-encoder, which is not loaded");
  if (test.empty()) throw InvalidInput("attack grid: empty test set");
  for (std::size_t i = 0; i < roster.models.size(); ++i)
    if (roster.models[i].k_classes != test.n_classes)
      throw ConfigError("model '" + roster.names[i] + "' has " + std::to_string(roster.models[i].k_classes) +
                        " classes, dataset has " + std::to_string(test.n_classes));
}

}  // namespace detail

/// Runs every work cell not already covered by `existing` and returns the
/// complete record set in canonical order (attack, victim, epsilon,
/// transfer, defense). `on_cell` receives each newly computed cell's
/// records as soon as they exist.
inline std::vector<Record> run_attack_grid(const ExperimentConfig& cfg, const Roster& roster,
                                           const LabeledDataset& test, const std::vector<Record>& existing,
                                           GridStats* stats = nullptr,
                                           const std::function<void(const std::vector<Record>&)>& on_cell = {},
                                           const GridLog& log = {}) {
  detail::check_roster(cfg, roster, test);
  GridStats st;
  std::map<CellKey, Record> have;
  for (const auto& r : existing) have.emplace(key_of(r), r);
  for (const auto& d : cfg.defenses)
    if (d.kind == DefenseKind::dup_net && log) log("defense dup_net: unsupported, no records emitted");

  std::vector<Record> all;
  for (const auto& a : cfg.attacks) {
    for (std::size_t v = 0; v < roster.names.size(); ++v) {
      std::optional<std::vector<AttackInstance>> instances;
      for (double eps : a.epsilons) {
        const auto keys = detail::expected_keys(cfg, roster, a, v, eps);
        const bool done = std::all_of(keys.begin(), keys.end(), [&](const CellKey& k) { return have.count(k) > 0; });
        if (done) {
          for (const auto& k : keys) all.push_back(have.at(k));
          ++st.cells_skipped;
          continue;
        }
        if (cfg.max_cells && st.cells_run >= *cfg.max_cells) {
          st.complete = false;
          continue;
        }
        if (!instances) instances = select_instances(cfg, a.config, roster.models[v], test);
        if (log)
          log("cell attack=" + a.name + " victim=" + roster.names[v] + " eps=" + harness::detail::fmt_double(eps) +
              " (" + std::to_string(instances->size()) + " attacks)");
        auto recs = detail::run_cell(cfg, roster, test, a, v, eps, *instances, st.attacks_run);
        ++st.cells_run;
        if (on_cell) on_cell(recs);
        all.insert(all.end(), recs.begin(), recs.end());
      }
    }
  }
  if (stats) *stats = st;
  return all;
}

inline std::string results_path(const ExperimentConfig& cfg) {
  return (std::filesystem::path(cfg.output_dir) / "results.csv").string();
}

/// File-backed grid run: resumes from <output_dir>/results.csv, appends each
/// finished cell, and rewrites the file in canonical order at the end.
inline std::vector<Record> run_attack_grid_to_dir(const ExperimentConfig& cfg, const Roster& roster,
                                                  const LabeledDataset& test, GridStats* stats = nullptr,
                                                  const GridLog& log = {}) {
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = results_path(cfg);
  std::vector<Record> existing;
  if (std::filesystem::exists(path)) existing = read_csv(path);
  else write_csv(path, {});
  auto all = run_attack_grid(cfg, roster, test, existing, stats,
                             [&](const std::vector<Record>& recs) { append_csv(path, recs); }, log);
  write_csv(path, all);
  return all;
}

}  // namespace pcadv::harness
