#pragma once

// Experiment configuration, read from YAML. Relative paths are resolved
// against the directory of the config file.
//
//   dataset:   {train_per_class, test_per_class, n_points, noise, seed, path?}
//   models:    [{name, checkpoint, hardened_checkpoint?}]
//   attack_ae: path          defense_ae: path
//   attacks:   [{name, norm_type: linf|l2, gamma, kappa, lr, iterations,
//                restarts, mode: untargeted|targeted, epsilons?}]
//   epsilons:  [...]         (used by attacks without their own list)
//   defenses:  [{kind: none|sor|srs|ae|adv_train|dup_net, k, alpha, drop_rate}]
//   n_samples, correct_only, targets: all|k-random, n_targets, seed,
//   output_dir, max_cells?

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "pcadv/attacks.hpp"
#include "pcadv/dataset.hpp"
#include "pcadv/defenses.hpp"

namespace pcadv::harness {

inline const std::vector<double> kLinfGrid = {0.01, 0.04, 0.05, 0.1, 0.18, 0.28, 0.35, 0.45, 0.6, 0.75};
inline const std::vector<double> kL2Grid = {0.1, 0.22, 0.48, 0.72, 1.0, 1.5, 1.8, 2.8, 4.0, 7.0};

struct ModelEntry {
  std::string name;
  std::string checkpoint;
  std::string hardened_checkpoint;  // empty: none
};

struct AttackEntry {
  std::string name;
  AttackConfig config;  // eps is taken from the grid
  std::vector<double> epsilons;
};

enum class TargetSelection { all, k_random };

struct ExperimentConfig {
  DatasetSpec dataset;
  std::string dataset_path;  // empty: generate the test split from `dataset`
  std::vector<ModelEntry> models;
  std::string attack_ae;
  std::string defense_ae;
  std::vector<AttackEntry> attacks;
  std::vector<DefenseConfig> defenses = {DefenseConfig{}};
  std::size_t n_samples = 100;
  bool correct_only = false;
  TargetSelection targets = TargetSelection::k_random;
  std::size_t n_targets = 3;
  std::uint64_t seed = 0;
  std::string output_dir = "results";
  std::optional<std::size_t> max_cells;  // stop after this many work cells (for testing resume)

  const ModelEntry* find_model(std::string_view name) const {
    for (const auto& m : models)
      if (m.name == name) return &m;
    return nullptr;
  }

  void validate() const {
    if (models.empty()) throw ConfigError("config: model roster is empty");
    std::set<std::string> names;
    for (const auto& m : models) {
      if (m.name.empty()) throw ConfigError("config: model with empty name");
      if (!names.insert(m.name).second) throw ConfigError("config: duplicate model name '" + m.name + "'");
    }
    if (attacks.empty()) throw ConfigError("config: no attacks configured");
    std::set<std::string> anames;
    for (const auto& a : attacks) {
      if (!anames.insert(a.name).second) throw ConfigError("config: duplicate attack name '" + a.name + "'");
      if (a.epsilons.empty()) throw ConfigError("config: attack '" + a.name + "' has no epsilon values");
      for (double e : a.epsilons)
        if (!(e >= 0)) throw ConfigError("config: epsilon values must be non-negative");
      if (!std::is_sorted(a.epsilons.begin(), a.epsilons.end()) ||
          std::adjacent_find(a.epsilons.begin(), a.epsilons.end()) != a.epsilons.end())
        throw ConfigError("config: epsilon values of attack '" + a.name + "' must be strictly ascending");
      if (a.config.constraint == ConstraintKind::soft)
        throw ConfigError("config: attack '" + a.name + "' must use a hard constraint (linf or l2)");
      try {
        a.config.validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError("config: attack '" + a.name + "': " + e.what());
      }
      if (a.config.uses_ae() && attack_ae.empty())
        throw ConfigError("config: attack '" + a.name + "' has gamma > 0 but no attack_ae is configured");
    }
    std::set<std::string> dnames;
    for (const auto& d : defenses) {
      if (!dnames.insert(std::string(defense_name(d.kind))).second)
        throw ConfigError("config: defense '" + std::string(defense_name(d.kind)) + "' listed twice");
      if (d.kind == DefenseKind::ae_reconstruct && defense_ae.empty())
        throw ConfigError("config: ae defense requires defense_ae");
    }
    if (n_samples < 1) throw ConfigError("config: n_samples must be >= 1");
    if (n_targets < 1) throw ConfigError("config: n_targets must be >= 1");
  }
};

namespace detail {

template <typename T>
T get_or(const YAML::Node& n, const char* key, T fallback) {
  if (!n[key]) return fallback;
  try {
    return n[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline std::vector<double> doubles(const YAML::Node& n, const char* key) {
  std::vector<double> out;
  if (!n) return out;
  if (!n.IsSequence()) throw ConfigError(std::string("config: '") + key + "' must be a list");
  for (const auto& v : n) out.push_back(v.as<double>());
  return out;
}

}  // namespace detail

/// Parses a config document. `base_dir` resolves relative paths.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML error: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  using detail::get_or;
  ExperimentConfig c;
  try {
    if (const auto d = root["dataset"]) {
      c.dataset.train_per_class = get_or<std::size_t>(d, "train_per_class", c.dataset.train_per_class);
      c.dataset.test_per_class = get_or<std::size_t>(d, "test_per_class", c.dataset.test_per_class);
      c.dataset.n_points = get_or<std::size_t>(d, "n_points", c.dataset.n_points);
      c.dataset.noise_sigma = get_or<double>(d, "noise", c.dataset.noise_sigma);
      c.dataset.seed = get_or<std::uint64_t>(d, "seed", c.dataset.seed);
      c.dataset_path = detail::resolve(base_dir, get_or<std::string>(d, "path", ""));
    }
    for (const auto& m : root["models"]) {
      ModelEntry e;
      e.name = get_or<std::string>(m, "name", "");
      e.checkpoint = detail::resolve(base_dir, get_or<std::string>(m, "checkpoint", ""));
      e.hardened_checkpoint = detail::resolve(base_dir, get_or<std::string>(m, "hardened_checkpoint", ""));
      if (e.checkpoint.empty()) throw ConfigError("config: model '" + e.name + "' has no checkpoint");
      c.models.push_back(std::move(e));
    }
    c.attack_ae = detail::resolve(base_dir, get_or<std::string>(root, "attack_ae", ""));
    c.defense_ae = detail::resolve(base_dir, get_or<std::string>(root, "defense_ae", ""));
    const auto global_eps = detail::doubles(root["epsilons"], "epsilons");
    for (const auto& a : root["attacks"]) {
      AttackEntry e;
      e.name = get_or<std::string>(a, "name", "");
      if (e.name.empty()) throw ConfigError("config: attack with empty name");
      auto& k = e.config;
      k.constraint = parse_constraint(get_or<std::string>(a, "norm_type", "linf"));
      k.mode = parse_attack_mode(get_or<std::string>(a, "mode", "untargeted"));
      k.gamma = get_or<double>(a, "gamma", k.gamma);
      k.kappa = get_or<double>(a, "kappa", k.kappa);
      k.lr = get_or<double>(a, "lr", k.lr);
      k.iterations = get_or<std::size_t>(a, "iterations", k.iterations);
      k.restarts = get_or<std::size_t>(a, "restarts", k.restarts);
      e.epsilons = detail::doubles(a["epsilons"], "epsilons");
      if (e.epsilons.empty())
        e.epsilons = !global_eps.empty() ? global_eps
                                         : (k.constraint == ConstraintKind::hard_l2 ? kL2Grid : kLinfGrid);
      c.attacks.push_back(std::move(e));
    }
    if (const auto ds = root["defenses"]) {
      c.defenses.clear();
      for (const auto& d : ds) {
        DefenseConfig dc;
        dc.kind = parse_defense(d.IsScalar() ? d.as<std::string>() : get_or<std::string>(d, "kind", "none"));
        if (d.IsMap()) {
          dc.sor_k = get_or<std::size_t>(d, "k", dc.sor_k);
          dc.sor_alpha = get_or<double>(d, "alpha", dc.sor_alpha);
          dc.srs_drop_rate = get_or<double>(d, "drop_rate", dc.srs_drop_rate);
        }
        try {
          dc.validate();
        } catch (const InvalidArgument& e) {
          throw ConfigError(std::string("config: ") + e.what());
        }
        c.defenses.push_back(dc);
      }
    }
    c.n_samples = get_or<std::size_t>(root, "n_samples", c.n_samples);
    c.correct_only = get_or<bool>(root, "correct_only", c.correct_only);
    const auto targets = get_or<std::string>(root, "targets", "k-random");
    if (targets == "all")
      c.targets = TargetSelection::all;
    else if (targets == "k-random")
      c.targets = TargetSelection::k_random;
    else
      throw ConfigError("config: targets must be 'all' or 'k-random'");
    c.n_targets = get_or<std::size_t>(root, "n_targets", c.n_targets);
    c.seed = get_or<std::uint64_t>(root, "seed", c.seed);
    c.output_dir = detail::resolve(base_dir, get_or<std::string>(root, "output_dir", c.output_dir));
    if (root["max_cells"]) c.max_cells = root["max_cells"].as<std::size_t>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

}  // namespace pcadv::harness
