#pragma once

// Summaries over grid records: transferability matrices, accuracy-vs-epsilon
// curves and the gamma ablation table. Also the auto-encoder quality check.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcadv/harness/grid.hpp"
#include "pcadv/harness/records.hpp"

namespace pcadv::harness {

struct TransferMatrix {
  std::vector<std::string> victims;
  std::vector<std::string> transfers;
  std::vector<std::vector<double>> cells;  // [victim][transfer], epsilon-averaged success
  std::optional<double> score;             // mean of off-diagonal cells; absent for a 1x1 roster

  double at(std::string_view victim, std::string_view transfer) const {
    for (std::size_t v = 0; v < victims.size(); ++v)
      for (std::size_t t = 0; t < transfers.size(); ++t)
        if (victims[v] == victim && transfers[t] == transfer) return cells[v][t];
    throw InvalidArgument("transfer matrix has no cell " + std::string(victim) + " -> " + std::string(transfer));
  }
};

/// Arithmetic mean of the off-diagonal cells (absent when there are none).
inline std::optional<double> off_diagonal_mean(const std::vector<std::vector<double>>& cells) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < cells.size(); ++v)
    for (std::size_t t = 0; t < cells[v].size(); ++t)
      if (v != t) s += cells[v][t], ++n;
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

namespace detail {

inline std::vector<std::string> first_seen(const std::vector<Record>& rs, std::string Record::*field) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : rs)
    if (seen.insert(r.*field).second) out.push_back(r.*field);
  return out;
}

}  // namespace detail

/// cell[v][t] = mean over the attack's epsilon grid of the success rate of
/// attacks optimised on v and evaluated on t, for one defense (default none).
inline TransferMatrix transfer_matrix(const std::vector<Record>& records, std::string_view attack,
                                      std::string_view defense = "none") {
  std::vector<Record> rs;
  for (const auto& r : records)
    if (r.attack == attack && r.defense == defense) rs.push_back(r);
  if (rs.empty()) throw InvalidInput("transfer_matrix: no records for attack '" + std::string(attack) + "'");
  TransferMatrix m;
  m.victims = detail::first_seen(rs, &Record::victim);
  auto names = m.victims;
  for (const auto& t : detail::first_seen(rs, &Record::transfer))
    if (std::find(names.begin(), names.end(), t) == names.end()) names.push_back(t);
  m.victims = names;
  m.transfers = names;
  std::set<double> eps_set;
  for (const auto& r : rs) eps_set.insert(r.epsilon);
  std::map<CellKey, double> rate;
  for (const auto& r : rs) rate[key_of(r)] = r.success_rate;

  std::vector<std::string> missing;
  m.cells.assign(names.size(), std::vector<double>(names.size(), 0.0));
  for (std::size_t v = 0; v < names.size(); ++v)
    for (std::size_t t = 0; t < names.size(); ++t) {
      double s = 0;
      for (double e : eps_set) {
        const auto it = rate.find({std::string(attack), names[v], names[t], std::string(defense), e});
        if (it == rate.end()) {
          missing.push_back(names[v] + "->" + names[t] + "@" + detail::fmt_double(e));
          continue;
        }
        s += it->second;
      }
      m.cells[v][t] = s / static_cast<double>(eps_set.size());
    }
  if (!missing.empty()) {
    std::string msg = "transfer_matrix: missing cells:";
    for (const auto& s : missing) msg += " " + s;
    throw InvalidInput(msg);
  }
  m.score = off_diagonal_mean(m.cells);
  return m;
}

struct SensitivityCurve {
  std::string model;
  std::vector<double> epsilons;
  std::vector<double> accuracy;  // 1 - victim success rate
  double max_increase = 0;       // largest accuracy rise between consecutive epsilons

  bool non_increasing_within(double tol) const { return max_increase <= tol; }
};

/// Per-model accuracy against the model's own attacks (no defense).
inline std::vector<SensitivityCurve> sensitivity_curves(const std::vector<Record>& records, std::string_view attack) {
  std::map<std::string, std::map<double, double>> by_model;
  std::vector<std::string> order;
  for (const auto& r : records) {
    if (r.attack != attack || r.defense != "none" || r.victim != r.transfer) continue;
    if (!by_model.count(r.victim)) order.push_back(r.victim);
    by_model[r.victim][r.epsilon] = 1.0 - r.success_rate;
  }
  std::vector<SensitivityCurve> out;
  for (const auto& name : order) {
    SensitivityCurve c;
    c.model = name;
    for (const auto& [e, acc] : by_model[name]) {
      if (!c.accuracy.empty()) c.max_increase = std::max(c.max_increase, acc - c.accuracy.back());
      c.epsilons.push_back(e);
      c.accuracy.push_back(acc);
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Mean over victims and epsilons of white-box (victim == transfer) success.
inline double mean_victim_success(const std::vector<Record>& records, std::string_view attack,
                                  std::string_view defense = "none") {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.attack == attack && r.defense == defense && r.victim == r.transfer) s += r.success_rate, ++n;
  if (n == 0) throw InvalidInput("no victim records for attack '" + std::string(attack) + "'");
  return s / static_cast<double>(n);
}

struct AblationRow {
  double gamma = 0;
  std::string attack;
  double victim_success = 0;
  std::optional<double> transfer_score;
};

inline std::string gamma_attack_name(const std::string& base, double gamma) {
  return base + "-g" + detail::fmt_double(gamma);
}

/// Config whose attacks are the first attack of `cfg` repeated for each gamma.
inline ExperimentConfig gamma_ablation_config(const ExperimentConfig& cfg, const std::vector<double>& gammas) {
  if (gammas.empty()) throw InvalidArgument("gamma_ablation: empty gamma list");
  if (cfg.attacks.empty()) throw ConfigError("gamma_ablation: config has no attack");
  ExperimentConfig out = cfg;
  out.attacks.clear();
  for (double g : gammas) {
    AttackEntry a = cfg.attacks.front();
    a.config.gamma = g;
    a.name = gamma_attack_name(cfg.attacks.front().name, g);
    out.attacks.push_back(std::move(a));
  }
  out.validate();
  return out;
}

inline std::vector<AblationRow> gamma_ablation_table(const ExperimentConfig& ablation_cfg,
                                                     const std::vector<Record>& records) {
  std::vector<AblationRow> rows;
  for (const auto& a : ablation_cfg.attacks) {
    AblationRow row;
    row.gamma = a.config.gamma;
    row.attack = a.name;
    row.victim_success = mean_victim_success(records, a.name);
    row.transfer_score = transfer_matrix(records, a.name).score;
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Repeats the grid for each gamma and tabulates victim success and
/// transferability. Needs at least two roster models.
inline std::vector<AblationRow> gamma_ablation(const ExperimentConfig& cfg, const Roster& roster,
                                               const LabeledDataset& test, const std::vector<double>& gammas,
                                               std::vector<Record>* records_out = nullptr,
                                               const GridLog& log = {}) {
  if (roster.names.size() < 2) throw ConfigError("gamma_ablation: needs at least two roster models");
  const auto acfg = gamma_ablation_config(cfg, gammas);
  auto records = run_attack_grid(acfg, roster, test, {}, nullptr, {}, log);
  auto rows = gamma_ablation_table(acfg, records);
  if (records_out) *records_out = std::move(records);
  return rows;
}

/// Auto-encoder quality on a test split: mean symmetric Chamfer of each
/// sample to its reconstruction, against the mean symmetric Chamfer of
/// random pairs of samples with different labels.
struct AeQuality {
  double reconstruction = 0;
  double random_pair = 0;
  std::size_t n_pairs = 0;

  double ratio() const { return random_pair > 0 ? reconstruction / random_pair : 0.0; }
};

inline AeQuality ae_quality(const AEModel& ae, const LabeledDataset& test, std::size_t n_pairs, std::uint64_t seed) {
  if (test.empty()) throw InvalidInput("ae_quality: empty test set");
  if (n_pairs < 1) throw InvalidArgument("ae_quality: n_pairs must be >= 1");
  AeQuality q;
  std::vector<double> rec(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    const auto& x = test.samples[i].cloud;
    rec[i] = chamfer(x, forward_ae(ae, x), ChamferMode::symmetric);
  });
  for (double r : rec) q.reconstruction += r;
  q.reconstruction /= static_cast<double>(test.size());

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  Rng rng(SeedHasher(seed).add("ae_quality_pairs").value());
  for (std::size_t tries = 0; pairs.size() < n_pairs && tries < 100 * n_pairs; ++tries) {
    const auto i = static_cast<std::size_t>(rng.below(test.size()));
    const auto j = static_cast<std::size_t>(rng.below(test.size()));
    if (test.samples[i].label != test.samples[j].label) pairs.emplace_back(i, j);
  }
  if (pairs.empty()) throw InvalidInput("ae_quality: test set has a single class");
  std::vector<double> pd(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t k) {
    pd[k] = chamfer(test.samples[pairs[k].first].cloud, test.samples[pairs[k].second].cloud, ChamferMode::symmetric);
  });
  for (double d : pd) q.random_pair += d;
  q.random_pair /= static_cast<double>(pairs.size());
  q.n_pairs = pairs.size();
  return q;
}

}  // namespace pcadv::harness
