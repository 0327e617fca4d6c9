// pcadv: command-line front end for data generation, training, attacks and
// experiment grids.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "pcadv/harness/analysis.hpp"
#include "pcadv/harness/config.hpp"
#include "pcadv/harness/grid.hpp"
#include "pcadv/harness/plot.hpp"
#include "pcadv/pcadv.hpp"

using namespace pcadv;
using namespace pcadv::harness;

namespace {

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f%%", 100.0 * v);
  return buf;
}

void print_matrix(const TransferMatrix& m, const std::string& attack) {
  std::cout << "transfer matrix (" << attack << ", rows: victim, columns: transfer)\n";
  std::cout << std::string(16, ' ');
  for (const auto& t : m.transfers) std::cout << ' ' << std::setw(14) << t;
  std::cout << '\n';
  for (std::size_t v = 0; v < m.victims.size(); ++v) {
    std::cout << std::setw(16) << std::left << m.victims[v] << std::right;
    for (std::size_t t = 0; t < m.transfers.size(); ++t) std::cout << ' ' << std::setw(14) << pct(m.cells[v][t]);
    std::cout << '\n';
  }
  std::cout << "transferability score: " << (m.score ? pct(*m.score) : std::string("n/a")) << "\n\n";
}

std::vector<Record> run_grid(const std::string& config_path) {
  const auto cfg = load_config(config_path);
  const auto roster = load_roster(cfg);
  const auto test = load_test_data(cfg);
  GridStats st;
  auto rs = run_attack_grid_to_dir(cfg, roster, test, &st, log_line);
  std::cerr << "cells run " << st.cells_run << ", skipped " << st.cells_skipped << ", attacks " << st.attacks_run
            << "; results in " << results_path(cfg) << '\n';
  return rs;
}

std::vector<std::string> attack_names(const std::vector<Record>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs)
    if (std::find(out.begin(), out.end(), r.attack) == out.end()) out.push_back(r.attack);
  return out;
}

int cmd_gen_data(const std::string& out, const std::string& split, const DatasetSpec& spec) {
  const Split s = split == "train" ? Split::train : Split::test;
  const auto d = make_dataset(spec, s);
  save_dataset(d, out);
  std::cout << "wrote " << d.size() << " samples (" << d.n_points << " points, " << d.n_classes << " classes) to "
            << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transferable adversarial attacks on point clouds"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_out, gd_split = "train";
  DatasetSpec gd_spec;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic shape dataset (PCDS)");
  gen->add_option("--out", gd_out, "Output file")->required();
  gen->add_option("--split", gd_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--train-per-class", gd_spec.train_per_class, "Training samples per class");
  gen->add_option("--test-per-class", gd_spec.test_per_class, "Test samples per class");
  gen->add_option("--points", gd_spec.n_points, "Points per cloud");
  gen->add_option("--noise", gd_spec.noise_sigma, "Gaussian jitter sigma");
  gen->add_option("--seed", gd_spec.seed, "Dataset seed");

  // train
  std::string tr_arch = "pointnet_tiny", tr_data, tr_out;
  ClassifierTrainConfig tr_cfg;
  std::uint64_t tr_seed = 0;
  double tr_mix = 0, tr_adv_eps = 0.18;
  std::size_t tr_adv_iters = 50;
  auto* train = app.add_subcommand("train", "Train a classifier");
  train->add_option("--arch", tr_arch, "pointnet_tiny | pointnet_wide | edgeconv_lite");
  train->add_option("--data", tr_data, "Training PCDS file")->required();
  train->add_option("--epochs", tr_cfg.epochs, "Epochs");
  train->add_option("--batch", tr_cfg.batch_size, "Batch size");
  train->add_option("--lr", tr_cfg.lr, "Adam learning rate");
  train->add_option("--knn", tr_cfg.knn_k, "EdgeConv neighbours");
  train->add_option("--seed", tr_seed, "Seed");
  train->add_option("--out", tr_out, "Checkpoint path")->required();
  train->add_option("--adv-mix", tr_mix, "Adversarial training: fraction of each batch replaced by attacks");
  train->add_option("--adv-eps", tr_adv_eps, "Adversarial training: linf budget");
  train->add_option("--adv-iters", tr_adv_iters, "Adversarial training: attack iterations");

  // train-ae
  std::string ae_data, ae_out;
  AETrainConfig ae_cfg;
  std::uint64_t ae_seed = 0;
  auto* train_ae_cmd = app.add_subcommand("train-ae", "Train a point-cloud auto-encoder");
  train_ae_cmd->add_option("--data", ae_data, "Training PCDS file")->required();
  train_ae_cmd->add_option("--latent", ae_cfg.latent_dim, "Latent size");
  train_ae_cmd->add_option("--epochs", ae_cfg.epochs, "Epochs");
  train_ae_cmd->add_option("--batch", ae_cfg.batch_size, "Batch size");
  train_ae_cmd->add_option("--lr", ae_cfg.lr, "Adam learning rate");
  train_ae_cmd->add_option("--seed", ae_seed, "Seed");
  train_ae_cmd->add_option("--out", ae_out, "Checkpoint path")->required();

  // attack
  std::string at_victim, at_ae, at_data, at_mode = "untargeted", at_constraint = "linf", at_distance = "l2";
  std::vector<std::string> at_transfer;
  std::size_t at_index = 0, at_count = 1;
  AttackConfig at_cfg;
  auto* attack = app.add_subcommand("attack", "Attack test samples and report the outcome");
  attack->add_option("--victim", at_victim, "Victim classifier checkpoint")->required();
  attack->add_option("--ae", at_ae, "Auto-encoder checkpoint (needed when gamma > 0)");
  attack->add_option("--data", at_data, "Test PCDS file")->required();
  attack->add_option("--index", at_index, "First sample index");
  attack->add_option("--count", at_count, "Number of samples");
  attack->add_option("--mode", at_mode, "targeted | untargeted")->check(CLI::IsMember({"targeted", "untargeted"}));
  attack->add_option("--target", at_cfg.target, "Target label (targeted mode)");
  attack->add_option("--constraint", at_constraint, "linf | l2 | soft")->check(CLI::IsMember({"linf", "l2", "soft"}));
  attack->add_option("--eps", at_cfg.eps, "Hard budget");
  attack->add_option("--lambda", at_cfg.lambda, "Soft: initial lambda");
  attack->add_option("--distance", at_distance, "Soft: l2 | chamfer | emd");
  attack->add_option("--rounds", at_cfg.search_rounds, "Soft: lambda search rounds");
  attack->add_option("--gamma", at_cfg.gamma, "AE trade-off weight");
  attack->add_option("--kappa", at_cfg.kappa, "Loss margin");
  attack->add_option("--lr", at_cfg.lr, "Adam step size");
  attack->add_option("--iters", at_cfg.iterations, "Iterations per restart");
  attack->add_option("--restarts", at_cfg.restarts, "Restarts");
  attack->add_option("--seed", at_cfg.seed, "Seed");
  attack->add_option("--transfer", at_transfer, "Extra classifier checkpoints to evaluate on");

  // grid commands
  std::string grid_config;
  auto* ev_t = app.add_subcommand("eval-transfer", "Run an attack grid and print transfer matrices");
  ev_t->add_option("--config", grid_config, "Experiment YAML")->required();
  auto* ev_d = app.add_subcommand("eval-defense", "Run an attack grid and print success per defense");
  ev_d->add_option("--config", grid_config, "Experiment YAML")->required();
  std::vector<double> gammas{0.0, 0.25, 0.5, 0.75, 1.0};
  auto* abl = app.add_subcommand("ablate-gamma", "Sweep gamma and report victim success and transferability");
  abl->add_option("--config", grid_config, "Experiment YAML")->required();
  abl->add_option("--gammas", gammas, "Gamma values");

  // plot
  std::string pl_csv, pl_out;
  auto* plot = app.add_subcommand("plot", "Render success-vs-epsilon SVG charts from a results CSV");
  plot->add_option("--csv", pl_csv, "results.csv")->required();
  plot->add_option("--out", pl_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gd_out, gd_split, gd_spec);

    if (*train) {
      tr_cfg.arch = parse_arch(tr_arch);
      const auto data = load_dataset(tr_data, Split::train);
      TrainReport report;
      ClassifierModel m;
      if (tr_mix > 0) {
        AttackConfig preset = adversarial_training_preset(tr_adv_eps);
        preset.iterations = tr_adv_iters;
        m = adversarial_training(data, preset, tr_mix, tr_cfg, tr_seed, &report);
      } else {
        m = train_classifier(data, tr_cfg, tr_seed, &report);
      }
      for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        std::cerr << "epoch " << e + 1 << " loss " << report.epoch_loss[e] << " acc " << report.epoch_accuracy[e]
                  << '\n';
      save_classifier(m, tr_out);
      std::cout << "training accuracy " << pct(accuracy(m, data)) << "; saved " << tr_out << '\n';
      return 0;
    }

    if (*train_ae_cmd) {
      const auto data = load_dataset(ae_data, Split::train);
      TrainReport report;
      const auto g = train_ae(data, ae_cfg, ae_seed, &report);
      for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        std::cerr << "epoch " << e + 1 << " chamfer " << report.epoch_loss[e] << '\n';
      save_autoencoder(g, ae_out);
      std::cout << "final loss " << report.epoch_loss.back() << "; saved " << ae_out << '\n';
      return 0;
    }

    if (*attack) {
      at_cfg.mode = parse_attack_mode(at_mode);
      at_cfg.constraint = parse_constraint(at_constraint);
      at_cfg.distance = parse_soft_distance(at_distance);
      const auto victim = load_classifier(at_victim);
      std::optional<AEModel> g;
      if (!at_ae.empty()) g = load_autoencoder(at_ae);
      std::vector<ClassifierModel> others;
      for (const auto& p : at_transfer) others.push_back(load_classifier(p));
      const auto data = load_dataset(at_data);
      if (at_index >= data.size()) throw InvalidArgument("--index beyond the dataset");
      const std::size_t end = std::min(data.size(), at_index + at_count);
      for (std::size_t i = at_index; i < end; ++i) {
        const auto& s = data.samples[i];
        const auto out = run_attack(victim, g ? &*g : nullptr, s.cloud, s.label, at_cfg);
        std::cout << "sample " << i << " label " << s.label << " -> predicted " << out.predicted_label
                  << " success " << out.success_victim;
        if (g) std::cout << " success_ae " << out.success_ae;
        std::cout << " linf " << out.norms.linf << " l2 " << out.norms.l2 << " chamfer "
                  << out.norms.chamfer_symmetric;
        if (at_cfg.constraint == ConstraintKind::soft) std::cout << " lambda " << out.lambda;
        if (out.iterations_to_first_success) std::cout << " first_success_iter " << *out.iterations_to_first_success;
        for (std::size_t t = 0; t < others.size(); ++t)
          std::cout << " transfer[" << at_transfer[t]
                    << "] " << evaluate_attack(others[t], s.cloud, out, s.label, at_cfg.mode);
        std::cout << '\n';
      }
      return 0;
    }

    if (*ev_t) {
      const auto rs = run_grid(grid_config);
      for (const auto& a : attack_names(rs)) print_matrix(transfer_matrix(rs, a), a);
      return 0;
    }

    if (*ev_d) {
      const auto rs = run_grid(grid_config);
      // Mean success over epsilon per (attack, victim, transfer, defense).
      std::map<std::tuple<std::string, std::string, std::string, std::string>, std::pair<double, int>> acc;
      for (const auto& r : rs) {
        auto& [s, n] = acc[{r.attack, r.victim, r.transfer, r.defense}];
        s += r.success_rate;
        ++n;
      }
      std::cout << std::left << std::setw(20) << "attack" << std::setw(16) << "victim" << std::setw(16) << "transfer"
                << std::setw(10) << "defense" << "success\n";
      for (const auto& [k, v] : acc)
        std::cout << std::setw(20) << std::get<0>(k) << std::setw(16) << std::get<1>(k) << std::setw(16)
                  << std::get<2>(k) << std::setw(10) << std::get<3>(k) << pct(v.first / v.second) << '\n';
      return 0;
    }

    if (*abl) {
      const auto cfg = load_config(grid_config);
      const auto roster = load_roster(cfg);
      const auto test = load_test_data(cfg);
      std::vector<Record> rs;
      const auto rows = gamma_ablation(cfg, roster, test, gammas, &rs, log_line);
      std::filesystem::create_directories(cfg.output_dir);
      const auto path = (std::filesystem::path(cfg.output_dir) / "ablation.csv").string();
      write_csv(path, rs);
      std::cout << "gamma   victim success   transfer score\n";
      for (const auto& r : rows)
        std::cout << std::setw(5) << r.gamma << "   " << pct(r.victim_success) << "          "
                  << (r.transfer_score ? pct(*r.transfer_score) : std::string("n/a")) << '\n';
      std::cerr << "records in " << path << '\n';
      return 0;
    }

    if (*plot) {
      for (const auto& p : emit_svg(read_csv(pl_csv), pl_out)) std::cout << p << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
