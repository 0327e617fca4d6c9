#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pcadv/diffnet/checkpoint.hpp"
#include "pcadv/harness/analysis.hpp"
#include "pcadv/harness/config.hpp"
#include "pcadv/harness/grid.hpp"
#include "pcadv/harness/plot.hpp"
#include "pcadv/harness/records.hpp"

using namespace pcadv;
using namespace pcadv::harness;

namespace fs = std::filesystem;

namespace {

Record rec(std::string victim, std::string transfer, double eps, double rate, std::string attack = "a") {
  Record r;
  r.attack = std::move(attack);
  r.victim = std::move(victim);
  r.transfer = std::move(transfer);
  r.defense = "none";
  r.norm_type = "linf";
  r.epsilon = eps;
  r.gamma = 0.25;
  r.kappa = 30;
  r.n_samples = 10;
  r.success_rate = rate;
  r.mean_linf = eps / 3;
  r.mean_l2 = 0.1 + eps;
  r.mean_chamfer_sym = 1e-5 * eps;
  r.seed = 7;
  return r;
}

// Small in-memory experiment: untrained models, short attacks.
struct Fixture {
  ExperimentConfig cfg;
  Roster roster;
  LabeledDataset test;

  explicit Fixture(std::size_t n_models, std::vector<double> eps, std::size_t n_samples = 10) {
    cfg.dataset.test_per_class = 2;
    cfg.dataset.n_points = 32;
    cfg.dataset.seed = 1;
    for (std::size_t i = 0; i < n_models; ++i) {
      cfg.models.push_back({"m" + std::to_string(i), "unused", ""});
      roster.add("m" + std::to_string(i), make_classifier(Arch::pointnet_tiny, 8, 100 + i));
    }
    AttackEntry a;
    a.name = "base";
    a.config = baseline_preset();
    a.config.iterations = 4;
    a.config.restarts = 1;
    a.epsilons = std::move(eps);
    cfg.attacks.push_back(a);
    cfg.n_samples = n_samples;
    cfg.seed = 3;
    test = make_dataset(cfg.dataset, Split::test);
  }
};

class TempDir : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / ("pcadv_harness_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                              "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  void SetUp() override {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string slurp(const fs::path& p) const {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
  }
};

}  // namespace

TEST(Csv, HeaderAndSingleRecord) {
  EXPECT_EQ(std::string(kCsvHeader),
            "attack,victim,transfer,defense,norm_type,epsilon,gamma,kappa,n_samples,success_rate,mean_linf,mean_l2,"
            "mean_chamfer_sym,seed");
  const auto text = to_csv({rec("a", "b", 0.18, 0.3)});
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
}

TEST(Csv, RoundTripIsLossless) {
  std::vector<Record> rs;
  for (double eps : {0.01, 0.1, 1.0 / 3.0, 0.45})
    for (double rate : {0.0, 0.1, 2.0 / 3.0, 1.0}) rs.push_back(rec("pointnet_tiny", "edgeconv_lite", eps, rate));
  rs.back().seed = 18446744073709551615ull;
  EXPECT_EQ(parse_csv(to_csv(rs)), rs);
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_THROW(parse_csv("wrong,header\n"), ParseError);
  const std::string good = to_csv({rec("a", "b", 0.1, 0.5)});
  EXPECT_THROW(parse_csv(good + "a,b,c\n"), ParseError);
  try {
    parse_csv(std::string(kCsvHeader) + "\nx,y,z,none,linf,zero,0,0,1,0,0,0,0,0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), std::string(kCsvHeader).size() + 1);
  }
  Record bad = rec("a,b", "c", 0.1, 0.5);
  EXPECT_THROW(to_csv({bad}), InvalidArgument);
}

TEST_F(TempDir, CsvFileIoAndUnwritablePath) {
  const auto p = (dir / "r.csv").string();
  write_csv(p, {rec("a", "b", 0.1, 0.5)});
  append_csv(p, {rec("a", "c", 0.1, 0.25)});
  const auto back = read_csv(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].transfer, "c");
  EXPECT_THROW(write_csv((dir / "missing" / "x.csv").string(), {}), IoError);
  EXPECT_THROW(read_csv((dir / "nope.csv").string()), IoError);
}

TEST(Config, ParsesFullDocument) {
  const auto c = parse_config(R"(
dataset: {train_per_class: 10, test_per_class: 5, n_points: 64, noise: 0.01, seed: 4}
models:
  - {name: tiny, checkpoint: ck/tiny.pckp, hardened_checkpoint: ck/tiny_adv.pckp}
  - {name: edge, checkpoint: /abs/edge.pckp}
attack_ae: ck/ae.pckp
defense_ae: ck/ae2.pckp
attacks:
  - {name: advpc, gamma: 0.25, iterations: 50, epsilons: [0.05, 0.18]}
  - {name: l2, norm_type: l2, gamma: 0, mode: targeted}
defenses: [none, srs, {kind: sor, k: 3, alpha: 0.5}, ae]
n_samples: 20
correct_only: true
targets: all
seed: 9
output_dir: out
max_cells: 2
)",
                              "/base");
  EXPECT_EQ(c.dataset.n_points, 64u);
  EXPECT_EQ(c.dataset.noise_sigma, 0.01);
  ASSERT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.models[0].checkpoint, "/base/ck/tiny.pckp");
  EXPECT_EQ(c.models[0].hardened_checkpoint, "/base/ck/tiny_adv.pckp");
  EXPECT_EQ(c.models[1].checkpoint, "/abs/edge.pckp");
  ASSERT_EQ(c.attacks.size(), 2u);
  EXPECT_EQ(c.attacks[0].config.iterations, 50u);
  EXPECT_EQ(c.attacks[0].epsilons, (std::vector<double>{0.05, 0.18}));
  EXPECT_EQ(c.attacks[1].config.constraint, ConstraintKind::hard_l2);
  EXPECT_EQ(c.attacks[1].config.mode, AttackMode::targeted);
  EXPECT_EQ(c.attacks[1].epsilons, kL2Grid);
  ASSERT_EQ(c.defenses.size(), 4u);
  EXPECT_EQ(c.defenses[2].sor_k, 3u);
  EXPECT_EQ(c.defenses[2].sor_alpha, 0.5);
  EXPECT_TRUE(c.correct_only);
  EXPECT_EQ(c.targets, TargetSelection::all);
  EXPECT_EQ(c.output_dir, "/base/out");
  EXPECT_EQ(c.max_cells, 2u);
  EXPECT_NE(c.find_model("edge"), nullptr);
  EXPECT_EQ(c.find_model("wide"), nullptr);
}

TEST(Config, RejectsInvalidDocuments) {
  const std::string models = "models: [{name: a, checkpoint: a.pckp}]\n";
  for (const std::string& bad : std::vector<std::string>{
           std::string("[1, 2]"),
           std::string("models: [{name: a, checkpoint: a}, {name: a, checkpoint: b}]\nattacks: [{name: x, gamma: 0}]"),
           models + "attacks: [{name: x, gamma: 0, epsilons: [0.2, 0.1]}]",
           models + "attacks: [{name: x, gamma: 0, epsilons: [-0.1]}]",
           models + "attacks: [{name: x, gamma: 0.25}]",
           models + "attacks: [{name: x, gamma: 0, norm_type: soft}]",
           models + "attacks: [{name: x, gamma: 0, norm_type: l7}]",
           models + "attacks: [{name: x, gamma: 2}]",
           models + "attacks: [{name: x, gamma: 0}]\ndefenses: [ae]",
           models + "attacks: [{name: x, gamma: 0}]\ndefenses: [srs, srs]",
           models + "attacks: [{name: x, gamma: 0}]\ndefenses: [{kind: srs, drop_rate: 1.0}]",
           models + "attacks: [{name: x, gamma: 0}]\ntargets: some",
           models + "attacks: [{name: x, gamma: 0, iterations: many}]",
           models,
           "models: [{name: a}]\nattacks: [{name: x, gamma: 0}]",
           "{unclosed"})
    EXPECT_THROW(parse_config(bad), ConfigError) << bad;
}

TEST_F(TempDir, MissingCheckpointNamesModel) {
  std::ofstream(dir / "cfg.yaml") << "models: [{name: wide_one, checkpoint: none.pckp}]\nattacks: [{name: x, gamma: 0}]\n";
  const auto cfg = load_config((dir / "cfg.yaml").string());
  try {
    load_roster(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("wide_one"), std::string::npos);
  }
  EXPECT_THROW(load_config((dir / "absent.yaml").string()), IoError);
}

TEST_F(TempDir, RosterLoadsCheckpoints) {
  save_classifier(make_classifier(Arch::pointnet_tiny, 8, 1), (dir / "t.pckp").string());
  save_autoencoder(make_autoencoder(32, 8, 1), (dir / "ae.pckp").string());
  std::ofstream(dir / "cfg.yaml") << "models: [{name: t, checkpoint: t.pckp, hardened_checkpoint: t.pckp}]\n"
                                     "attack_ae: ae.pckp\nattacks: [{name: x}]\n";
  const auto r = load_roster(load_config((dir / "cfg.yaml").string()));
  EXPECT_EQ(r.names, std::vector<std::string>{"t"});
  EXPECT_TRUE(r.hardened[0].has_value());
  EXPECT_TRUE(r.attack_ae.has_value());
  EXPECT_FALSE(r.defense_ae.has_value());
  EXPECT_EQ(r.index_of("t"), 0u);
  EXPECT_THROW(r.index_of("u"), ConfigError);
}

TEST(Grid, OneModelOneEpsilonCountsAttacks) {
  Fixture f(1, {0.1});
  GridStats st;
  const auto rs = run_attack_grid(f.cfg, f.roster, f.test, {}, &st);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(st.attacks_run, 10u);
  EXPECT_EQ(rs[0].n_samples, 10u);
  // success_rate is an exact count over the cell.
  const double k = rs[0].success_rate * 10;
  EXPECT_EQ(k, std::round(k));
  // Rerunning with the output as existing records does no work.
  GridStats again;
  EXPECT_EQ(run_attack_grid(f.cfg, f.roster, f.test, rs, &again), rs);
  EXPECT_EQ(again.attacks_run, 0u);
  EXPECT_EQ(again.cells_skipped, 1u);
}

TEST(Grid, SuccessRateMatchesIndependentEvaluation) {
  Fixture f(2, {0.3}, 6);
  const auto rs = run_attack_grid(f.cfg, f.roster, f.test, {});
  const auto instances = select_instances(f.cfg, f.cfg.attacks[0].config, f.roster.models[0], f.test);
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    AttackConfig c = f.cfg.attacks[0].config;
    c.eps = 0.3;
    c.seed = instance_seed(f.cfg.seed, "m0", "base", 0.3, inst);
    const auto& x = f.test.samples[inst.sample].cloud;
    const auto out = pgd_attack(f.roster.models[0], nullptr, x, inst.label, c);
    hits += evaluate_attack(f.roster.models[1], x, out, inst.label, c.mode);
  }
  const auto it = std::find_if(rs.begin(), rs.end(), [](const Record& r) { return r.victim == "m0" && r.transfer == "m1"; });
  ASSERT_NE(it, rs.end());
  EXPECT_EQ(it->success_rate, double(hits) / 6.0);
}

TEST(Grid, TwoModelsThreeEpsilonsRecordCount) {
  Fixture f(2, {0.05, 0.1, 0.2}, 3);
  const auto rs = run_attack_grid(f.cfg, f.roster, f.test, {});
  EXPECT_EQ(rs.size(), 2u * 2u * 3u);
  for (const auto& r : rs) {
    EXPECT_GE(r.success_rate, 0.0);
    EXPECT_LE(r.success_rate, 1.0);
    EXPECT_LE(r.mean_linf, r.epsilon + 1e-6);
    EXPECT_EQ(r.seed, 3u);
  }
}

TEST(Grid, DefensesMultiplyRecordsAndDupNetIsSkipped) {
  Fixture f(1, {0.1}, 4);
  DefenseConfig srs, dup;
  srs.kind = DefenseKind::srs;
  dup.kind = DefenseKind::dup_net;
  f.cfg.defenses = {DefenseConfig{}, srs, dup};
  std::vector<std::string> logs;
  const auto rs = run_attack_grid(f.cfg, f.roster, f.test, {}, nullptr, {}, [&](const std::string& s) { logs.push_back(s); });
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[0].defense, "none");
  EXPECT_EQ(rs[1].defense, "srs");
  EXPECT_TRUE(std::any_of(logs.begin(), logs.end(), [](const std::string& s) { return s.find("unsupported") != std::string::npos; }));
}

TEST(Grid, TargetSelection) {
  Fixture f(1, {0.1}, 3);
  AttackConfig t = f.cfg.attacks[0].config;
  t.mode = AttackMode::targeted;
  const auto k = select_instances(f.cfg, t, f.roster.models[0], f.test);
  EXPECT_EQ(k.size(), 9u);
  for (const auto& i : k) EXPECT_NE(i.target, i.label);
  f.cfg.targets = TargetSelection::all;
  EXPECT_EQ(select_instances(f.cfg, t, f.roster.models[0], f.test).size(), 21u);
}

TEST_F(TempDir, InterruptedRunResumesToIdenticalBytes) {
  Fixture f(2, {0.05, 0.1}, 3);
  f.cfg.output_dir = (dir / "full").string();
  run_attack_grid_to_dir(f.cfg, f.roster, f.test);
  const auto full = slurp(dir / "full" / "results.csv");

  f.cfg.output_dir = (dir / "part").string();
  f.cfg.max_cells = 1;
  GridStats st;
  run_attack_grid_to_dir(f.cfg, f.roster, f.test, &st);
  EXPECT_FALSE(st.complete);
  EXPECT_NE(slurp(dir / "part" / "results.csv"), full);
  f.cfg.max_cells.reset();
  run_attack_grid_to_dir(f.cfg, f.roster, f.test, &st);
  EXPECT_TRUE(st.complete);
  EXPECT_EQ(st.cells_skipped, 1u);
  EXPECT_EQ(slurp(dir / "part" / "results.csv"), full);
}

TEST(TransferMatrix, SingleModelHasNoScore) {
  const auto m = transfer_matrix({rec("a", "a", 0.1, 0.8), rec("a", "a", 0.2, 1.0)}, "a");
  ASSERT_EQ(m.cells.size(), 1u);
  EXPECT_DOUBLE_EQ(m.cells[0][0], 0.9);
  EXPECT_FALSE(m.score.has_value());
}

TEST(TransferMatrix, ZeroTransferScoresZeroAndScoreIsOffDiagonalMean) {
  std::vector<Record> rs;
  for (const char* v : {"x", "y", "z"})
    for (const char* t : {"x", "y", "z"}) rs.push_back(rec(v, t, 0.1, std::string(v) == t ? 1.0 : 0.0));
  auto m = transfer_matrix(rs, "a");
  ASSERT_TRUE(m.score.has_value());
  EXPECT_EQ(*m.score, 0.0);
  rs[1].success_rate = 0.3;   // x -> y
  rs[5].success_rate = 0.6;   // y -> z
  m = transfer_matrix(rs, "a");
  EXPECT_NEAR(*m.score, 0.9 / 6, 1e-12);
  EXPECT_EQ(m.at("x", "y"), 0.3);
  double s = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) s += m.cells[i][j];
  EXPECT_NEAR(*m.score, s / 6, 1e-12);
}

TEST(TransferMatrix, MissingCellsAreListed) {
  std::vector<Record> rs{rec("x", "x", 0.1, 1), rec("x", "y", 0.1, 0), rec("y", "y", 0.1, 1)};
  try {
    transfer_matrix(rs, "a");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("y->x"), std::string::npos) << e.what();
  }
  EXPECT_THROW(transfer_matrix(rs, "nope"), InvalidInput);
}

TEST(Sensitivity, CurvesAndDiagnostics) {
  std::vector<Record> rs{rec("x", "x", 0.0, 0.1), rec("x", "x", 0.1, 0.5), rec("x", "x", 0.2, 0.45),
                         rec("x", "y", 0.1, 0.2), rec("y", "y", 0.0, 1.0), rec("y", "y", 0.1, 1.0)};
  const auto c = sensitivity_curves(rs, "a");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].model, "x");
  EXPECT_EQ(c[0].epsilons, (std::vector<double>{0.0, 0.1, 0.2}));
  EXPECT_DOUBLE_EQ(c[0].accuracy[0], 0.9);
  EXPECT_NEAR(c[0].max_increase, 0.05, 1e-12);
  EXPECT_TRUE(c[0].non_increasing_within(0.05 + 1e-12));
  EXPECT_FALSE(c[0].non_increasing_within(0.04));
  EXPECT_EQ(c[1].accuracy, (std::vector<double>{0.0, 0.0}));
}

TEST(Ablation, SingleGammaGivesOneRow) {
  Fixture f(2, {0.1}, 3);
  const auto rows = gamma_ablation(f.cfg, f.roster, f.test, {0.0});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].gamma, 0.0);
  EXPECT_EQ(rows[0].attack, gamma_attack_name("base", 0.0));
  EXPECT_TRUE(rows[0].transfer_score.has_value());
  Fixture one(1, {0.1}, 3);
  EXPECT_THROW(gamma_ablation(one.cfg, one.roster, one.test, {0.0}), ConfigError);
  EXPECT_THROW(gamma_ablation_config(f.cfg, {0.5}), ConfigError);  // gamma > 0 needs attack_ae
}

TEST_F(TempDir, SvgEmission) {
  std::vector<Record> rs{rec("x", "y", 0.1, 0.2), rec("x", "y", 0.2, 0.4), rec("x", "x", 0.1, 1.0)};
  const auto files = emit_svg(rs, dir.string());
  ASSERT_EQ(files.size(), 2u);
  for (const auto& p : files) {
    const auto s = slurp(p);
    EXPECT_EQ(s.rfind("<svg", 0) == 0 || s.find("<svg") != std::string::npos, true);
    EXPECT_NE(s.find("</svg>"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(dir / "x__y.svg"));
  EXPECT_THROW(emit_svg({}, dir.string()), InvalidArgument);
}

TEST(AeQuality, MatchesBruteForceAndStaysWithinPairRange) {
  DatasetSpec spec;
  spec.test_per_class = 2;
  spec.n_points = 24;
  const auto test = make_dataset(spec, Split::test);
  const auto ae = make_autoencoder(24, 8, 3);
  const auto q = ae_quality(ae, test, 40, 1);
  auto sym = [](const PointCloud& a, const PointCloud& b) {
    const auto da = oracle::as_double(a), db = oracle::as_double(b);
    return oracle::chamfer_directed(da, db) + oracle::chamfer_directed(db, da);
  };
  double rec = 0;
  for (const auto& s : test.samples) rec += sym(s.cloud, forward_ae(ae, s.cloud));
  EXPECT_NEAR(q.reconstruction, rec / double(test.size()), 1e-6);
  double lo = 1e9, hi = 0;
  for (const auto& a : test.samples)
    for (const auto& b : test.samples)
      if (a.label != b.label) lo = std::min(lo, sym(a.cloud, b.cloud)), hi = std::max(hi, sym(a.cloud, b.cloud));
  EXPECT_EQ(q.n_pairs, 40u);
  EXPECT_GE(q.random_pair, lo - 1e-6);
  EXPECT_LE(q.random_pair, hi + 1e-6);
  EXPECT_DOUBLE_EQ(q.ratio(), q.reconstruction / q.random_pair);
  EXPECT_EQ(ae_quality(ae, test, 40, 1).random_pair, q.random_pair);
  EXPECT_THROW(ae_quality(ae, test, 0, 1), InvalidArgument);
  LabeledDataset one{{test.samples[0], test.samples[8]}, 8, 24, Split::test};
  EXPECT_THROW(ae_quality(ae, one, 5, 1), InvalidInput);
}

TEST(Config, ShippedDeskConfigParses) {
  const auto c = load_config(std::string(PCADV_SOURCE_DIR) + "/configs/desk.yaml");
  EXPECT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.attacks.size(), 2u);
  EXPECT_EQ(c.attacks[0].epsilons, kLinfGrid);
  EXPECT_EQ(c.defenses.size(), 5u);
  EXPECT_EQ(c.defenses[2].srs_drop_rate, 0.1);
  EXPECT_TRUE(c.correct_only);
}
