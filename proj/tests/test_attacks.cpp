#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pcadv/attacks.hpp"
#include "pcadv/dataset.hpp"
#include "pcadv/diffnet/training.hpp"

using namespace pcadv;

namespace {

struct Trained {
  LabeledDataset test;
  ClassifierModel tiny;
  AEModel ae;
};

// Small but genuinely trained models shared by the optimizer tests.
const Trained& trained() {
  static const Trained t = [] {
    DatasetSpec spec;
    spec.train_per_class = 24;
    spec.test_per_class = 4;
    spec.n_points = 64;
    spec.seed = 5;
    const auto train = make_dataset(spec, Split::train);
    ClassifierTrainConfig cc;
    cc.epochs = 25;
    AETrainConfig ac;
    ac.epochs = 30;
    ac.latent_dim = 32;
    return Trained{make_dataset(spec, Split::test), train_classifier(train, cc, 1), train_ae(train, ac, 2)};
  }();
  return t;
}

std::vector<std::size_t> correct_indices(const ClassifierModel& m, const LabeledDataset& d) {
  const ClassifierNet<float> net(m);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (predict(net, d.samples[i].cloud) == d.samples[i].label) out.push_back(i);
  return out;
}

AttackConfig quick(double gamma, double eps = 0.3) {
  AttackConfig c = advpc_preset(eps);
  c.gamma = gamma;
  c.iterations = 40;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(MarginLoss, Examples) {
  const std::vector<float> a{5, 2, 1}, b{2, 5, 1};
  EXPECT_EQ(margin_loss(a, 0, 0), 0.0);
  EXPECT_EQ(margin_loss(b, 0, 0), 3.0);
  EXPECT_EQ(margin_loss(b, 0, 30), 33.0);
  EXPECT_THROW(margin_loss(a, 3, 0), InvalidArgument);
  EXPECT_THROW(margin_loss(a, 0, -1), InvalidArgument);
}

TEST(MarginLoss, NonNegativeAndZeroExactlyWhenMarginMet) {
  std::mt19937_64 g(1);
  std::normal_distribution<float> n(0, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<float> z(2 + g() % 6);
    for (auto& v : z) v = n(g);
    const std::size_t t = g() % z.size();
    const double kappa = trial % 3 == 0 ? 0.0 : std::abs(n(g));
    double best_other = -INFINITY;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (i != t) best_other = std::max(best_other, double(z[i]));
    const double f = margin_loss(z, t, kappa);
    EXPECT_GE(f, 0.0);
    EXPECT_EQ(f == 0.0, z[t] >= best_other + kappa);
  }
}

TEST(SelectTarget, Examples) {
  const std::vector<float> z{5, 2, 1}, flat{1, 1, 1};
  EXPECT_EQ(select_untargeted_target<float>(z, 0), 1u);
  EXPECT_EQ(select_untargeted_target<float>(z, 1), 0u);
  EXPECT_EQ(select_untargeted_target<float>(flat, 0), 1u);
  EXPECT_THROW(select_untargeted_target<float>(std::vector<float>{1}, 0), InvalidArgument);
}

TEST(SuccessPredicate, TargetedImpliesUntargeted) {
  std::mt19937_64 g(2);
  std::normal_distribution<float> n(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> z(5);
    for (auto& v : z) v = n(g);
    const std::size_t truth = g() % 5;
    std::size_t target = g() % 5;
    if (target == truth) target = (target + 1) % 5;
    if (attack_succeeds<float>(z, AttackMode::targeted, truth, target)) {
      EXPECT_TRUE(attack_succeeds<float>(z, AttackMode::untargeted, truth, target));
    }
  }
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  for (auto mutate : std::vector<std::function<void(AttackConfig&)>>{
           [](AttackConfig& a) { a.eps = -0.1; }, [](AttackConfig& a) { a.gamma = 1.5; },
           [](AttackConfig& a) { a.gamma = -0.1; }, [](AttackConfig& a) { a.kappa = -1; },
           [](AttackConfig& a) { a.iterations = 0; }, [](AttackConfig& a) { a.restarts = 0; }}) {
    AttackConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), InvalidArgument);
  }
  EXPECT_EQ(parse_constraint("linf"), ConstraintKind::hard_linf);
  EXPECT_EQ(parse_soft_distance("emd"), SoftDistance::emd);
  EXPECT_THROW(parse_attack_mode("sideways"), InvalidArgument);
}

TEST(AdvpcLoss, GammaZeroIsVictimMarginAlone) {
  std::mt19937_64 g(3);
  const auto f = make_classifier(Arch::pointnet_tiny, 4, 3);
  const auto x = oracle::random_cloud(g, 16);
  const auto d = oracle::random_delta(g, 16, 0.05);
  AttackConfig cfg = quick(0.0);
  const auto r = advpc_loss(f, nullptr, x, d, cfg, 1);
  const auto z = forward_classifier(f, perturb(x, d));
  EXPECT_NEAR(r.loss, margin_loss(z, select_untargeted_target<float>(z, 1), cfg.kappa), 1e-4);
  // The AE is never touched at gamma = 0: even a mismatched one is ignored.
  const auto wrong_ae = make_autoencoder(7, 8, 1);
  const auto r2 = advpc_loss(f, &wrong_ae, x, d, cfg, 1);
  EXPECT_EQ(r2.loss, r.loss);
  EXPECT_EQ(r2.grad, r.grad);
}

TEST(AdvpcLoss, GammaOneIsAeMarginAlone) {
  std::mt19937_64 g(4);
  const auto f = make_classifier(Arch::pointnet_tiny, 4, 4);
  const auto ae = make_autoencoder(16, 8, 4);
  const auto x = oracle::random_cloud(g, 16);
  const auto d = oracle::random_delta(g, 16, 0.05);
  const auto cfg = quick(1.0);
  const auto r = advpc_loss(f, &ae, x, d, cfg, 2);
  const auto z = forward_classifier(f, forward_ae(ae, perturb(x, d)));
  EXPECT_NEAR(r.loss, margin_loss(z, select_untargeted_target<float>(z, 2), cfg.kappa), 1e-4);
}

TEST(AdvpcLoss, MissingAeIsConfigError) {
  std::mt19937_64 g(5);
  const auto f = make_classifier(Arch::pointnet_tiny, 4, 5);
  const auto x = oracle::random_cloud(g, 8);
  EXPECT_THROW(advpc_loss(f, nullptr, x, Perturbation::zeros(8), quick(0.25), 0), ConfigError);
}

TEST(AdvpcLoss, GradientMatchesFiniteDifferences) {
  for (double gamma : {0.0, 0.25, 1.0})
    for (Arch arch : {Arch::pointnet_tiny, Arch::edgeconv_lite}) {
      std::mt19937_64 g(7);
      const auto f = make_classifier(arch, 5, 11);
      const auto ae = make_autoencoder(16, 16, 12);
      const auto x = oracle::random_cloud(g, 16);
      AttackConfig cfg = quick(gamma);
      const AttackNets<double> nets(f, gamma > 0 ? &ae : nullptr);
      const auto xd = to_buffer<double>(x);
      const auto r = advpc_objective<double>(nets, xd, cfg, 0, true);
      // Targets are re-selected inside each evaluation, as the optimiser sees them.
      const auto c = oracle::fd_check_piecewise_linear(
          [&](const std::vector<double>& v) { return advpc_objective<double>(nets, v, cfg, 0, false).loss; }, xd,
          r.grad, 1e-3, 1e-3);
      EXPECT_GE(c.fraction(), 0.99) << "gamma " << gamma << " " << arch_name(arch);
      EXPECT_GE(c.considered, c.total / 2);
      // Float entry point agrees with the double path.
      const auto rf = advpc_loss(f, &ae, x, Perturbation::zeros(16), cfg, 0);
      EXPECT_NEAR(rf.loss, r.loss, 1e-3 * std::max(1.0, std::abs(r.loss)));
    }
}

TEST(PgdAttack, ZeroBudgetReturnsZeroDelta) {
  const auto& t = trained();
  AttackConfig cfg = quick(0.25, 0.0);
  cfg.iterations = 5;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = t.test.samples[i];
    const auto out = pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
    EXPECT_EQ(out.delta, Perturbation::zeros(s.cloud.size()));
    EXPECT_EQ(out.success_victim, predict(ClassifierNet<float>(t.tiny), s.cloud) != s.label);
    EXPECT_EQ(out.norms.linf, 0.0);
  }
}

TEST(PgdAttack, BudgetRespectedAndNormsRecomputed) {
  const auto& t = trained();
  for (auto kind : {ConstraintKind::hard_linf, ConstraintKind::hard_l2})
    for (double eps : {0.02, 0.1, 0.3}) {
      AttackConfig cfg = quick(0.0, kind == ConstraintKind::hard_l2 ? 10 * eps : eps);
      cfg.constraint = kind;
      cfg.iterations = 20;
      const auto& s = t.test.samples[3];
      const auto out = pgd_attack(t.tiny, nullptr, s.cloud, s.label, cfg);
      const double n = kind == ConstraintKind::hard_linf ? norm_linf(out.delta) : norm_l2(out.delta);
      EXPECT_LE(n, cfg.eps + 4 * std::numeric_limits<float>::epsilon() * std::max(1.0, cfg.eps));
      EXPECT_EQ(out.norms.linf, norm_linf(out.delta));
      EXPECT_EQ(out.norms.l2, norm_l2(out.delta));
      EXPECT_EQ(out.norms.chamfer_symmetric, chamfer(s.cloud, perturb(s.cloud, out.delta), ChamferMode::symmetric));
      ASSERT_TRUE(out.norms.emd.has_value());
    }
}

TEST(PgdAttack, DeterministicForFixedSeed) {
  const auto& t = trained();
  const auto& s = t.test.samples[5];
  const auto cfg = quick(0.25);
  const auto a = pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
  const auto b = pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.success_victim, b.success_victim);
  EXPECT_EQ(a.iterations_to_first_success, b.iterations_to_first_success);
}

// The gamma = 0 attack against an independent re-implementation of the plain
// projected-Adam margin attack: the AE branch must leave no trace.
TEST(PgdAttack, GammaZeroMatchesPlainLoopBitForBit) {
  const auto& t = trained();
  const ClassifierNet<float> net(t.tiny);
  AttackConfig cfg = quick(0.0, 0.1);
  cfg.iterations = 30;
  for (std::size_t idx : {0u, 9u, 17u}) {
    const auto& s = t.test.samples[idx];
    const auto xbuf = to_buffer(s.cloud);
    const std::size_t n = s.cloud.size();

    Perturbation best = Perturbation::zeros(n);
    bool best_valid = false, best_success = false;
    double best_measure = 0;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      Perturbation d = project_linf(detail::initial_delta(n, r, std::min(cfg.eps, 0.05) / 2, cfg.seed), cfg.eps);
      AdamMoments m(3 * n);
      for (std::size_t it = 0; it <= cfg.iterations; ++it) {
        std::vector<float> xp(xbuf.size());
        for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = xbuf[i] + d.coords()[i];
        ClassifierTape<float> tape;
        const auto z = net.forward(xp, &tape);
        const std::size_t tgt = select_untargeted_target<float>(z, s.label);
        std::vector<float> dz(z.size(), 0.0f);
        const float loss = margin_loss_impl<float>(z, tgt, float(cfg.kappa), dz.data());
        if (it > 0) {
          const bool ok = argmax<float>(z) != s.label;
          const double meas = ok ? norm_linf(d) : double(loss);
          bool take = !best_valid || (ok != best_success ? ok : meas <= best_measure);
          if (take) {
            best = d;
            best_valid = true;
            best_success = ok;
            best_measure = meas;
          }
        }
        if (it == cfg.iterations) break;
        std::vector<float> grad(xp.size(), 0.0f);
        net.backward(tape, dz, grad.data(), nullptr);
        adam_step(m, d.coords(), grad, AdamConfig{cfg.lr});
        d = project_linf(std::move(d), cfg.eps);
      }
    }
    const auto out = pgd_attack(t.tiny, nullptr, s.cloud, s.label, cfg);
    EXPECT_EQ(out.delta, best);
    const auto with_ae = pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
    EXPECT_EQ(with_ae.delta, best);
  }
}

TEST(PgdAttack, SucceedsOnTrainedModelAndEvaluateIsConsistent) {
  const auto& t = trained();
  const auto idx = correct_indices(t.tiny, t.test);
  ASSERT_GE(idx.size(), 16u);
  int wins = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto& s = t.test.samples[idx[k]];
    const auto out = pgd_attack(t.tiny, &t.ae, s.cloud, s.label, quick(0.25, 0.3));
    wins += out.success_victim;
    EXPECT_EQ(evaluate_attack(t.tiny, s.cloud, out, s.label, AttackMode::untargeted), out.success_victim);
    if (out.success_victim) {
      EXPECT_TRUE(out.iterations_to_first_success.has_value());
      EXPECT_NE(out.predicted_label, s.label);
    }
    AttackOutcome zero = out;
    zero.delta = Perturbation::zeros(s.cloud.size());
    EXPECT_FALSE(evaluate_attack(t.tiny, s.cloud, zero, s.label, AttackMode::untargeted));
  }
  EXPECT_GE(wins, 7);
}

TEST(PgdAttack, TargetedSuccessHitsTarget) {
  const auto& t = trained();
  const auto idx = correct_indices(t.tiny, t.test);
  const auto& s = t.test.samples[idx[0]];
  AttackConfig cfg = quick(0.0, 0.45);
  cfg.mode = AttackMode::targeted;
  cfg.target = (s.label + 3) % 8;
  cfg.iterations = 100;
  const auto out = pgd_attack(t.tiny, nullptr, s.cloud, s.label, cfg);
  EXPECT_EQ(out.target, cfg.target);
  if (out.success_victim) {
    EXPECT_EQ(out.predicted_label, cfg.target);
    EXPECT_TRUE(evaluate_attack(t.tiny, s.cloud, out, s.label, AttackMode::untargeted));
  }
}

TEST(PgdAttack, InputErrors) {
  const auto& t = trained();
  const auto& s = t.test.samples[0];
  AttackConfig cfg = quick(0.25);
  EXPECT_THROW(pgd_attack(t.tiny, nullptr, s.cloud, s.label, cfg), ConfigError);
  EXPECT_THROW(pgd_attack(t.tiny, &t.ae, s.cloud, 8, cfg), InvalidArgument);
  cfg.mode = AttackMode::targeted;
  cfg.target = s.label;
  EXPECT_THROW(pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg), InvalidArgument);
  cfg.target = 8;
  EXPECT_THROW(pgd_attack(t.tiny, &t.ae, s.cloud, s.label, cfg), InvalidArgument);
  const auto small_ae = make_autoencoder(32, 8, 0);
  EXPECT_THROW(pgd_attack(t.tiny, &small_ae, s.cloud, s.label, quick(0.25)), InvalidInput);
  AttackConfig soft = quick(0.0);
  soft.constraint = ConstraintKind::soft;
  EXPECT_THROW(pgd_attack(t.tiny, nullptr, s.cloud, s.label, soft), InvalidArgument);
  EXPECT_THROW(soft_attack(t.tiny, nullptr, s.cloud, s.label, quick(0.0)), InvalidArgument);
}

TEST(PgdAttack, NonFiniteGradientNamesRestartAndIteration) {
  std::mt19937_64 g(8);
  auto f = make_classifier(Arch::pointnet_tiny, 4, 8);
  for (auto& v : f.params.at("point2.weight").data) v = 3e38f;
  const auto x = oracle::random_cloud(g, 16, 100.0);
  try {
    pgd_attack(f, nullptr, x, 0, quick(0.0));
    FAIL() << "expected a numeric failure";
  } catch (const NumericFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("restart 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("iteration 0"), std::string::npos) << msg;
    EXPECT_EQ(e.layer(), "point2");
  }
}

TEST(SoftAttack, HugeLambdaPinsNearZero) {
  const auto& t = trained();
  const auto idx = correct_indices(t.tiny, t.test);
  AttackConfig cfg = quick(0.0);
  cfg.constraint = ConstraintKind::soft;
  cfg.lambda = 1e9;
  cfg.search_rounds = 1;
  cfg.restarts = 1;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& s = t.test.samples[idx[k]];
    const auto out = soft_attack(t.tiny, nullptr, s.cloud, s.label, cfg);
    EXPECT_FALSE(out.success_victim);
    EXPECT_LT(out.norms.linf, 0.05);
  }
}

TEST(SoftAttack, ZeroLambdaIsPlainMarginDescent) {
  const auto& t = trained();
  const auto idx = correct_indices(t.tiny, t.test);
  AttackConfig cfg = quick(0.0);
  cfg.constraint = ConstraintKind::soft;
  cfg.lambda = 0;
  cfg.search_rounds = 1;
  cfg.iterations = 200;
  std::size_t wins = 0, n = std::min<std::size_t>(idx.size(), 20);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = t.test.samples[idx[k]];
    wins += soft_attack(t.tiny, nullptr, s.cloud, s.label, cfg).success_victim;
  }
  EXPECT_GE(double(wins), 0.95 * double(n));
}

TEST(SoftAttack, DistancesAndDeterminism) {
  const auto& t = trained();
  const auto idx = correct_indices(t.tiny, t.test);
  const auto& s = t.test.samples[idx[1]];
  for (auto dist : {SoftDistance::l2, SoftDistance::chamfer, SoftDistance::emd}) {
    AttackConfig cfg = quick(0.25);
    cfg.constraint = ConstraintKind::soft;
    cfg.distance = dist;
    cfg.search_rounds = 2;
    cfg.iterations = 25;
    const auto a = run_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
    const auto b = run_attack(t.tiny, &t.ae, s.cloud, s.label, cfg);
    EXPECT_EQ(a.delta, b.delta);
    EXPECT_EQ(a.lambda, b.lambda);
    EXPECT_GE(a.lambda, kLambdaMin);
    EXPECT_LE(a.lambda, kLambdaMax);
    EXPECT_EQ(evaluate_attack(t.tiny, s.cloud, a, s.label, AttackMode::untargeted), a.success_victim);
  }
}
