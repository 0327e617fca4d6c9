#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "oracles.hpp"
#include "pcadv/dataset.hpp"
#include "pcadv/defenses.hpp"

using namespace pcadv;

namespace {

std::vector<Point> fibonacci_sphere(std::size_t n) {
  std::vector<Point> pts;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (double(i) + 0.5) / double(n);
    const double r = std::sqrt(1.0 - z * z);
    pts.push_back({float(r * std::cos(golden * double(i))), float(r * std::sin(golden * double(i))), float(z)});
  }
  return pts;
}

// Brute-force SOR survivors, as indices into x.
std::vector<std::size_t> sor_oracle(const PointCloud& x, std::size_t k, double alpha) {
  const auto xd = oracle::as_double(x);
  const auto nn = oracle::knn(xd, k);
  std::vector<double> mean(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = 0;
    for (auto j : nn[i]) s += std::sqrt(oracle::d2(xd[i], xd[j]));
    mean[i] = s / double(k);
  }
  double mu = 0, var = 0;
  for (double m : mean) mu += m;
  mu /= double(mean.size());
  for (double m : mean) var += (m - mu) * (m - mu);
  const double sigma = std::sqrt(var / double(mean.size()));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mean[i] <= mu + alpha * sigma) keep.push_back(i);
  return keep;
}

// Multiset containment: every point of `sub` is drawn from `sup`.
bool is_sub_multiset(const PointCloud& sub, const PointCloud& sup) {
  std::map<Point, int> count;
  for (const auto& p : sup) ++count[p];
  for (const auto& p : sub)
    if (--count[p] < 0) return false;
  return true;
}

}  // namespace

TEST(Sor, SphereWithFarPointLosesExactlyThatPoint) {
  auto pts = fibonacci_sphere(32);
  pts.push_back({10, 0, 0});
  const PointCloud x(pts);
  const auto out = sor_defense(x, 2, 1.1);
  ASSERT_EQ(out.size(), 32u);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(out[i], x[i]);
  EXPECT_EQ(sor_oracle(x, 2, 1.1).size(), 32u);
}

TEST(Sor, HomogeneousClusterKeepsEverything) {
  // Integer grid: every point's nearest neighbour is exactly 1 away.
  std::vector<Point> pts;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) pts.push_back({float(i), float(j), float(k)});
  const PointCloud x(pts);
  EXPECT_EQ(sor_defense(x, 1, 1.1).size(), x.size());
}

TEST(Sor, MatchesBruteForceSubsetAndShrinksMonotonically) {
  std::mt19937_64 g(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 8 + g() % 60;
    auto x = oracle::random_cloud(g, n);
    const std::size_t k = 1 + g() % 4;
    const double alpha = double(g() % 20) / 10.0;
    const auto out = sor_defense(x, k, alpha);
    auto expect = sor_oracle(x, k, alpha);
    if (expect.empty()) {
      // All flagged: the single lowest-mean point survives.
      EXPECT_EQ(out.size(), 1u);
    } else {
      ASSERT_EQ(out.size(), expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(out[i], x[expect[i]]);
    }
    EXPECT_LE(out.size(), x.size());
    EXPECT_TRUE(is_sub_multiset(out, x));
    if (out.size() > k) {
      const auto again = sor_defense(out, k, alpha);
      EXPECT_LE(again.size(), out.size());
      EXPECT_TRUE(is_sub_multiset(again, out));
    }
  }
}

TEST(Sor, Errors) {
  const PointCloud x(fibonacci_sphere(4));
  EXPECT_THROW(sor_defense(x, 4, 1.1), InvalidArgument);
  EXPECT_THROW(sor_defense(x, 0, 1.1), InvalidArgument);
}

TEST(Srs, SizeContract) {
  std::mt19937_64 g(5);
  const auto x = oracle::random_cloud(g, 100);
  EXPECT_EQ(srs_defense(x, 0.1, 1).size(), 90u);
  for (std::size_t n : {1u, 7u, 33u, 100u, 257u})
    for (double d : {0.0, 0.05, 0.1, 0.25, 0.5, 0.9, 0.99}) {
      const auto c = oracle::random_cloud(g, n);
      const auto out = srs_defense(c, d, 3);
      const auto expect = std::max<std::size_t>(1, std::size_t(std::ceil(double(n) * (1 - d) - 1e-9)));
      EXPECT_EQ(out.size(), expect) << n << " " << d;
      EXPECT_TRUE(is_sub_multiset(out, c));
    }
  EXPECT_THROW(srs_defense(x, 1.0, 1), InvalidArgument);
  EXPECT_THROW(srs_defense(x, -0.1, 1), InvalidArgument);
}

TEST(Srs, IdentityAndDeterminism) {
  std::mt19937_64 g(6);
  const auto x = oracle::random_cloud(g, 64);
  EXPECT_EQ(srs_defense(x, 0.0, 9), x);
  EXPECT_EQ(srs_defense(x, 0.3, 9), srs_defense(x, 0.3, 9));
  EXPECT_NE(srs_defense(x, 0.3, 9), srs_defense(x, 0.3, 10));
}

TEST(Srs, KeepsOriginalOrder) {
  std::vector<Point> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({float(i), 0, 0});
  const auto out = srs_defense(PointCloud(pts), 0.4, 2);
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LT(out[i - 1][0], out[i][0]);
}

TEST(AeDefense, ShapeAndErrors) {
  std::mt19937_64 g(7);
  const auto ae = make_autoencoder(32, 8, 1);
  const auto x = oracle::random_cloud(g, 32);
  const auto out = ae_defense(ae, x);
  EXPECT_EQ(out.size(), 32u);
  for (const auto& p : out)
    for (float c : p) EXPECT_TRUE(std::isfinite(c));
  EXPECT_THROW(ae_defense(ae, oracle::random_cloud(g, 31)), InvalidInput);
}

TEST(ApplyDefense, Dispatch) {
  std::mt19937_64 g(8);
  const auto x = oracle::random_cloud(g, 40);
  const auto ae = make_autoencoder(40, 8, 2);
  DefenseConfig c;
  EXPECT_EQ(apply_defense(c, x, nullptr, 0), x);
  c.kind = DefenseKind::adversarial_training;
  EXPECT_EQ(apply_defense(c, x, nullptr, 0), x);
  c.kind = DefenseKind::srs;
  EXPECT_EQ(apply_defense(c, x, nullptr, 5).size(), 36u);
  EXPECT_EQ(apply_defense(c, x, nullptr, 5), apply_defense(c, x, nullptr, 5));
  c.kind = DefenseKind::sor;
  EXPECT_EQ(apply_defense(c, x, nullptr, 0), sor_defense(x, 2, 1.1));
  c.kind = DefenseKind::ae_reconstruct;
  EXPECT_THROW(apply_defense(c, x, nullptr, 0), ConfigError);
  EXPECT_EQ(apply_defense(c, x, &ae, 0), forward_ae(ae, x));
  c.kind = DefenseKind::dup_net;
  try {
    apply_defense(c, x, nullptr, 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
}

TEST(DefenseConfig, ValidationAndNames) {
  DefenseConfig c;
  EXPECT_NO_THROW(c.validate());
  c.srs_drop_rate = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.mix_fraction = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.sor_alpha = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  for (auto k : {DefenseKind::none, DefenseKind::sor, DefenseKind::srs, DefenseKind::ae_reconstruct,
                 DefenseKind::adversarial_training, DefenseKind::dup_net})
    EXPECT_EQ(parse_defense(defense_name(k)), k);
  EXPECT_THROW(parse_defense("moat"), InvalidArgument);
}

class AdversarialTraining : public ::testing::Test {
 protected:
  static LabeledDataset data() {
    DatasetSpec spec;
    spec.train_per_class = 6;
    spec.n_points = 32;
    spec.seed = 3;
    return make_dataset(spec, Split::train);
  }
  static ClassifierTrainConfig hyper() {
    ClassifierTrainConfig h;
    h.epochs = 3;
    h.batch_size = 8;
    return h;
  }
};

TEST_F(AdversarialTraining, ZeroMixIsPlainTraining) {
  const auto d = data();
  const auto plain = train_classifier(d, hyper(), 4);
  const auto adv = adversarial_training(d, adversarial_training_preset(), 0.0, hyper(), 4);
  EXPECT_EQ(adv.params, plain.params);
}

TEST_F(AdversarialTraining, MixChangesModelDeterministically) {
  const auto d = data();
  AttackConfig preset = adversarial_training_preset();
  preset.iterations = 5;
  const auto a = adversarial_training(d, preset, 0.5, hyper(), 4);
  const auto b = adversarial_training(d, preset, 0.5, hyper(), 4);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, train_classifier(d, hyper(), 4).params);
}

TEST_F(AdversarialTraining, RejectsBadPresets) {
  const auto d = data();
  AttackConfig p = adversarial_training_preset();
  EXPECT_THROW(adversarial_training(d, p, 1.5, hyper(), 0), InvalidArgument);
  p.gamma = 0.25;
  EXPECT_THROW(adversarial_training(d, p, 0.5, hyper(), 0), InvalidArgument);
  p = adversarial_training_preset();
  p.constraint = ConstraintKind::soft;
  EXPECT_THROW(adversarial_training(d, p, 0.5, hyper(), 0), InvalidArgument);
}
