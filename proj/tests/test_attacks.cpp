#include <polyclass/attacks.hpp>
#include <polyclass/data.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace polyclass;

namespace {

NeuralModel linear_model(const Matrix& w, const Vector& b, Head head) {
  NeuralModel m;
  m.head = head;
  m.k = static_cast<int>(w.rows());
  m.layers.push_back({w, b, Nonlinearity::none});
  return m;
}

double linf(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Vector random_pixels(Rng& rng, std::size_t n) {
  Vector x(n);
  for (double& v : x) v = rng.uniform();
  return x;
}

}  // namespace

TEST(Fgsm, ZeroEpsilonLeavesInputUnchanged) {
  const auto m = make_model({4, 6, 3}, Head::softrmax, InitScheme::fan_in_uniform, 2);
  const Vector x{0.1, 0.5, 0.9, 0.3};
  const AttackConfig cfg{0.0, 1, ClipRange{}};
  EXPECT_EQ(fgsm(m, x, 1, cfg), x);
  EXPECT_EQ(targeted_fgsm(m, x, 2, cfg), x);
  EXPECT_EQ(bim(m, x, 0, {0.0, 10, ClipRange{}}), x);
}

TEST(Fgsm, LinearSoftmaxDirectionFromSymbolicGradient) {
  const Matrix w{{1.0, -2.0, 0.5}, {-1.0, 1.0, 0.5}};
  const auto m = linear_model(w, {0.0, 0.1}, Head::softmax);
  const Vector x{0.2, 0.4, 0.6};
  const auto p = forward(m, x).posterior;
  for (std::size_t y = 0; y < 2; ++y) {
    Vector diff = p;
    diff[y] -= 1.0;
    const Vector g = matvec_transposed(w, diff);
    const Vector adv = fgsm(m, x, y, {0.05, 1, std::nullopt});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(adv[i] - x[i], 0.05 * sign(g[i]));
  }
  // The third weight column is identical across classes, so its gradient is 0 and the pixel stays put.
  EXPECT_EQ(fgsm(m, x, 0, {0.05, 1, std::nullopt})[2], x[2]);
}

TEST(Attacks, LinfBudgetAndClipRange) {
  Rng rng(5);
  for (Head h : {Head::softmax, Head::softrmax}) {
    const auto m = make_model({16, 8, 4}, h, InitScheme::fan_in_uniform, 7);
    ClassAverages avgs;
    for (int c = 0; c < 4; ++c) avgs.means.push_back(random_pixels(rng, 16));
    for (int trial = 0; trial < 50; ++trial) {
      const Vector x = random_pixels(rng, 16);
      const std::size_t y = rng.below(4);
      const std::size_t t = (y + 1 + rng.below(3)) % 4;
      const double eps = rng.uniform(0.0, 0.5);
      const AttackConfig one{eps, 1, ClipRange{}};
      const AttackConfig many{eps, 1 + static_cast<int>(rng.below(20)), ClipRange{}};
      for (const Vector& adv : {fgsm(m, x, y, one), targeted_fgsm(m, x, t, one), bim(m, x, y, many),
                                average_sample_attack(x, y, t, avgs, one)}) {
        EXPECT_LE(linf(adv, x), eps + 1e-12);
        for (double v : adv) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
      }
    }
  }
}

TEST(TargetedFgsm, BinaryTargetEqualsUntargetedForLinearSoftmax) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix w(2, 5);
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
    const auto m = linear_model(w, {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)}, Head::softmax);
    const Vector x = random_pixels(rng, 5);
    const AttackConfig cfg{0.1, 1, ClipRange{}};
    for (std::size_t y = 0; y < 2; ++y) EXPECT_EQ(targeted_fgsm(m, x, 1 - y, cfg), fgsm(m, x, y, cfg));
  }
}

TEST(TargetedFgsm, OutOfRangeTargetRejected) {
  const auto m = make_model({3, 2}, Head::softmax, InitScheme::barycenter, 1);
  EXPECT_THROW(targeted_fgsm(m, Vector{0.0, 0.0, 0.0}, 2, {}), InvalidTargetError);
}

TEST(Bim, SingleStepEqualsFgsm) {
  Rng rng(12);
  for (Head h : {Head::softmax, Head::softrmax}) {
    const auto m = make_model({10, 12, 3}, h, InitScheme::fan_in_uniform, 4);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = random_pixels(rng, 10);
      const std::size_t y = rng.below(3);
      const AttackConfig cfg{rng.uniform(0.01, 0.4), 1, ClipRange{}};
      EXPECT_EQ(bim(m, x, y, cfg), fgsm(m, x, y, cfg));
    }
  }
}

TEST(Bim, CumulativePerturbationWithinBudgetUnclipped) {
  Rng rng(13);
  const auto m = make_model({6, 8, 3}, Head::softrmax, InitScheme::fan_in_uniform, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_pixels(rng, 6);
    const AttackConfig cfg{0.3, 7, std::nullopt};
    EXPECT_LE(linf(bim(m, x, 0, cfg), x), 0.3 + 1e-12);
  }
}

TEST(Attacks, InvalidConfigRejected) {
  const auto m = make_model({2, 2}, Head::softmax, InitScheme::barycenter, 1);
  EXPECT_THROW(fgsm(m, Vector{0.0, 0.0}, 0, {-0.1, 1, ClipRange{}}), ConfigError);
  EXPECT_THROW(bim(m, Vector{0.0, 0.0}, 0, {0.1, 0, ClipRange{}}), ConfigError);
  EXPECT_THROW(fgsm(m, Vector{0.0, 0.0}, 0, {0.1, 1, ClipRange{1.0, 0.0}}), ConfigError);
}

TEST(AverageSample, EqualAveragesLeaveInputUnchanged) {
  ClassAverages avgs{{{0.2, 0.4}, {0.2, 0.4}}};
  const Vector x{0.5, 0.5};
  EXPECT_EQ(average_sample_attack(x, 0, 1, avgs, {0.3, 1, ClipRange{}}), x);
}

TEST(AverageSample, OneDimensionalMovesTowardTarget) {
  Dataset train;
  train.k = 2;
  train.features = Matrix(4, 1, {-2.0, -1.0, 1.0, 2.0});
  train.labels = {0, 0, 1, 1};
  const ClassAverages avgs = class_averages(train);
  EXPECT_DOUBLE_EQ(avgs.means[0][0], -1.5);
  EXPECT_DOUBLE_EQ(avgs.means[1][0], 1.5);
  const Vector adv = average_sample_attack(Vector{-1.2}, 0, 1, avgs, {0.25, 1, std::nullopt});
  EXPECT_DOUBLE_EQ(adv[0], -1.2 + 0.25);
}

TEST(AverageSample, PerturbationIndependentOfSample) {
  Rng rng(3);
  ClassAverages avgs;
  for (int c = 0; c < 3; ++c) avgs.means.push_back(random_pixels(rng, 8));
  const AttackConfig cfg{0.1, 1, std::nullopt};
  Vector first;
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = random_pixels(rng, 8);
    const Vector adv = average_sample_attack(x, 2, 0, avgs, cfg);
    Vector delta(8);
    for (std::size_t i = 0; i < 8; ++i) delta[i] = adv[i] - x[i];
    if (first.empty()) first = delta;
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(delta[i], first[i], 1e-15);
  }
}

TEST(AverageSample, SameClassTargetRejected) {
  ClassAverages avgs{{{0.0}, {1.0}}};
  EXPECT_THROW(average_sample_attack(Vector{0.5}, 1, 1, avgs, {}), InvalidTargetError);
}

TEST(ClassAveragesTest, MissingClassRejected) {
  Dataset train;
  train.k = 3;
  train.features = Matrix(2, 1, {0.0, 1.0});
  train.labels = {0, 1};
  EXPECT_THROW(class_averages(train), MissingClassError);
}

TEST(TargetedEvaluation, AggregatesOnHandPerturbation) {
  // Identity 3-class linear model. The perturbation moves the sample onto the
  // target's basis vector only for target 2, so target 2 always succeeds.
  const auto m = linear_model(Matrix::identity(3), {0.0, 0.0, 0.0}, Head::softmax);
  Dataset d;
  d.k = 3;
  d.features = Matrix(3, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  d.labels = {0, 1, 2};
  const auto ev = evaluate_targeted(m, d, [](std::span<const double> x, std::size_t, std::size_t t) {
    Vector out(x.begin(), x.end());
    if (t == 2) out = {0.0, 0.0, 5.0};
    return out;
  });
  // Pairs: (0,1) ok, (0,2) fail, (1,0) ok, (1,2) fail, (2,0) ok, (2,1) ok.
  EXPECT_DOUBLE_EQ(ev.mean_over_targets, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(ev.per_target[0], 1.0);
  EXPECT_DOUBLE_EQ(ev.per_target[1], 1.0);
  EXPECT_DOUBLE_EQ(ev.per_target[2], 0.0);
  EXPECT_DOUBLE_EQ(ev.worst_target, 0.0);
  EXPECT_DOUBLE_EQ(ev.all_targets_survived, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(ev.per_class[2], 1.0);
  EXPECT_DOUBLE_EQ(ev.per_class[0], 0.5);
}

TEST(BlackBox, ZeroEpsilonKeepsTargetAccuracy) {
  const Dataset d = make_moons(300, 0.1, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.grad_clip = 1.0;
  const auto target = train(make_model({2, 16, 2}, Head::softmax, InitScheme::barycenter, 2), d, cfg).model;
  const Dataset pool_data = make_moons(400, 0.1, 3);
  const Dataset test = make_moons(100, 0.1, 4);
  SubstituteConfig sub;
  sub.hidden = 16;
  sub.train.epochs = 20;
  const auto report = blackbox_substitute_attack(target, pool_data.features, test, {0.0, 1, std::nullopt}, sub);
  EXPECT_DOUBLE_EQ(report.evaluation.mean_over_targets, accuracy(target, test));
  EXPECT_GE(report.agreement, 0.8);
  EXPECT_TRUE(report.agreement_ok);
  EXPECT_EQ(report.substitute.head, Head::softmax);
  EXPECT_EQ(report.substitute.layers.size(), 2u);
}
