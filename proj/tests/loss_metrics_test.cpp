#include <gtest/gtest.h>

#include <cmath>

#include "optounet/error.hpp"
#include "optounet/loss.hpp"
#include "optounet/metrics.hpp"
#include "test_util.hpp"

using namespace optounet;
using optounet::test::check_gradients;
using optounet::test::random_tensor;

namespace {

double dcl(std::initializer_list<double> p, std::initializer_list<double> y, DiceConfig cfg = {}) {
  Tape<double> tape;
  const Dims d{1, 1, 1, p.size()};
  auto pv = tape.variable(Tensor4<double>::from_values(d, p));
  auto yv = tape.constant(Tensor4<double>::from_values(d, y));
  return dice_coefficient(pv, yv, cfg).value()[0];
}

Tensor4<double> random_mask(Rng& rng, const Dims& d, double fg = 0.3) {
  auto m = Tensor4<double>::zeros(d);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < fg ? 1 : 0;
  return m;
}

}  // namespace

TEST(Dice, HandEvaluatedExamples) {
  EXPECT_EQ(dcl({1, 1, 0, 0}, {1, 0, 1, 0}), 0.8);
  EXPECT_EQ(dcl({1, 0, 1, 0}, {1, 0, 0, 0}), 1.0);
}

TEST(Dice, LargeNLimits) {
  Rng rng(1);
  const Dims d{1, 1, 1000, 1000};
  auto y = random_mask(rng, d);
  auto inv = Tensor4<double>::zeros(d);
  inv.array() = 1.0 - y.array();
  Tape<double> tape;
  auto yv = tape.constant(y);
  const double perfect = dice_loss(tape.variable(y), yv).value()[0];
  const double inverted = dice_loss(tape.variable(inv), yv).value()[0];
  EXPECT_LT(perfect, 1e-5);
  EXPECT_GT(inverted, 1 - 1e-3);
  EXPECT_NEAR(1 - dice_coefficient_value(y, y), perfect, 1e-12);
}

TEST(Dice, ClassicalForm) {
  DiceConfig cfg;
  cfg.form = DiceForm::Classical;
  // (2*1 + 1) / (2 + 2 + 1)
  EXPECT_DOUBLE_EQ(dcl({1, 1, 0, 0}, {1, 0, 1, 0}, cfg), 3.0 / 5.0);
}

TEST(Dice, Errors) {
  Tape<double> tape;
  auto p = tape.variable(Tensor4<double>::constant(Dims{1, 1, 2, 2}, 0.5));
  auto q = tape.variable(Tensor4<double>::constant(Dims{1, 1, 2, 3}, 0.5));
  auto y = tape.constant(Tensor4<double>::constant(Dims{1, 1, 2, 2}, 1));
  EXPECT_THROW(dice_loss(p, q), ShapeError);
  auto out = tape.variable(Tensor4<double>::constant(Dims{1, 1, 2, 2}, 1.5));
  EXPECT_THROW(dice_loss(out, y), DomainError);
  auto half = tape.constant(Tensor4<double>::constant(Dims{1, 1, 2, 2}, 0.5));
  EXPECT_THROW(dice_loss(p, half), DomainError);
  DiceConfig bad;
  bad.eps = 0;
  EXPECT_THROW(dice_loss(p, y, bad), ConfigError);
}

TEST(Dice, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const Dims d{1, 1, 8, 8};
  auto p = random_tensor<double>(rng, d, 0.05, 0.95);
  auto y = random_mask(rng, d);
  for (auto form : {DiceForm::TwoTerm, DiceForm::Classical}) {
    DiceConfig cfg;
    cfg.form = form;
    auto res = check_gradients({p}, [&](Tape<double>& t, const std::vector<Var<double>>& v) {
      return dice_loss(v[0], t.constant(y), cfg);
    });
    EXPECT_LT(res.max_rel, 1e-6);
  }
}

TEST(Dice, RangeProperties) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 16 + rng.below(200);
    const Dims d{1, 1, 1, n};
    auto y = random_mask(rng, d, rng.uniform());
    auto p = random_tensor<double>(rng, d, 0, 1);
    const double v = dice_coefficient_value(p, y);
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 2);
    auto pb = random_mask(rng, d, rng.uniform());
    EXPECT_LE(dice_coefficient_value(pb, y), 1 + 2.0 / (n + 1.0));
  }
}

TEST(Dice, FixingAPixelNeverIncreasesLoss) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Dims d{1, 1, 1, 16 + rng.below(100)};
    auto y = random_mask(rng, d);
    auto p = random_mask(rng, d);
    std::vector<std::size_t> wrong;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] != y[i]) wrong.push_back(i);
    if (wrong.empty()) continue;
    const double before = 1 - dice_coefficient_value(p, y);
    const std::size_t k = wrong[rng.below(wrong.size())];
    p[k] = y[k];
    const double after = 1 - dice_coefficient_value(p, y);
    EXPECT_LE(after, before + 1e-15);
  }
}

TEST(Confusion, Examples) {
  const Dims d{1, 1, 4, 4};
  auto ones = Tensor4<float>::constant(d, 1);
  EXPECT_EQ(confusion_counts(ones, ones), (ConfusionCounts{16, 0, 0, 0}));
  auto p6 = Tensor4<float>::constant(d, 0.6f);
  auto z = Tensor4<float>::zeros(d);
  EXPECT_EQ(confusion_counts(p6, z).fp, 16u);
  auto half = Tensor4<float>::constant(d, 0.5f);
  EXPECT_EQ(confusion_counts(half, ones).tp, 16u);
  EXPECT_THROW(confusion_counts(ones, Tensor4<float>::zeros(Dims{1, 1, 4, 5})), ShapeError);
}

TEST(Confusion, MatchesBruteForceTally) {
  Rng rng(5);
  const Dims d{1, 1, 16, 16};
  auto pred = random_tensor<double>(rng, d, 0, 1);
  auto truth = random_mask(rng, d, 0.4);
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const bool p = pred(0, 0, y, x) >= 0.5;
      const bool t = truth(0, 0, y, x) == 1;
      tp += p && t;
      tn += !p && !t;
      fp += p && !t;
      fn += !p && t;
    }
  const auto c = confusion_counts(pred, truth);
  EXPECT_EQ(c, (ConfusionCounts{tp, tn, fp, fn}));
  EXPECT_EQ(c.total(), 256u);
}

// First four decimals of the value, without rounding.
long digits4(double v) { return static_cast<long>(std::floor(v * 1e4 + 1e-9)); }

TEST(Metrics, TableDscArithmetic) {
  // counts chosen so SEN and SPE are exactly the tabulated rates
  const auto opto = metrics_from_counts(ConfusionCounts{8425, 9980, 20, 1575});
  EXPECT_DOUBLE_EQ(*opto.sen, 0.8425);
  EXPECT_DOUBLE_EQ(*opto.spe, 0.9980);
  EXPECT_EQ(digits4(*opto.dsc), 9136);
  const auto unet = metrics_from_counts(ConfusionCounts{8346, 9968, 32, 1654});
  EXPECT_EQ(digits4(*unet.dsc), 9085);
  EXPECT_EQ(std::round(*unet.dsc * 1e4), 9085);
  // 0.913674 rounds half-up to 0.9137; 0.9136 is still inside the range the
  // 4-decimal SEN/SPE inputs allow
  EXPECT_LT(*harmonic_dsc(0.84245, 0.99795), 0.91365);
}

TEST(Metrics, FromCounts) {
  const ConfusionCounts c{30, 50, 10, 10};
  const auto m = metrics_from_counts(c);
  EXPECT_DOUBLE_EQ(*m.acc, 0.8);
  EXPECT_DOUBLE_EQ(*m.sen, 0.75);
  EXPECT_DOUBLE_EQ(*m.spe, 50.0 / 60.0);
  EXPECT_DOUBLE_EQ(*m.dsc, 2 * 0.75 * (50.0 / 60.0) / (0.75 + 50.0 / 60.0));
  EXPECT_DOUBLE_EQ(*m.iou, 0.6);
}

TEST(Metrics, DegenerateDenominators) {
  const auto m = metrics_from_counts(ConfusionCounts{16, 0, 0, 0});
  EXPECT_EQ(*m.acc, 1);
  EXPECT_EQ(*m.sen, 1);
  EXPECT_EQ(*m.iou, 1);
  EXPECT_FALSE(m.spe);
  EXPECT_FALSE(m.dsc);
  EXPECT_THROW(metrics_from_counts(ConfusionCounts{}), EmptyInputError);
}

TEST(Metrics, IouBounds) {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    if (c.total() == 0) continue;
    const auto m = metrics_from_counts(c);
    if (m.iou) {
      if (m.sen) EXPECT_LE(*m.iou, *m.sen);
      if (c.tp + c.fp > 0) EXPECT_LE(*m.iou, static_cast<double>(c.tp) / (c.tp + c.fp));
    }
  }
}

TEST(Metrics, MeanSkipsUndefined) {
  std::vector<MetricsRow> rows(2);
  rows[0].acc = 1.0;
  rows[0].spe = 0.5;
  rows[1].acc = 0.5;
  const auto m = mean_metrics(rows);
  EXPECT_DOUBLE_EQ(*m.acc, 0.75);
  EXPECT_DOUBLE_EQ(*m.spe, 0.5);
  EXPECT_FALSE(m.sen);
}
