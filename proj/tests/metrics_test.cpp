/*
 * Copyright 2026 The pairrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <pairrel/metrics.hpp>

#include "test_util.hpp"

namespace pairrel {
namespace {

ScoredBatch binary_batch(std::vector<double> p1, std::vector<long> labels) {
  ScoredBatch b{{}, std::move(labels), LabelSpace::binary()};
  for (double p : p1) b.predictions.push_back({{p}});
  return b;
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(micro_accuracy(binary_batch({0.9, 0.1}, {1, 0})), 1.0);
  EXPECT_EQ(micro_accuracy(binary_batch({0.9, 0.7}, {1, 0})), 0.5);
  EXPECT_EQ(micro_accuracy(binary_batch({0.5}, {1})), 1.0);
  EXPECT_THROW(micro_accuracy(binary_batch({}, {})), EmptyInput);
}

TEST(Auroc, Examples) {
  EXPECT_EQ(micro_auroc(binary_batch({0.9, 0.1}, {1, 0})), 1.0);
  EXPECT_EQ(micro_auroc(binary_batch({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0})), 0.5);
  EXPECT_EQ(micro_auroc(binary_batch({0.9, 0.8, 0.3}, {1, 0, 1})), 0.5);
  EXPECT_THROW(micro_auroc(binary_batch({0.9, 0.8}, {1, 1})), UndefinedMetric);
}

TEST(Aupr, Examples) {
  EXPECT_EQ(micro_aupr(binary_batch({0.9, 0.8, 0.1}, {1, 1, 0})), 1.0);
  EXPECT_EQ(micro_aupr(binary_batch({0.9, 0.1}, {0, 1})), 0.5);
  EXPECT_THROW(micro_aupr(binary_batch({0.9, 0.1}, {0, 0})), UndefinedMetric);
}

TEST(F1, Examples) {
  EXPECT_DOUBLE_EQ(micro_f1(binary_batch({0.9, 0.2, 0.6}, {1, 1, 1})), 0.8);
  EXPECT_EQ(micro_f1(binary_batch({0.9, 0.2}, {1, 0})), 1.0);
  EXPECT_THROW(micro_f1(binary_batch({}, {})), EmptyInput);
}

TEST(Mcc, Examples) {
  EXPECT_EQ(mcc(binary_batch({0.9, 0.2, 0.1, 0.8}, {1, 0, 0, 1})).value, 1.0);
  const auto constant = mcc(binary_batch({0.9, 0.9, 0.9, 0.9}, {1, 0, 1, 0}));
  EXPECT_EQ(constant.value, 0.0);
  EXPECT_TRUE(constant.degenerate);
  // TP, TN, FP, FN once each.
  const auto mixed = mcc(binary_batch({0.9, 0.1, 0.9, 0.1}, {1, 0, 0, 1}));
  EXPECT_EQ(mixed.value, 0.0);
  EXPECT_FALSE(mixed.degenerate);
}

double classical_mcc(double tp, double tn, double fp, double fn) {
  return (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
}

TEST(Mcc, BinaryReducesToClassicalFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = testing::random_batch(rng, 5 + rng.below(40), LabelSpace::binary());
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const bool p = b.predictions[i].probs[0] >= 0.5, y = b.labels[i] == 1;
      (p ? (y ? tp : fp) : (y ? fn : tn)) += 1;
    }
    const auto m = mcc(b);
    if (m.degenerate) continue;
    EXPECT_NEAR(m.value, classical_mcc(tp, tn, fp, fn), 1e-12);
  }
}

TEST(Mcc, MulticlassPerfectAndRange) {
  ScoredBatch b{{}, {}, LabelSpace::multiclass(3)};
  for (long y : {1, 2, 3, 1, 2}) {
    std::vector<double> p(3, 0.1);
    p[static_cast<std::size_t>(y - 1)] = 0.8;
    b.predictions.push_back({p});
    b.labels.push_back(y);
  }
  EXPECT_NEAR(mcc(b).value, 1.0, 1e-15);
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const double v = mcc(testing::random_batch(rng, 1 + rng.below(50), LabelSpace::multiclass(4))).value;
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(OracleEquivalence, AurocAndAuprMatchBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto space = trial % 2 ? LabelSpace::binary() : LabelSpace::multiclass(2 + rng.below(4));
    const auto b = testing::random_batch(rng, 1 + rng.below(50), space);
    const auto pooled = pooled_one_vs_rest(b);
    const bool has_pos = std::any_of(pooled.begin(), pooled.end(), [](auto& d) { return d.positive; });
    const bool has_neg = std::any_of(pooled.begin(), pooled.end(), [](auto& d) { return !d.positive; });
    if (has_pos && has_neg) {
      EXPECT_NEAR(micro_auroc(b), testing::brute_auroc(pooled), 1e-12);
    }
    if (has_pos) {
      EXPECT_NEAR(micro_aupr(b), testing::brute_aupr(pooled), 1e-12);
    }
  }
}

TEST(Structural, MicroF1EqualsAccuracyForMulticlass) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto b = testing::random_batch(rng, 1 + rng.below(50), LabelSpace::multiclass(2 + rng.below(5)));
    EXPECT_EQ(micro_f1(b), micro_accuracy(b));
  }
}

TEST(Structural, ReorderingAndMonotoneTransforms) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto b = testing::random_batch(rng, 2 + rng.below(40), LabelSpace::binary());
    b.labels[0] = 0;
    b.labels[1] = 1;
    const auto before = compute_metrics(b);
    std::vector<std::size_t> order(b.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    ScoredBatch shuffled{{}, {}, b.space};
    for (std::size_t i : order) {
      shuffled.predictions.push_back(b.predictions[i]);
      shuffled.labels.push_back(b.labels[i]);
    }
    EXPECT_EQ(compute_metrics(shuffled), before);
    ScoredBatch squashed = b;
    for (auto& p : squashed.predictions) p.probs[0] = p.probs[0] * p.probs[0] * p.probs[0];
    EXPECT_EQ(micro_auroc(squashed), *before.auroc);
  }
}

TEST(Report, FlagsAndJsonRoundTrip) {
  const auto r = compute_metrics(binary_batch({0.9, 0.9}, {1, 1}));
  EXPECT_FALSE(r.auroc.has_value());
  EXPECT_TRUE(r.aupr.has_value());
  EXPECT_EQ(r.flags, (std::vector<std::string>{"auroc_undefined", "mcc_degenerate"}));
  const auto j = r.to_json();
  EXPECT_TRUE(j["auroc"].is_null());
  EXPECT_EQ(MetricsReport::from_json(nlohmann::json::parse(j.dump())), r);
  Rng rng(6);
  const auto full = compute_metrics(testing::random_batch(rng, 30, LabelSpace::multiclass(4)));
  EXPECT_EQ(MetricsReport::from_json(nlohmann::json::parse(full.to_json().dump())), full);
}

TEST(Report, RejectsInvalidRows) {
  auto b = binary_batch({1.2}, {1});
  EXPECT_THROW(compute_metrics(b), InvalidArgument);
  b = binary_batch({0.2}, {2});
  EXPECT_THROW(compute_metrics(b), InvalidLabel);
}

}  // namespace
}  // namespace pairrel
