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

#include <cmath>
#include <numeric>
#include <pairrel/heads.hpp>

#include "test_util.hpp"

namespace pairrel {
namespace {

using testing::random_tensor;

TEST(Predict, ZeroBinaryHeadGivesHalf) {
  const auto space = LabelSpace::binary();
  ParameterStore ps;
  declare_head(ps, 6, space, 1);
  ps.at("head.weight").value.fill(0.0);
  ps.at("head.bias").value.fill(0.0);
  Graph g;
  Rng rng(1);
  const auto p = predict(Scope{&g, &ps, ""}, g.constant(random_tensor(rng, 1, 6)), space);
  ASSERT_EQ(p.probs.size(), 1u);
  EXPECT_EQ(p.probs[0], 0.5);
}

TEST(Predict, IdenticalLogitsAreUniform) {
  const auto p = predict_from_logits(std::vector<double>{2.5, 2.5, 2.5, 2.5}, LabelSpace::multiclass(4));
  for (double v : p.probs) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Predict, MulticlassSumsToOne) {
  const auto space = LabelSpace::multiclass(5);
  ParameterStore ps;
  declare_head(ps, 8, space, 2);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const auto p = predict(Scope{&g, &ps, ""}, g.constant(random_tensor(rng, 1, 8, 3.0)), space);
    EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-12);
    for (double v : p.probs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Predict, WidthMismatchIsConfigError) {
  const auto space = LabelSpace::binary();
  ParameterStore ps;
  declare_head(ps, 8, space, 2);
  Graph g;
  EXPECT_THROW(head_logits(Scope{&g, &ps, ""}, g.constant(Tensor(1, 6))), ConfigError);
}

TEST(CrossEntropy, KnownValues) {
  const long one = 1;
  EXPECT_NEAR(cross_entropy_value({{0, 0, 0, 0}}, std::span(&one, 1), LabelSpace::multiclass(4)), std::log(4.0),
              1e-15);
  EXPECT_NEAR(cross_entropy_value({{0}}, std::span(&one, 1), LabelSpace::binary()), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, VanishesAsMarginGrows) {
  const auto space = LabelSpace::multiclass(3);
  const std::vector<long> label{2};
  double prev = std::numeric_limits<double>::infinity();
  for (double margin : {0.0, 1.0, 5.0, 20.0, 100.0, 800.0}) {
    const double loss = cross_entropy_value({{0.0, margin, 0.0}}, label, space);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, prev);
    if (margin <= 20.0) {
      EXPECT_LT(loss, prev);
    }
    prev = loss;
  }
  EXPECT_EQ(prev, 0.0);
  const std::vector<long> bin{0};
  EXPECT_TRUE(std::isfinite(cross_entropy_value({{800.0}}, bin, LabelSpace::binary())));
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(3);
  const auto space = LabelSpace::multiclass(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor(rng, 1, 4, 2.0);
    const long label = 1 + static_cast<long>(rng.below(4));
    Graph g;
    Var x = g.leaf(logits, true);
    g.backward(cross_entropy(x, label, space));
    double z = 0;
    for (double v : logits.values()) z += std::exp(v);
    Tensor expected(1, 4);
    for (std::size_t c = 0; c < 4; ++c)
      expected(0, c) = std::exp(logits(0, c)) / z - (static_cast<long>(c) + 1 == label ? 1.0 : 0.0);
    EXPECT_LE(testing::max_rel_error(*g.grad(x), expected), 1e-12);
    const Tensor fd = testing::central_difference(
        [&](const Tensor& l) {
          Graph h(Graph::Options{.grad_enabled = false});
          return cross_entropy(h.constant(l), label, space).value()[0];
        },
        logits);
    EXPECT_LE(testing::max_rel_error(*g.grad(x), fd), 1e-6);
  }
}

TEST(CrossEntropy, BinaryGradientIsSigmoidMinusLabel) {
  for (double l : {-3.0, -0.2, 0.0, 1.7}) {
    for (long y : {0L, 1L}) {
      Graph g;
      Var x = g.leaf(Tensor(1, 1, l), true);
      g.backward(cross_entropy(x, y, LabelSpace::binary()));
      EXPECT_NEAR((*g.grad(x))[0], 1.0 / (1.0 + std::exp(-l)) - static_cast<double>(y), 1e-15);
    }
  }
}

TEST(CrossEntropy, BatchIsSumAndEmptyThrows) {
  const auto space = LabelSpace::multiclass(3);
  const std::vector<long> labels{1, 3};
  const double sum = cross_entropy_value({{0.1, 0.2, 0.3}, {1.0, -1.0, 0.5}}, labels, space);
  const double a = cross_entropy_value({{0.1, 0.2, 0.3}}, std::span(labels).first(1), space);
  const double b = cross_entropy_value({{1.0, -1.0, 0.5}}, std::span(labels).last(1), space);
  EXPECT_NEAR(sum, a + b, 1e-15);
  EXPECT_THROW(cross_entropy_value({}, std::span<const long>{}, space), EmptyInput);
}

TEST(LabelSpaceGate, RejectsForeignLabels) {
  const auto bin = LabelSpace::binary();
  const auto multi = LabelSpace::multiclass(4);
  const std::vector<long> two{2}, zero{0}, seven{7};
  EXPECT_THROW(cross_entropy_value({{0.0}}, two, bin), InvalidLabel);
  EXPECT_THROW(cross_entropy_value({{0, 0, 0, 0}}, zero, multi), InvalidLabel);
  EXPECT_THROW(cross_entropy_value({{0, 0, 0, 0}}, seven, multi), InvalidLabel);
  EXPECT_THROW(LabelSpace::multiclass(1), ConfigError);
  EXPECT_TRUE(bin.contains(0) && bin.contains(1) && !bin.contains(2));
  EXPECT_EQ(multi.label_of(multi.index_of(3)), 3);
}

}  // namespace
}  // namespace pairrel
