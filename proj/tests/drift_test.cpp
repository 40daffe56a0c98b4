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


#include <pairrel/drift.hpp>

#include "test_util.hpp"

namespace pairrel {
namespace {

ModelConfig drift_config(std::vector<bool> frozen, LabelSpace space = LabelSpace::multiclass(3)) {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.dropout = 0.0;
  c.streams = {{StreamKind::mock, 6, 8, 1}, {StreamKind::mock, 10, 8, 2}};
  c.frozen = std::move(frozen);
  c.label_space = space;
  c.seed = 5;
  return c;
}

const std::vector<std::pair<std::string, std::string>> kDrugs{
    {"a", "CC(=O)N"}, {"b", "c1ccS1"}, {"c", "OCN"}, {"d", "C=CC=O"}, {"e", "NS(=O)C"}};

std::vector<MolecularInput> vocabulary(const Model& m) {
  std::vector<MolecularInput> v;
  for (const auto& [id, raw] : kDrugs) v.push_back(m.input(id, raw));
  return v;
}

std::vector<InputPair> all_pairs(const std::vector<MolecularInput>& v) {
  std::vector<InputPair> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j)
      if (i != j) out.emplace_back(v[i], v[j]);
  return out;
}

void perturb_prefix(Model& m, const std::string& prefix, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, p] : m.params())
    if (name.rfind(prefix, 0) == 0)
      for (auto& v : p.value.values()) v += scale * rng.normal();
}

ProbeInput single_token_probe(Rng& rng) {
  ProbeInput p;
  for (int s = 0; s < 2; ++s) {
    p.a_tokens.push_back(testing::random_tensor(rng, 1, 2));
    p.a_masks.push_back({1});
    p.b_tokens.push_back(testing::random_tensor(rng, 1, 2));
    p.b_masks.push_back({1});
  }
  return p;
}

TEST(Lipschitz, ZeroHeadGivesZero) {
  Model m(drift_config({false, false}));
  m.params().at("head.weight").value.fill(0.0);
  const auto v = vocabulary(m);
  std::vector<ProbeInput> probes{probe_input(m, m.params(), v[0], v[1]), probe_input(m, m.params(), v[2], v[3])};
  const auto est = estimate_lipschitz(model_predictor(m, m.params()), probes, 30, 1e-2, 1);
  EXPECT_EQ(est.value, 0.0);
  EXPECT_EQ(est.n_used, 30u);
}

TEST(Lipschitz, PrefixStableAndMonotone) {
  const Model m(drift_config({false, false}));
  const auto v = vocabulary(m);
  std::vector<ProbeInput> probes{probe_input(m, m.params(), v[0], v[1]), probe_input(m, m.params(), v[3], v[4])};
  const auto f = model_predictor(m, m.params());
  double prev = 0.0;
  for (std::size_t n : {10, 20, 40, 80}) {
    const double l = estimate_lipschitz(f, probes, n, 1e-2, 9).value;
    EXPECT_GE(l, prev);
    prev = l;
  }
  EXPECT_GT(prev, 0.0);
}

TEST(Lipschitz, AffineSurrogateApproachesOperatorNorm) {
  // f(x) = A x where A only reads the first anchor block (a 1 x 2 token).
  const double a11 = 1.5, a12 = -0.4, a21 = 0.3, a22 = 0.9;
  const ProjectedPredictor f = [&](const ProbeInput& x) {
    const Tensor& t = x.a_tokens[0];
    return std::vector<double>{a11 * t(0, 0) + a12 * t(0, 1), a21 * t(0, 0) + a22 * t(0, 1)};
  };
  // Largest singular value of the 2 x 2 block, closed form.
  const double p = a11 * a11 + a21 * a21, q = a11 * a12 + a21 * a22, r = a12 * a12 + a22 * a22;
  const double sigma = std::sqrt((p + r) / 2 + std::sqrt((p - r) * (p - r) / 4 + q * q));
  Rng rng(2);
  const std::vector<ProbeInput> probes{single_token_probe(rng), single_token_probe(rng)};
  const double small = estimate_lipschitz(f, probes, 30, 0.1, 4).value;
  const double large = estimate_lipschitz(f, probes, 30000, 0.1, 4).value;
  EXPECT_LE(small, sigma + 1e-12);
  EXPECT_LE(large, sigma + 1e-12);
  EXPECT_GE(large, small);
  EXPECT_GT(large, 0.995 * sigma);
}

TEST(Lipschitz, ZeroScaleSkipsEveryProbe) {
  Rng rng(3);
  const std::vector<ProbeInput> probes{single_token_probe(rng)};
  const ProjectedPredictor f = [](const ProbeInput& x) { return std::vector<double>{x.a_tokens[0](0, 0)}; };
  EXPECT_THROW(estimate_lipschitz(f, probes, 10, 0.0, 1), NumericFault);
  EXPECT_THROW(estimate_lipschitz(f, {}, 10, 0.1, 1), InvalidArgument);
}

TEST(PredictionDrift, IdentityAndMismatch) {
  const Model m(drift_config({false, false}));
  const auto pairs = all_pairs(vocabulary(m));
  EXPECT_EQ(prediction_drift(m, m, pairs), 0.0);
  const Model other(drift_config({true, false}));
  EXPECT_THROW(prediction_drift(m, other, pairs), ConfigError);
}

TEST(PredictionDrift, MatchesDirectReevaluation) {
  const Model ref(drift_config({true, false}));
  Model cur = ref;
  perturb_prefix(cur, "stream1.proj.weight", 0.05, 7);
  const auto pairs = all_pairs(vocabulary(ref));
  double worst = 0.0;
  for (const auto& [a, b] : pairs) {
    const auto p = cur.predict(a, b).probs, q = ref.predict(a, b).probs;
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
    worst = std::max(worst, std::sqrt(s));
  }
  EXPECT_GT(worst, 0.0);
  EXPECT_EQ(prediction_drift(cur, ref, pairs), worst);
}

TEST(VerifyBound, Examples) {
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<std::size_t> none;
  EXPECT_EQ(verify_bound(zero, none, 3.0, 0.0).bound_value, 0.0);
  EXPECT_TRUE(verify_bound(zero, none, 3.0, 0.0).holds);
  EXPECT_FALSE(verify_bound(zero, none, 3.0, 1e-3).holds);

  const std::vector<double> d{0.0, 0.5};
  const std::vector<std::size_t> a{1};
  const auto r = verify_bound(d, a, 2.0, 0.1);
  EXPECT_EQ(r.bound_value, 2.0);
  EXPECT_TRUE(r.holds);
  const auto v = verify_bound(d, a, 2.0, 2.5);
  EXPECT_FALSE(v.holds);
  EXPECT_EQ(v.measured_drift, 2.5);

  EXPECT_THROW(verify_bound(d, a, -1.0, 0.0), InvalidArgument);
  EXPECT_THROW(verify_bound(std::vector<double>{-0.1, 0.0}, none, 1.0, 0.0), InvalidArgument);
  EXPECT_THROW(verify_bound(d, none, 1.0, 0.0), ContractViolation);
}

TEST(AnalyzeDrift, AllFrozenWithPinnedDownstreamIsExactlyZero) {
  const Model ref(drift_config({true, true}));
  Model cur = ref;
  perturb_prefix(cur, "trunk.", 0.1, 3);
  perturb_prefix(cur, "head.", 0.1, 4);
  const auto v = vocabulary(ref);
  const auto pairs = all_pairs(v);
  const auto r = analyze_drift(cur, ref, v, pairs, {200, 1e-2, 1});
  EXPECT_EQ(r.measured_drift, 0.0);
  EXPECT_EQ(r.deltas, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(r.adaptive.empty());
  EXPECT_EQ(r.bound_value, 0.0);
  EXPECT_TRUE(r.holds);
  ASSERT_TRUE(r.total_drift.has_value());
  EXPECT_GT(*r.total_drift, 0.0);
}

TEST(AnalyzeDrift, BoundHoldsForAdaptivePerturbations) {
  for (auto space : {LabelSpace::binary(), LabelSpace::multiclass(3)}) {
    const Model ref(drift_config({true, false}, space));
    const auto v = vocabulary(ref);
    const auto pairs = all_pairs(v);
    for (double scale : {1e-3, 1e-2, 1e-1}) {
      Model cur = ref;
      perturb_prefix(cur, "stream1.proj.", scale, 11);
      const auto r = analyze_drift(cur, ref, v, pairs, {1000, 1e-2, 2});
      EXPECT_EQ(r.deltas[0], 0.0);
      EXPECT_GT(r.deltas[1], 0.0);
      EXPECT_GT(r.measured_drift, 0.0);
      EXPECT_TRUE(r.holds) << "scale " << scale << ": measured " << r.measured_drift << " bound " << r.bound_value;
    }
  }
}

TEST(DriftReportFile, JsonRoundTrip) {
  const std::vector<double> d{0.0, 0.25};
  const std::vector<std::size_t> a{1};
  auto r = verify_bound(d, a, 1.5, 0.2);
  r.n_probes = 1000;
  r.perturb_scale = 0.01;
  r.total_drift = 0.4;
  r.config = {{"d", 8}};
  const auto text = r.to_json().dump();
  EXPECT_EQ(DriftReport::from_json(nlohmann::json::parse(text)), r);
  EXPECT_NE(text.find("\"verdict\":\"holds\""), std::string::npos);
}

}  // namespace
}  // namespace pairrel
