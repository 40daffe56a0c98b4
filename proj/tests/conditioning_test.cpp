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

#include <pairrel/conditioning.hpp>

#include "test_util.hpp"

namespace pairrel {
namespace {

using testing::prefix_mask;
using testing::random_tensor;

constexpr std::size_t kD = 8;
const AttentionConfig kCfg{2, 1e-5};

Tensor zero_padding(Tensor t, const Mask& m) {
  for (std::size_t r = 0; r < t.rows(); ++r)
    if (!m[r])
      for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = 0.0;
  return t;
}

struct DrugData {
  Tensor anchor, adapter;
  Mask anchor_mask, adapter_mask;
};

DrugData random_drug(Rng& rng, std::size_t t_r = 5, std::size_t v_r = 3, std::size_t t_t = 6, std::size_t v_t = 4) {
  DrugData d{random_tensor(rng, t_r, kD), random_tensor(rng, t_t, kD), prefix_mask(t_r, v_r), prefix_mask(t_t, v_t)};
  d.anchor = zero_padding(d.anchor, d.anchor_mask);
  d.adapter = zero_padding(d.adapter, d.adapter_mask);
  return d;
}

DrugStreams on_graph(Graph& g, const DrugData& d) {
  return {g.constant(d.anchor), d.anchor_mask, g.constant(d.adapter), d.adapter_mask};
}

ParameterStore fusion_params(FusionVariant v, std::uint64_t seed = 3) {
  ParameterStore ps;
  declare_fusion(ps, v, kD, kCfg.heads, seed);
  return ps;
}

TEST(Pool, HandAverage) {
  Graph g;
  Var h = g.constant(Tensor(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(pool(h, Mask{1, 1}).value().vec(), (std::vector<double>{2, 3}));
}

TEST(Pool, SingleRowVerbatimAndMaskAnnihilation) {
  Rng rng(1);
  Tensor h = random_tensor(rng, 4, 3);
  Graph g;
  const Tensor p = pool(g.constant(h), Mask{0, 0, 1, 0}).value();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(p(0, j), h(2, j));
  Tensor h2 = h;
  h2(0, 0) = 99.0;
  h2(3, 1) = -7.0;
  EXPECT_TRUE(pool(g.constant(h2), Mask{0, 1, 1, 0}).value().bit_equal(pool(g.constant(h), Mask{0, 1, 1, 0}).value()));
}

TEST(Pool, EmptyMaskThrows) {
  Graph g;
  EXPECT_THROW(pool(g.constant(Tensor(2, 2, 1.0)), Mask{0, 0}), EmptyPool);
}

TEST(CaBlock, AllMaskedKeysGiveLayerNormOfQuery) {
  Rng rng(2);
  ParameterStore ps;
  declare_ca_block(ps, "blk.", kD, kCfg.heads, 1);
  Graph g;
  const Scope sc{&g, &ps, "blk."};
  Var q = g.constant(random_tensor(rng, 3, kD));
  Var k = g.constant(random_tensor(rng, 4, kD));
  const Tensor out = ca_block(sc, q, k, k, Mask(4, 0), kCfg).value();
  const Tensor ln = layer_norm(sc.sub("norm"), q, kCfg.norm_eps).value();
  EXPECT_TRUE(out.bit_equal(ln));
}

TEST(CaBlock, KeyPermutationInvariance) {
  Rng rng(3);
  ParameterStore ps;
  declare_ca_block(ps, "blk.", kD, kCfg.heads, 1);
  Graph g;
  const Scope sc{&g, &ps, "blk."};
  const Tensor q = random_tensor(rng, 3, kD);
  const Tensor k = random_tensor(rng, 4, kD);
  const Mask m{1, 0, 1, 1};
  const std::vector<std::size_t> perm{2, 3, 0, 1};
  Tensor kp(4, kD);
  Mask mp(4);
  for (std::size_t i = 0; i < 4; ++i) {
    mp[i] = m[perm[i]];
    for (std::size_t j = 0; j < kD; ++j) kp(i, j) = k(perm[i], j);
  }
  const Tensor a = ca_block(sc, g.constant(q), g.constant(k), g.constant(k), m, kCfg).value();
  const Tensor b = ca_block(sc, g.constant(q), g.constant(kp), g.constant(kp), mp, kCfg).value();
  EXPECT_LE(testing::max_abs_diff(a, b), 1e-12);
}

TEST(CaBlock, WidthMismatchIsConfigError) {
  ParameterStore ps;
  declare_ca_block(ps, "blk.", kD, kCfg.heads, 1);
  Graph g;
  const Scope sc{&g, &ps, "blk."};
  Var q = g.constant(Tensor(2, kD));
  Var k = g.constant(Tensor(2, kD + 2));
  EXPECT_THROW(ca_block(sc, q, k, k, Mask{1, 1}, kCfg), ConfigError);
}

TEST(Gamma, WidthAndMaskedTokenInsensitivity) {
  Rng rng(4);
  const auto ps = fusion_params(FusionVariant::twoway_untied);
  DrugData d = random_drug(rng);
  Graph g;
  const Scope root{&g, &ps, ""};
  const Scope blk = root.sub("fusion").sub("t_from_r");
  const Tensor a = gamma(blk, on_graph(g, d), Direction::t_from_r, kCfg).value();
  EXPECT_EQ(a.cols(), kD);
  EXPECT_EQ(a.rows(), 1u);
  d.anchor(4, 2) = 123.0;  // beta = r, row 4 is padding
  const Tensor b = gamma(blk, on_graph(g, d), Direction::t_from_r, kCfg).value();
  EXPECT_TRUE(a.bit_equal(b));
}

// Pooled g per variant, recomposed from ca_block / pool / mlp_apply.
Tensor hand_pooled(FusionVariant v, const ParameterStore& ps, const DrugData& d) {
  Graph g;
  const Scope root{&g, &ps, ""};
  Var r = g.constant(d.anchor);
  Var t = g.constant(d.adapter);
  auto blk = [&](const char* name) { return root.sub("fusion").sub(name); };
  const Scope mlp = root.sub("fusion").sub("pool_mlp");
  switch (v) {
    case FusionVariant::concat_mlp:
      return mlp_apply(mlp, ops::concat_cols(pool(r, d.anchor_mask), pool(t, d.adapter_mask))).value();
    case FusionVariant::oneway_t_from_r:
      return pool(ca_block(blk("t_from_r"), t, r, r, d.anchor_mask, kCfg), d.adapter_mask).value();
    case FusionVariant::oneway_r_from_t:
      return pool(ca_block(blk("r_from_t"), r, t, t, d.adapter_mask, kCfg), d.anchor_mask).value();
    case FusionVariant::twoway_untied:
    case FusionVariant::twoway_tied: {
      const bool tied = v == FusionVariant::twoway_tied;
      Var gt = pool(ca_block(blk(tied ? "shared" : "t_from_r"), t, r, r, d.anchor_mask, kCfg), d.adapter_mask);
      Var gr = pool(ca_block(blk(tied ? "shared" : "r_from_t"), r, t, t, d.adapter_mask, kCfg), d.anchor_mask);
      return mlp_apply(mlp, ops::concat_cols(gt, gr)).value();
    }
  }
  return {};
}

TEST(Fuse, EachVariantMatchesHandComposition) {
  Rng rng(5);
  for (auto v : kAllFusionVariants) {
    const auto ps = fusion_params(v);
    for (int trial = 0; trial < 5; ++trial) {
      const DrugData d = random_drug(rng, 3 + rng.below(4), 1 + rng.below(3), 3 + rng.below(4), 1 + rng.below(3));
      Graph g;
      const Scope root{&g, &ps, ""};
      const FusedDrug f = fuse(root, on_graph(g, d), v, kCfg);
      EXPECT_LE(testing::max_abs_diff(f.pooled.value(), hand_pooled(v, ps, d)), 1e-12) << to_string(v);
      EXPECT_EQ(f.tokens.cols(), kD);
      EXPECT_EQ(f.tokens.rows(), f.mask.size());
    }
  }
}

TEST(Fuse, PooledEqualsPoolOfTokens) {
  Rng rng(6);
  for (auto v : kAllFusionVariants) {
    const auto ps = fusion_params(v);
    const DrugData d = random_drug(rng);
    Graph g;
    const Scope root{&g, &ps, ""};
    const FusedDrug f = fuse(root, on_graph(g, d), v, kCfg);
    EXPECT_LE(testing::max_abs_diff(f.pooled.value(), pool(f.tokens, f.mask).value()), 1e-12) << to_string(v);
  }
}

TEST(Fuse, MaskFollowsQueryRole) {
  Rng rng(7);
  const DrugData d = random_drug(rng, 5, 2, 6, 4);
  for (auto v : kAllFusionVariants) {
    const auto ps = fusion_params(v);
    Graph g;
    const Scope root{&g, &ps, ""};
    const FusedDrug f = fuse(root, on_graph(g, d), v, kCfg);
    EXPECT_EQ(f.mask, v == FusionVariant::oneway_r_from_t ? d.anchor_mask : d.adapter_mask) << to_string(v);
  }
}

TEST(Fuse, TiedEqualsUntiedWithSharedParameters) {
  Rng rng(8);
  const auto tied = fusion_params(FusionVariant::twoway_tied);
  auto untied = fusion_params(FusionVariant::twoway_untied);
  for (const auto& [name, p] : tied) {
    const std::string shared = fusion_names::shared;
    if (name.rfind(shared, 0) == 0) {
      const std::string rest = name.substr(shared.size());
      untied.at(fusion_names::t_from_r + rest).value = p.value;
      untied.at(fusion_names::r_from_t + rest).value = p.value;
    } else {
      untied.at(name).value = p.value;
    }
  }
  for (int trial = 0; trial < 10; ++trial) {
    const DrugData d = random_drug(rng);
    Graph g;
    const FusedDrug a = fuse(Scope{&g, &tied, ""}, on_graph(g, d), FusionVariant::twoway_tied, kCfg);
    const FusedDrug b = fuse(Scope{&g, &untied, ""}, on_graph(g, d), FusionVariant::twoway_untied, kCfg);
    EXPECT_TRUE(a.pooled.value().bit_equal(b.pooled.value()));
    EXPECT_TRUE(a.tokens.value().bit_equal(b.tokens.value()));
  }
}

TEST(Fuse, OneWayDirectionsDiffer) {
  Rng rng(9);
  ParameterStore ps;
  declare_fusion(ps, FusionVariant::oneway_t_from_r, kD, kCfg.heads, 11);
  declare_fusion(ps, FusionVariant::oneway_r_from_t, kD, kCfg.heads, 12);
  const DrugData d = random_drug(rng);
  Graph g;
  const Scope root{&g, &ps, ""};
  const Tensor a = fuse(root, on_graph(g, d), FusionVariant::oneway_t_from_r, kCfg).pooled.value();
  const Tensor b = fuse(root, on_graph(g, d), FusionVariant::oneway_r_from_t, kCfg).pooled.value();
  EXPECT_GT(testing::max_abs_diff(a, b), 1e-6);
}

TEST(Fuse, PaddingInsensitivity) {
  Rng rng(10);
  for (auto v : kAllFusionVariants) {
    const auto ps = fusion_params(v);
    DrugData d = random_drug(rng, 5, 3, 6, 4);
    Graph g;
    const Scope root{&g, &ps, ""};
    const Tensor a = fuse(root, on_graph(g, d), v, kCfg).pooled.value();
    d.anchor(3, 0) = 50.0;
    d.adapter(5, 7) = -50.0;
    const Tensor b = fuse(root, on_graph(g, d), v, kCfg).pooled.value();
    EXPECT_TRUE(a.bit_equal(b)) << to_string(v);
  }
}

TEST(FusionVariantTag, ParsesBothSpellings) {
  for (auto v : kAllFusionVariants) EXPECT_EQ(parse_fusion_variant(to_string(v)), v);
  EXPECT_EQ(parse_fusion_variant("TwoWayTied"), FusionVariant::twoway_tied);
  EXPECT_EQ(parse_fusion_variant("OneWay_r_from_t"), FusionVariant::oneway_r_from_t);
  EXPECT_THROW(parse_fusion_variant("threeway"), ConfigError);
}

TEST(Fuse, WidthMismatchIsConfigError) {
  const auto ps = fusion_params(FusionVariant::concat_mlp);
  Graph g;
  const DrugStreams s{g.constant(Tensor(2, kD)), Mask{1, 1}, g.constant(Tensor(2, kD + 1)), Mask{1, 1}};
  EXPECT_THROW(fuse(Scope{&g, &ps, ""}, s, FusionVariant::concat_mlp, kCfg), ConfigError);
}

}  // namespace
}  // namespace pairrel
