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

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "autograd.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace pairrel {

enum class FusionVariant { concat_mlp, oneway_t_from_r, oneway_r_from_t, twoway_untied, twoway_tied };

inline constexpr std::array<FusionVariant, 5> kAllFusionVariants = {
    FusionVariant::concat_mlp, FusionVariant::oneway_t_from_r, FusionVariant::oneway_r_from_t,
    FusionVariant::twoway_untied, FusionVariant::twoway_tied};

inline const char* to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::concat_mlp: return "concat_mlp";
    case FusionVariant::oneway_t_from_r: return "oneway_t_from_r";
    case FusionVariant::oneway_r_from_t: return "oneway_r_from_t";
    case FusionVariant::twoway_untied: return "twoway_untied";
    case FusionVariant::twoway_tied: return "twoway_tied";
  }
  return "?";
}

/// Accepts both the snake_case flag spelling and the CamelCase tag.
inline FusionVariant parse_fusion_variant(std::string_view s) {
  if (s == "concat_mlp" || s == "ConcatMLP") return FusionVariant::concat_mlp;
  if (s == "oneway_t_from_r" || s == "OneWay_t_from_r") return FusionVariant::oneway_t_from_r;
  if (s == "oneway_r_from_t" || s == "OneWay_r_from_t") return FusionVariant::oneway_r_from_t;
  if (s == "twoway_untied" || s == "TwoWayUntied") return FusionVariant::twoway_untied;
  if (s == "twoway_tied" || s == "TwoWayTied") return FusionVariant::twoway_tied;
  throw ConfigError("unknown fusion variant '" + std::string(s) + "'");
}

enum class Direction { t_from_r, r_from_t };

/// Projected anchor (r) and adapter (t) streams of one drug.
struct DrugStreams {
  Var anchor;
  Mask anchor_mask;
  Var adapter;
  Mask adapter_mask;
};

/// H-tilde with its mask, plus the pooled drug vector g.
struct FusedDrug {
  Var tokens;
  Mask mask;
  Var pooled;
};

namespace fusion_names {
inline const std::string t_from_r = "fusion.t_from_r.";
inline const std::string r_from_t = "fusion.r_from_t.";
inline const std::string shared = "fusion.shared.";
inline const std::string pool_mlp = "fusion.pool_mlp.";
inline const std::string token_mlp = "fusion.token_mlp.";
}  // namespace fusion_names

inline void declare_fusion(ParameterStore& ps, FusionVariant v, std::size_t d, std::size_t heads,
                           std::uint64_t seed) {
  using namespace fusion_names;
  switch (v) {
    case FusionVariant::concat_mlp:
      break;
    case FusionVariant::oneway_t_from_r:
      declare_ca_block(ps, t_from_r, d, heads, seed);
      return;
    case FusionVariant::oneway_r_from_t:
      declare_ca_block(ps, r_from_t, d, heads, seed);
      return;
    case FusionVariant::twoway_untied:
      declare_ca_block(ps, t_from_r, d, heads, seed);
      declare_ca_block(ps, r_from_t, d, heads, seed);
      break;
    case FusionVariant::twoway_tied:
      declare_ca_block(ps, shared, d, heads, seed);
      break;
  }
  declare_mlp(ps, pool_mlp, 2 * d, d, d, seed);
  declare_mlp(ps, token_mlp, 2 * d, d, d, seed);
}

/// Pool(H, m): mean of the rows at mask = 1.
inline Var pool(Var h, const Mask& mask) { return ops::masked_mean(h, mask); }

/// CA block output of one conditioning direction, before pooling.
inline Var condition(const Scope& block, const DrugStreams& s, Direction dir, const AttentionConfig& cfg) {
  if (dir == Direction::t_from_r) return ca_block(block, s.adapter, s.anchor, s.anchor, s.anchor_mask, cfg);
  return ca_block(block, s.anchor, s.adapter, s.adapter, s.adapter_mask, cfg);
}

/// Gamma(alpha <- beta; params): Pool(CA(H^alpha, H^beta, H^beta; m^beta), m^alpha).
inline Var gamma(const Scope& block, const DrugStreams& s, Direction dir, const AttentionConfig& cfg) {
  return pool(condition(block, s, dir, cfg), dir == Direction::t_from_r ? s.adapter_mask : s.anchor_mask);
}

namespace detail {

// Zero the padding of `x`, then cut or zero-pad it to `n` rows.
inline Var align_rows(Var x, const Mask& mask, std::size_t n) { return ops::take_rows(ops::mask_rows(x, mask), n); }

// Per-token mix of two aligned sequences, shifted so that pooling the result
// over `mask` reproduces `pooled`.
inline Var mixed_tokens(const Scope& root, Var left, Var right, const Mask& mask, Var pooled) {
  Var mixed = mlp_apply(root.sub("fusion").sub("token_mlp"), ops::concat_cols(left, right));
  Var shift = ops::sub(pooled, pool(mixed, mask));
  return ops::add(mixed, ops::broadcast_rows(shift, mixed.rows()));
}

}  // namespace detail

/// Merges one drug's anchor and adapter streams with the chosen operator.
/// `root` is the unprefixed model scope.
inline FusedDrug fuse(const Scope& root, const DrugStreams& s, FusionVariant v, const AttentionConfig& cfg) {
  if (s.anchor.cols() != s.adapter.cols()) {
    throw ConfigError("fuse: stream widths differ (" + std::to_string(s.anchor.cols()) + " vs " +
                      std::to_string(s.adapter.cols()) + ")");
  }
  const Scope pool_mlp = root.sub("fusion").sub("pool_mlp");
  const std::size_t t_len = s.adapter.rows();
  switch (v) {
    case FusionVariant::concat_mlp: {
      Var g = mlp_apply(pool_mlp, ops::concat_cols(pool(s.anchor, s.anchor_mask), pool(s.adapter, s.adapter_mask)));
      Var tokens = detail::mixed_tokens(root, detail::align_rows(s.anchor, s.anchor_mask, t_len), s.adapter,
                                        s.adapter_mask, g);
      return {tokens, s.adapter_mask, g};
    }
    case FusionVariant::oneway_t_from_r: {
      Var u = condition(root.sub("fusion").sub("t_from_r"), s, Direction::t_from_r, cfg);
      return {u, s.adapter_mask, pool(u, s.adapter_mask)};
    }
    case FusionVariant::oneway_r_from_t: {
      Var u = condition(root.sub("fusion").sub("r_from_t"), s, Direction::r_from_t, cfg);
      return {u, s.anchor_mask, pool(u, s.anchor_mask)};
    }
    case FusionVariant::twoway_untied:
    case FusionVariant::twoway_tied: {
      const bool tied = v == FusionVariant::twoway_tied;
      const Scope tr = root.sub("fusion").sub(tied ? "shared" : "t_from_r");
      const Scope rt = root.sub("fusion").sub(tied ? "shared" : "r_from_t");
      Var u_t = condition(tr, s, Direction::t_from_r, cfg);
      Var u_r = condition(rt, s, Direction::r_from_t, cfg);
      Var g = mlp_apply(pool_mlp, ops::concat_cols(pool(u_t, s.adapter_mask), pool(u_r, s.anchor_mask)));
      Var tokens = detail::mixed_tokens(root, u_t, detail::align_rows(u_r, s.anchor_mask, t_len), s.adapter_mask, g);
      return {tokens, s.adapter_mask, g};
    }
  }
  throw ConfigError("fuse: unknown variant");
}

}  // namespace pairrel
