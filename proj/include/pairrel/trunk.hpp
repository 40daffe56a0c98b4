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

#include <string>
#include <utility>

#include "autograd.hpp"
#include "conditioning.hpp"
#include "nn.hpp"

namespace pairrel {

/// U_{a|b}, U_{b|a}, their pooled forms and z_ab = [p_{a|b}; p_{b|a}].
struct RelationState {
  Var a_given_b;
  Var b_given_a;
  Var p_a_given_b;
  Var p_b_given_a;
  Var z;
};

namespace trunk_names {
inline const std::string a_given_b = "trunk.a_given_b.";
inline const std::string b_given_a = "trunk.b_given_a.";
inline const std::string shared = "trunk.shared.";
}  // namespace trunk_names

/// One CA parameter set per direction, or a single shared set when `tied`.
inline void declare_trunk(ParameterStore& ps, std::size_t d, std::size_t heads, bool tied, std::uint64_t seed) {
  if (tied) {
    declare_ca_block(ps, trunk_names::shared, d, heads, seed);
  } else {
    declare_ca_block(ps, trunk_names::a_given_b, d, heads, seed);
    declare_ca_block(ps, trunk_names::b_given_a, d, heads, seed);
  }
}

inline std::pair<Var, Var> directional_states(const Scope& root, const FusedDrug& a, const FusedDrug& b, bool tied,
                                              const AttentionConfig& cfg) {
  if (a.tokens.cols() != b.tokens.cols()) throw ConfigError("trunk: fused widths differ");
  const Scope ab = root.sub("trunk").sub(tied ? "shared" : "a_given_b");
  const Scope ba = root.sub("trunk").sub(tied ? "shared" : "b_given_a");
  Var u_ab = ca_block(ab, a.tokens, b.tokens, b.tokens, b.mask, cfg);
  Var u_ba = ca_block(ba, b.tokens, a.tokens, a.tokens, a.mask, cfg);
  return {u_ab, u_ba};
}

/// z is computed on the pair exactly as ordered; no symmetrization.
inline RelationState relation_vector(Var a_given_b, Var b_given_a, const Mask& mask_a, const Mask& mask_b) {
  Var pa = pool(a_given_b, mask_a);
  Var pb = pool(b_given_a, mask_b);
  return {a_given_b, b_given_a, pa, pb, ops::concat_cols(pa, pb)};
}

inline RelationState relation_trunk(const Scope& root, const FusedDrug& a, const FusedDrug& b, bool tied,
                                    const AttentionConfig& cfg) {
  auto [u_ab, u_ba] = directional_states(root, a, b, tied, cfg);
  return relation_vector(u_ab, u_ba, a.mask, b.mask);
}

}  // namespace pairrel
