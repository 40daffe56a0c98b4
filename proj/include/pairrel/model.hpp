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

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "conditioning.hpp"
#include "encoders.hpp"
#include "errors.hpp"
#include "heads.hpp"
#include "nn.hpp"
#include "trunk.hpp"

namespace pairrel {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  double norm_eps = 1e-5;
  double dropout = 0.1;
  FusionVariant fusion = FusionVariant::twoway_untied;
  bool trunk_tied = false;
  std::vector<StreamConfig> streams = {{StreamKind::mock, 48, 32, 1}, {StreamKind::mock, 64, 32, 2}};
  // Stream indices carrying the anchor (r) and adapter (t) roles.
  std::size_t anchor_stream = 0;
  std::size_t adapter_stream = 1;
  // delta_m per stream.
  std::vector<bool> frozen = {true, false};
  LabelSpace label_space = LabelSpace::multiclass(4, true);
  std::uint64_t seed = 7;

  bool operator==(const ModelConfig&) const = default;
};

/// Parses a freeze pattern over roles: "r", "t", "rt" (or "tr"), "none".
inline std::vector<bool> freeze_from_pattern(std::string_view pattern, std::size_t anchor, std::size_t adapter,
                                             std::size_t n_streams) {
  std::vector<bool> frozen(n_streams, false);
  if (pattern == "none" || pattern.empty()) return frozen;
  for (char c : pattern) {
    if (c == 'r') frozen.at(anchor) = true;
    else if (c == 't') frozen.at(adapter) = true;
    else throw ConfigError("freeze pattern '" + std::string(pattern) + "': expected letters from {r, t} or 'none'");
  }
  return frozen;
}

inline std::string freeze_pattern(const ModelConfig& c) {
  std::string p;
  if (c.frozen.at(c.anchor_stream)) p += 'r';
  if (c.frozen.at(c.adapter_stream)) p += 't';
  return p.empty() ? "none" : p;
}

inline void validate(const ModelConfig& c) {
  if (c.d == 0) throw ConfigError("d must be positive");
  if (c.heads == 0 || c.d % c.heads != 0) {
    throw ConfigError("d = " + std::to_string(c.d) + " not divisible by heads = " + std::to_string(c.heads));
  }
  if (!(c.norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (c.streams.size() != 2) throw ConfigError("the model path consumes exactly two streams (anchor and adapter)");
  if (c.frozen.size() != c.streams.size()) throw ConfigError("one freeze flag per stream required");
  if (c.anchor_stream >= c.streams.size() || c.adapter_stream >= c.streams.size() ||
      c.anchor_stream == c.adapter_stream) {
    throw ConfigError("roles must assign exactly one anchor and one adapter stream");
  }
}

/// Projected sequences of one drug, one entry per stream.
struct ProjectedDrug {
  std::vector<Var> tokens;
  std::vector<Mask> masks;
};

/// Full predictor: encoders -> projection -> within-drug fusion -> relation
/// trunk -> head. Owns its parameters; copies are independent.
class Model {
 public:
  explicit Model(ModelConfig cfg, std::shared_ptr<const EmbeddingStore> store = nullptr)
      : cfg_(std::move(cfg)), store_(std::move(store)) {
    validate(cfg_);
    for (std::size_t m = 0; m < cfg_.streams.size(); ++m) {
      if (cfg_.streams[m].kind == StreamKind::precomputed && !store_) {
        throw ConfigError("stream " + std::to_string(m) + " is precomputed but no embedding store was given");
      }
      declare_stream(params_, stream(m), cfg_.d, cfg_.seed);
    }
    declare_fusion(params_, cfg_.fusion, cfg_.d, cfg_.heads, cfg_.seed);
    declare_trunk(params_, cfg_.d, cfg_.heads, cfg_.trunk_tied, cfg_.seed);
    declare_head(params_, 2 * cfg_.d, cfg_.label_space, cfg_.seed);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  const EmbeddingStore* embedding_store() const noexcept { return store_.get(); }
  std::shared_ptr<const EmbeddingStore> shared_store() const { return store_; }
  AttentionConfig attention() const { return {cfg_.heads, cfg_.norm_eps}; }

  EncoderStream stream(std::size_t m) const {
    return EncoderStream{m, cfg_.streams.at(m), cfg_.frozen.at(m),
                         m == cfg_.anchor_stream ? Role::anchor : Role::adapter};
  }
  std::vector<EncoderStream> streams() const {
    std::vector<EncoderStream> out;
    for (std::size_t m = 0; m < cfg_.streams.size(); ++m) out.push_back(stream(m));
    return out;
  }

  /// Parameter-name prefixes of F_{psi, omega}: everything downstream of the
  /// projected token sequences.
  static const std::vector<std::string>& downstream_prefixes() {
    static const std::vector<std::string> p = {"fusion.", "trunk.", "head."};
    return p;
  }

  MolecularInput input(const std::string& drug_id, const std::string& raw) const {
    const auto s = streams();
    return make_input(drug_id, raw, s, store_.get());
  }

  ProjectedDrug project_drug(const Scope& root, const MolecularInput& in) const {
    ProjectedDrug out;
    for (std::size_t m = 0; m < cfg_.streams.size(); ++m) {
      const EncoderStream s = stream(m);
      const Scope sc = root.sub("stream" + std::to_string(m));
      out.tokens.push_back(project(sc, encode(sc, in, s, store_.get()), in.masks.at(m), s, cfg_.norm_eps));
      out.masks.push_back(in.masks.at(m));
    }
    return out;
  }

  DrugStreams roles(const ProjectedDrug& p) const {
    return {p.tokens.at(cfg_.anchor_stream), p.masks.at(cfg_.anchor_stream), p.tokens.at(cfg_.adapter_stream),
            p.masks.at(cfg_.adapter_stream)};
  }

  FusedDrug fuse_drug(const Scope& root, const ProjectedDrug& p) const {
    return fuse(root, roles(p), cfg_.fusion, attention());
  }

  RelationState relate(const Scope& root, const FusedDrug& a, const FusedDrug& b) const {
    return relation_trunk(root, a, b, cfg_.trunk_tied, attention());
  }

  Var logits(const Scope& root, const FusedDrug& a, const FusedDrug& b) const {
    return head_logits(root, relate(root, a, b).z);
  }

  /// F_{psi, omega}: prediction from already projected token sequences.
  Prediction predict_projected(const ParameterStore& ps, std::span<const Tensor> a_tokens,
                               std::span<const Mask> a_masks, std::span<const Tensor> b_tokens,
                               std::span<const Mask> b_masks) const {
    Graph g(Graph::Options{.grad_enabled = false});
    const Scope root{&g, &ps, ""};
    auto wrap = [&](std::span<const Tensor> t, std::span<const Mask> m) {
      ProjectedDrug p;
      for (std::size_t i = 0; i < t.size(); ++i) {
        p.tokens.push_back(g.constant(t[i]));
        p.masks.push_back(m[i]);
      }
      return p;
    };
    const FusedDrug a = fuse_drug(root, wrap(a_tokens, a_masks));
    const FusedDrug b = fuse_drug(root, wrap(b_tokens, b_masks));
    return predict_from_logits(logits(root, a, b).value().values(), cfg_.label_space);
  }

  Prediction predict(const MolecularInput& a, const MolecularInput& b) const;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const EmbeddingStore> store_;
  ParameterStore params_;
};

/// One graph's worth of forward computation. Each drug is projected and
/// fused once per pass, however many pairs it appears in.
class ForwardPass {
 public:
  ForwardPass(const Model& model, Graph& graph, const ParameterStore* params = nullptr)
      : model_(model), root_{&graph, params ? params : &model.params(), ""} {}

  const FusedDrug& fused(const MolecularInput& in) {
    auto it = cache_.find(in.drug_id);
    if (it != cache_.end()) return it->second;
    const FusedDrug f = model_.fuse_drug(root_, model_.project_drug(root_, in));
    return cache_.emplace(in.drug_id, f).first->second;
  }

  Var logits(const MolecularInput& a, const MolecularInput& b) {
    const FusedDrug fa = fused(a);
    const FusedDrug fb = fused(b);
    return model_.logits(root_, fa, fb);
  }

  RelationState relation(const MolecularInput& a, const MolecularInput& b) {
    const FusedDrug fa = fused(a);
    const FusedDrug fb = fused(b);
    return model_.relate(root_, fa, fb);
  }

  const Scope& scope() const noexcept { return root_; }

 private:
  const Model& model_;
  Scope root_;
  std::map<std::string, FusedDrug> cache_;
};

inline Prediction Model::predict(const MolecularInput& a, const MolecularInput& b) const {
  Graph g(Graph::Options{.grad_enabled = false});
  ForwardPass pass(*this, g);
  return predict_from_logits(pass.logits(a, b).value().values(), cfg_.label_space);
}

/// Copies F_{psi, omega}'s parameters (fusion, trunk, head) from `reference`.
inline void pin_downstream(Model& model, const ParameterStore& reference) {
  for (auto& [name, p] : model.params()) {
    for (const auto& prefix : Model::downstream_prefixes()) {
      if (name.rfind(prefix, 0) == 0) {
        p.value = reference.at(name).value;
        break;
      }
    }
  }
}

}  // namespace pairrel
