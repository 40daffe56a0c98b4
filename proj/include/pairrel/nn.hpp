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

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pairrel {

/// Named parameters in name order. Name order is also the serialization order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true) {
    auto [it, inserted] = params_.emplace(name, Parameter{name, std::move(value), trainable});
    if (!inserted) throw ConfigError("parameter '" + name + "' declared twice");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw MissingEntity("unknown parameter '" + name + "'");
    return it->second;
  }
  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw MissingEntity("unknown parameter '" + name + "'");
    return it->second;
  }

  /// Sets `trainable` on every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, p] : params_)
      if (name.rfind(prefix, 0) == 0) p.trainable = trainable;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) out.push_back(name);
    return out;
  }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// True when both stores hold the same names, shapes and value bits for
  /// every parameter under `prefix` (all parameters by default).
  bool bit_equal(const ParameterStore& other, const std::string& prefix = {}) const {
    auto pick = [&](const ParameterStore& s) {
      std::vector<const Parameter*> out;
      for (const auto& [name, p] : s.params_)
        if (name.rfind(prefix, 0) == 0) out.push_back(&p);
      return out;
    };
    const auto a = pick(*this), b = pick(other);
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->name != b[i]->name || !a[i]->value.bit_equal(b[i]->value)) return false;
    return true;
  }

  /// Same names and shapes, values ignored.
  bool same_layout(const ParameterStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    auto it = other.params_.begin();
    for (const auto& [name, p] : params_) {
      if (name != it->first || !p.value.same_shape(it->second.value)) return false;
      ++it;
    }
    return true;
  }

 private:
  std::map<std::string, Parameter> params_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn from a stream keyed by
/// the parameter name so values do not depend on declaration order.
inline Tensor uniform_init(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols,
                           std::size_t fan_in) {
  Rng rng = Rng::substream(seed, "init:" + name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

/// A graph plus the store to bind parameters from, under a name prefix.
struct Scope {
  Graph* graph;
  const ParameterStore* store;
  std::string prefix;

  Scope sub(const std::string& name) const { return Scope{graph, store, prefix + name + "."}; }
  Var param(const std::string& name) const { return graph->parameter(store->at(prefix + name)); }
};

// -- declarations ------------------------------------------------------------

inline void declare_linear(ParameterStore& s, const std::string& prefix, std::size_t in, std::size_t out,
                           std::uint64_t seed) {
  s.add(prefix + "weight", uniform_init(seed, prefix + "weight", in, out, in));
  s.add(prefix + "bias", uniform_init(seed, prefix + "bias", 1, out, in));
}

inline void declare_layer_norm(ParameterStore& s, const std::string& prefix, std::size_t d) {
  s.add(prefix + "gain", Tensor(1, d, 1.0));
  s.add(prefix + "bias", Tensor(1, d, 0.0));
}

/// Two affine layers in -> hidden -> out with ReLU between them.
inline void declare_mlp(ParameterStore& s, const std::string& prefix, std::size_t in, std::size_t hidden,
                        std::size_t out, std::uint64_t seed) {
  declare_linear(s, prefix + "fc1.", in, hidden, seed);
  declare_linear(s, prefix + "fc2.", hidden, out, seed);
}

inline void declare_attention(ParameterStore& s, const std::string& prefix, std::size_t d, std::size_t heads,
                              std::uint64_t seed) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  for (const char* p : {"query.", "key.", "value.", "out."}) declare_linear(s, prefix + p, d, d, seed);
}

inline void declare_ca_block(ParameterStore& s, const std::string& prefix, std::size_t d, std::size_t heads,
                             std::uint64_t seed) {
  declare_attention(s, prefix + "attn.", d, heads, seed);
  declare_layer_norm(s, prefix + "norm.", d);
}

// -- forward ops -----------------------------------------------------------

inline Var linear(const Scope& sc, Var x) {
  Var w = sc.param("weight");
  if (x.cols() != w.rows()) {
    throw InvalidArgument("linear '" + sc.prefix + "': input width " + std::to_string(x.cols()) + ", expected " +
                          std::to_string(w.rows()));
  }
  return ops::add_row(ops::matmul(x, w), sc.param("bias"));
}

inline Var layer_norm(const Scope& sc, Var x, double eps) {
  return ops::layer_norm(x, sc.param("gain"), sc.param("bias"), eps);
}

/// Row-wise two-layer MLP.
inline Var mlp_apply(const Scope& sc, Var x) {
  return linear(sc.sub("fc2"), ops::relu(linear(sc.sub("fc1"), x)));
}

struct AttentionConfig {
  std::size_t heads = 4;
  double norm_eps = 1e-5;
};

/// Multi-head attention with learned projections. With no valid key the
/// result is the zero matrix: the output projection's bias is not applied.
inline Var multi_head_attention(const Scope& sc, Var q, Var k, Var v, const Mask& key_mask, std::size_t heads) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (k.cols() != d || v.cols() != d) throw ConfigError("attention: query/key/value widths differ");
  if (key_mask.size() != k.rows() || k.rows() != v.rows()) {
    throw InvalidArgument("attention: key mask/key/value lengths differ");
  }
  if (mask_count(key_mask) == 0) return q.graph->constant(Tensor(q.rows(), d));
  Var qp = linear(sc.sub("query"), q);
  Var kp = linear(sc.sub("key"), k);
  Var vp = linear(sc.sub("value"), v);
  return linear(sc.sub("out"), ops::attention(qp, kp, vp, key_mask, heads));
}

/// LayerNorm(Q + Dropout(MultiHeadAttn(Q, K, V; key_mask))), per token.
inline Var ca_block(const Scope& sc, Var q, Var k, Var v, const Mask& key_mask, const AttentionConfig& cfg) {
  if (q.cols() != k.cols() || q.cols() != v.cols()) {
    throw ConfigError("ca_block: widths differ (" + std::to_string(q.cols()) + ", " + std::to_string(k.cols()) +
                      ", " + std::to_string(v.cols()) + ")");
  }
  Var attn = multi_head_attention(sc.sub("attn"), q, k, v, key_mask, cfg.heads);
  return layer_norm(sc.sub("norm"), ops::add(q, ops::dropout(attn)), cfg.norm_eps);
}

}  // namespace pairrel
