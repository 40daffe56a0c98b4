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
#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace pairrel {

enum class LabelKind { binary, multiclass };

/// Y = {0, 1} for binary; {1..C} for multiclass.
struct LabelSpace {
  LabelKind kind = LabelKind::binary;
  std::size_t classes = 2;
  bool directed = false;

  static LabelSpace binary(bool directed = false) { return {LabelKind::binary, 2, directed}; }
  static LabelSpace multiclass(std::size_t c, bool directed = false) {
    if (c < 2) throw ConfigError("multiclass label space needs C >= 2");
    return {LabelKind::multiclass, c, directed};
  }

  /// Width of the head output and of a Prediction.
  std::size_t outputs() const { return kind == LabelKind::binary ? 1 : classes; }
  /// Number of classes seen by the metrics.
  std::size_t class_count() const { return kind == LabelKind::binary ? 2 : classes; }

  bool contains(long label) const {
    if (kind == LabelKind::binary) return label == 0 || label == 1;
    return label >= 1 && label <= static_cast<long>(classes);
  }

  void check(long label) const {
    if (!contains(label)) {
      throw InvalidLabel("label " + std::to_string(label) + " outside " +
                         (kind == LabelKind::binary ? std::string("{0, 1}")
                                                    : "{1.." + std::to_string(classes) + "}"));
    }
  }

  /// 0-based class index of a label in Y.
  std::size_t index_of(long label) const {
    check(label);
    return kind == LabelKind::binary ? static_cast<std::size_t>(label) : static_cast<std::size_t>(label - 1);
  }

  long label_of(std::size_t index) const {
    return kind == LabelKind::binary ? static_cast<long>(index) : static_cast<long>(index + 1);
  }

  bool operator==(const LabelSpace&) const = default;
};

/// p-hat(y | x_a, x_b): [p(y=1)] for binary, C probabilities for multiclass.
struct Prediction {
  std::vector<double> probs;

  /// Probability of each class in index order (binary expands to [1-p, p]).
  std::vector<double> class_probs(const LabelSpace& space) const {
    if (space.kind == LabelKind::binary) return {1.0 - probs.at(0), probs.at(0)};
    return probs;
  }
};

inline void declare_head(ParameterStore& ps, std::size_t input_width, const LabelSpace& space, std::uint64_t seed) {
  declare_linear(ps, "head.", input_width, space.outputs(), seed);
}

/// g_omega(z): a single affine layer.
inline Var head_logits(const Scope& root, Var z) {
  const Scope h = root.sub("head");
  if (z.cols() != h.param("weight").rows()) {
    throw ConfigError("head: relation vector width " + std::to_string(z.cols()) + ", head expects " +
                      std::to_string(h.param("weight").rows()));
  }
  return linear(h, z);
}

inline double stable_sigmoid(double l) {
  return l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
}

inline Prediction predict_from_logits(std::span<const double> logits, const LabelSpace& space) {
  if (logits.size() != space.outputs()) {
    throw ConfigError("predict: " + std::to_string(logits.size()) + " logits for " +
                      std::to_string(space.outputs()) + " outputs");
  }
  if (space.kind == LabelKind::binary) return {{stable_sigmoid(logits[0])}};
  const Mask all(logits.size(), 1);
  return {masked_softmax(logits, all)};
}

inline Prediction predict(const Scope& root, Var z, const LabelSpace& space) {
  return predict_from_logits(head_logits(root, z).value().values(), space);
}

/// -log p-hat(y) for one logit row, as a graph node.
inline Var cross_entropy(Var logits, long label, const LabelSpace& space) {
  const std::size_t idx = space.index_of(label);
  if (logits.cols() != space.outputs()) throw ConfigError("cross_entropy: logit width does not match label space");
  if (space.kind == LabelKind::binary) return ops::sigmoid_cross_entropy(logits, static_cast<int>(idx));
  return ops::softmax_cross_entropy(logits, idx);
}

/// Sum over the batch of -log p-hat(y), as in the training objective.
inline Var cross_entropy(std::span<const Var> logits, std::span<const long> labels, const LabelSpace& space) {
  if (logits.empty()) throw EmptyInput("cross_entropy: empty batch");
  if (logits.size() != labels.size()) throw InvalidArgument("cross_entropy: batch and label counts differ");
  std::vector<Var> terms;
  terms.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) terms.push_back(cross_entropy(logits[i], labels[i], space));
  return ops::add_n(terms);
}

/// Value-only form over rows of logits.
inline double cross_entropy_value(const std::vector<std::vector<double>>& logits, std::span<const long> labels,
                                  const LabelSpace& space) {
  Graph g(Graph::Options{.grad_enabled = false});
  std::vector<Var> vs;
  for (const auto& row : logits) vs.push_back(g.constant(Tensor::row(row)));
  return cross_entropy(vs, labels, space).value()[0];
}

}  // namespace pairrel
