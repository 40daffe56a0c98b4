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

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "heads.hpp"

namespace pairrel {

/// Per-instance predictive distributions with their true labels.
struct ScoredBatch {
  std::vector<Prediction> predictions;
  std::vector<long> labels;
  LabelSpace space;

  std::size_t size() const noexcept { return labels.size(); }

  void check() const {
    if (predictions.size() != labels.size()) throw InvalidArgument("scored batch: prediction and label counts differ");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      space.check(labels[i]);
      const auto& p = predictions[i].probs;
      if (p.size() != space.outputs()) throw InvalidArgument("scored batch: probability row of wrong length");
      for (double v : p)
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("scored batch: probability outside [0, 1]");
    }
  }
};

/// Binary: class 1 iff p >= 0.5. Multiclass: first argmax.
inline std::size_t predicted_index(const Prediction& p, const LabelSpace& space) {
  if (space.kind == LabelKind::binary) return p.probs.at(0) >= 0.5 ? 1 : 0;
  return static_cast<std::size_t>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
}

inline void require_nonempty(const ScoredBatch& b, const char* what) {
  if (b.size() == 0) throw EmptyInput(std::string(what) + ": empty batch");
  b.check();
}

inline double micro_accuracy(const ScoredBatch& b) {
  require_nonempty(b, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < b.size(); ++i) hit += predicted_index(b.predictions[i], b.space) == b.space.index_of(b.labels[i]);
  return static_cast<double>(hit) / static_cast<double>(b.size());
}

struct ScoredDecision {
  double score;
  bool positive;
};

/// Binary: (p(1), y == 1) per instance. Multiclass: every (instance, class)
/// pair one-vs-rest, scored by p(class).
inline std::vector<ScoredDecision> pooled_one_vs_rest(const ScoredBatch& b) {
  std::vector<ScoredDecision> out;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t y = b.space.index_of(b.labels[i]);
    if (b.space.kind == LabelKind::binary) {
      out.push_back({b.predictions[i].probs[0], y == 1});
    } else {
      for (std::size_t c = 0; c < b.space.classes; ++c) out.push_back({b.predictions[i].probs[c], c == y});
    }
  }
  return out;
}

/// P(score_pos > score_neg) + 1/2 P(tie), via average ranks.
inline double auroc(std::span<const ScoredDecision> d) {
  std::vector<ScoredDecision> s(d.begin(), d.end());
  std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (s[k].positive) {
        pos += 1;
        rank_sum += avg_rank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUROC needs at least one positive and one negative");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

/// Average precision over tie groups in descending score order.
inline double average_precision(std::span<const ScoredDecision> d) {
  std::vector<ScoredDecision> s(d.begin(), d.end());
  std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  double total_pos = 0;
  for (const auto& x : s) total_pos += x.positive;
  if (total_pos == 0) throw UndefinedMetric("AUPR needs at least one positive");
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    for (; j < s.size() && s[j].score == s[i].score; ++j) (s[j].positive ? tp : fp) += 1;
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline double micro_auroc(const ScoredBatch& b) {
  require_nonempty(b, "AUROC");
  return auroc(pooled_one_vs_rest(b));
}

inline double micro_aupr(const ScoredBatch& b) {
  require_nonempty(b, "AUPR");
  return average_precision(pooled_one_vs_rest(b));
}

/// Binary: F1 of the positive class. Multiclass: pooled one-vs-rest
/// decisions at argmax, which makes it equal to accuracy. With no positive
/// labels and no positive predictions the score is 1.
inline double micro_f1(const ScoredBatch& b) {
  require_nonempty(b, "F1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t y = b.space.index_of(b.labels[i]);
    const std::size_t p = predicted_index(b.predictions[i], b.space);
    if (b.space.kind == LabelKind::binary) {
      tp += p == 1 && y == 1;
      fp += p == 1 && y == 0;
      fn += p == 0 && y == 1;
    } else if (p == y) {
      ++tp;
    } else {
      ++fp;
      ++fn;
    }
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

struct MccResult {
  double value = 0.0;
  bool degenerate = false;
};

/// Gorodkin's R_K from the K x K confusion matrix; K = 2 is the classical MCC.
inline MccResult mcc(const ScoredBatch& b) {
  require_nonempty(b, "MCC");
  const std::size_t k = b.space.class_count();
  std::vector<long long> truth(k, 0), pred(k, 0);
  long long correct = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t y = b.space.index_of(b.labels[i]);
    const std::size_t p = predicted_index(b.predictions[i], b.space);
    ++truth[y];
    ++pred[p];
    correct += y == p;
  }
  const auto s = static_cast<long long>(b.size());
  long long pt = 0, pp = 0, tt = 0;
  for (std::size_t c = 0; c < k; ++c) {
    pt += pred[c] * truth[c];
    pp += pred[c] * pred[c];
    tt += truth[c] * truth[c];
  }
  const double num = static_cast<double>(correct * s - pt);
  const double den = std::sqrt(static_cast<double>(s * s - pp) * static_cast<double>(s * s - tt));
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

struct MetricsReport {
  double acc = 0.0;
  std::optional<double> auroc;
  std::optional<double> aupr;
  double f1 = 0.0;
  double mcc = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_classes = 0;
  std::vector<std::string> flags;

  bool operator==(const MetricsReport&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["acc"] = acc;
    j["auroc"] = auroc ? nlohmann::ordered_json(*auroc) : nlohmann::ordered_json(nullptr);
    j["aupr"] = aupr ? nlohmann::ordered_json(*aupr) : nlohmann::ordered_json(nullptr);
    j["f1"] = f1;
    j["mcc"] = mcc;
    j["n_instances"] = n_instances;
    j["n_classes"] = n_classes;
    j["flags"] = flags;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    try {
      MetricsReport r;
      r.acc = j.at("acc").get<double>();
      if (!j.at("auroc").is_null()) r.auroc = j.at("auroc").get<double>();
      if (!j.at("aupr").is_null()) r.aupr = j.at("aupr").get<double>();
      r.f1 = j.at("f1").get<double>();
      r.mcc = j.at("mcc").get<double>();
      r.n_instances = j.at("n_instances").get<std::size_t>();
      r.n_classes = j.at("n_classes").get<std::size_t>();
      r.flags = j.at("flags").get<std::vector<std::string>>();
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("metrics report: ") + e.what());
    }
  }
};

/// All five metrics. Undefined ranking metrics become null with a flag.
inline MetricsReport compute_metrics(const ScoredBatch& b) {
  require_nonempty(b, "metrics");
  MetricsReport r;
  r.n_instances = b.size();
  r.n_classes = b.space.class_count();
  r.acc = micro_accuracy(b);
  r.f1 = micro_f1(b);
  const auto pooled = pooled_one_vs_rest(b);
  try {
    r.auroc = auroc(pooled);
  } catch (const UndefinedMetric&) {
    r.flags.emplace_back("auroc_undefined");
  }
  try {
    r.aupr = average_precision(pooled);
  } catch (const UndefinedMetric&) {
    r.flags.emplace_back("aupr_undefined");
  }
  const auto m = mcc(b);
  r.mcc = m.value;
  if (m.degenerate) r.flags.emplace_back("mcc_degenerate");
  return r;
}

}  // namespace pairrel
