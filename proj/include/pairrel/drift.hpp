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
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "encoders.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace pairrel {

/// Projected token sequences of one drug pair, one entry per stream.
struct ProbeInput {
  std::vector<Tensor> a_tokens;
  std::vector<Mask> a_masks;
  std::vector<Tensor> b_tokens;
  std::vector<Mask> b_masks;
};

/// F_{psi, omega}: predictive distribution from projected sequences.
using ProjectedPredictor = std::function<std::vector<double>(const ProbeInput&)>;

struct LipschitzEstimate {
  double value = 0.0;
  std::size_t n_probes = 0;
  std::size_t n_used = 0;
  double perturb_scale = 0.0;
  std::uint64_t seed = 0;
};

inline double l2_norm_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("prediction vectors differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

namespace detail {

// Adds seeded Gaussian noise to the unmasked rows of `t`, restricted to one
// row when `only_row` is set. Returns the Frobenius norm of the noise.
inline double perturb_block(Tensor& t, const Mask& mask, Rng& rng, double scale, std::optional<std::size_t> only_row) {
  double sq = 0.0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (!mask[r] || (only_row && *only_row != r)) continue;
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const double e = scale * rng.normal();
      t(r, c) += e;
      sq += e * e;
    }
  }
  return std::sqrt(sq);
}

}  // namespace detail

/// Max over probes of ||F(H + dH) - F(H)||_2 / sum of per-block ||dH||_F.
/// Probe k draws from substream (seed, k) and cycles through the probe
/// inputs, so extending n_probes never lowers the estimate. Probes rotate
/// between perturbing every block, a single block and a single valid row.
inline LipschitzEstimate estimate_lipschitz(const ProjectedPredictor& f, std::span<const ProbeInput> probes,
                                            std::size_t n_probes, double perturb_scale, std::uint64_t seed) {
  if (probes.empty()) throw InvalidArgument("estimate_lipschitz: empty probe set");
  if (!(perturb_scale >= 0.0) || !std::isfinite(perturb_scale)) {
    throw InvalidArgument("estimate_lipschitz: perturbation scale must be finite and non-negative");
  }
  LipschitzEstimate est{0.0, n_probes, 0, perturb_scale, seed};
  std::map<std::size_t, std::vector<double>> base;
  for (std::size_t k = 0; k < n_probes; ++k) {
    const std::size_t which = k % probes.size();
    const ProbeInput& x = probes[which];
    auto it = base.find(which);
    if (it == base.end()) it = base.emplace(which, f(x)).first;

    Rng rng = Rng::substream(seed, "lipschitz", k);
    ProbeInput y = x;
    const std::size_t n_blocks = y.a_tokens.size() + y.b_tokens.size();
    auto block = [&](std::size_t i) -> std::pair<Tensor*, const Mask*> {
      if (i < y.a_tokens.size()) return {&y.a_tokens[i], &y.a_masks[i]};
      i -= y.a_tokens.size();
      return {&y.b_tokens[i], &y.b_masks[i]};
    };
    double denom = 0.0;
    switch (k % 3) {
      case 0:
        for (std::size_t i = 0; i < n_blocks; ++i) {
          auto [t, m] = block(i);
          denom += detail::perturb_block(*t, *m, rng, perturb_scale, std::nullopt);
        }
        break;
      case 1: {
        auto [t, m] = block(rng.below(n_blocks));
        denom = detail::perturb_block(*t, *m, rng, perturb_scale, std::nullopt);
        break;
      }
      default: {
        auto [t, m] = block(rng.below(n_blocks));
        std::vector<std::size_t> valid;
        for (std::size_t r = 0; r < m->size(); ++r)
          if ((*m)[r]) valid.push_back(r);
        if (!valid.empty()) denom = detail::perturb_block(*t, *m, rng, perturb_scale, valid[rng.below(valid.size())]);
        break;
      }
    }
    if (!(denom > 0.0)) continue;
    ++est.n_used;
    est.value = std::max(est.value, l2_norm_diff(f(y), it->second) / denom);
  }
  if (est.n_used == 0) throw NumericFault("estimate_lipschitz: every probe had zero perturbation norm");
  return est;
}

/// Projects a pair under `stream_params` for every stream of the model.
inline ProbeInput probe_input(const Model& model, const ParameterStore& stream_params, const MolecularInput& a,
                              const MolecularInput& b) {
  ProbeInput p;
  const double eps = model.config().norm_eps;
  for (const auto& s : model.streams()) {
    p.a_tokens.push_back(projected_tokens(stream_params, s, a, model.embedding_store(), eps));
    p.a_masks.push_back(a.masks.at(s.id));
    p.b_tokens.push_back(projected_tokens(stream_params, s, b, model.embedding_store(), eps));
    p.b_masks.push_back(b.masks.at(s.id));
  }
  return p;
}

/// F_{psi, omega} with the downstream parameters taken from `downstream`.
inline ProjectedPredictor model_predictor(const Model& model, const ParameterStore& downstream) {
  return [&model, &downstream](const ProbeInput& x) {
    return model.predict_projected(downstream, x.a_tokens, x.a_masks, x.b_tokens, x.b_masks).probs;
  };
}

using InputPair = std::pair<MolecularInput, MolecularInput>;

inline void require_same_architecture(const Model& a, const Model& b) {
  if (!(a.config() == b.config()) || !a.params().same_layout(b.params())) {
    throw ConfigError("models differ in architecture or configuration");
  }
}

/// sup over pairs of ||p_current - p_reference||_2.
inline double prediction_drift(const Model& current, const Model& reference, std::span<const InputPair> pairs) {
  require_same_architecture(current, reference);
  double worst = 0.0;
  for (const auto& [a, b] : pairs) {
    worst = std::max(worst, l2_norm_diff(current.predict(a, b).probs, reference.predict(a, b).probs));
  }
  return worst;
}

struct DriftReport {
  std::vector<double> deltas;
  std::vector<std::size_t> adaptive;
  double l_hat = 0.0;
  std::size_t n_probes = 0;
  double perturb_scale = 0.0;
  double measured_drift = 0.0;
  double bound_value = 0.0;
  bool holds = true;
  // Drift with fusion, trunk and head free; not covered by the bound.
  std::optional<double> total_drift;
  nlohmann::json config = nlohmann::json::object();

  static constexpr const char* kNote =
      "L_hat is an empirical lower estimate of the Lipschitz constant from random probes; the bound check is a "
      "consistency check, not a proof. total_drift lets fusion/trunk/head parameters move and is outside the "
      "bound's scope.";

  bool operator==(const DriftReport&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["deltas"] = deltas;
    j["adaptive"] = adaptive;
    j["l_hat"] = l_hat;
    j["n_probes"] = n_probes;
    j["perturb_scale"] = perturb_scale;
    j["measured_drift"] = measured_drift;
    j["bound_value"] = bound_value;
    j["verdict"] = holds ? "holds" : "violated";
    j["total_drift_outside_scope"] = total_drift ? nlohmann::ordered_json(*total_drift) : nlohmann::ordered_json();
    j["note"] = kNote;
    j["config"] = config;
    return j;
  }

  static DriftReport from_json(const nlohmann::json& j) {
    try {
      DriftReport r;
      r.deltas = j.at("deltas").get<std::vector<double>>();
      r.adaptive = j.at("adaptive").get<std::vector<std::size_t>>();
      r.l_hat = j.at("l_hat").get<double>();
      r.n_probes = j.at("n_probes").get<std::size_t>();
      r.perturb_scale = j.at("perturb_scale").get<double>();
      r.measured_drift = j.at("measured_drift").get<double>();
      r.bound_value = j.at("bound_value").get<double>();
      r.holds = j.at("verdict").get<std::string>() == "holds";
      if (!j.at("total_drift_outside_scope").is_null()) r.total_drift = j.at("total_drift_outside_scope").get<double>();
      r.config = j.at("config");
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("drift report: ") + e.what());
    }
  }
};

/// bound = 2 L_hat sum_{m in A} Delta_m; holds iff measured <= bound + 1e-9.
inline DriftReport verify_bound(std::span<const double> deltas, std::span<const std::size_t> adaptive, double l_hat,
                                double measured_drift) {
  auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(l_hat) || bad(measured_drift)) throw InvalidArgument("verify_bound: inputs must be finite and non-negative");
  std::vector<bool> in_a(deltas.size(), false);
  for (std::size_t m : adaptive) {
    if (m >= deltas.size()) throw InvalidArgument("verify_bound: adaptive index out of range");
    in_a[m] = true;
  }
  double sum = 0.0;
  for (std::size_t m = 0; m < deltas.size(); ++m) {
    if (bad(deltas[m])) throw InvalidArgument("verify_bound: drift values must be finite and non-negative");
    if (in_a[m]) {
      sum += deltas[m];
    } else if (deltas[m] != 0.0) {
      throw ContractViolation("verify_bound: frozen stream " + std::to_string(m) + " drifted by " +
                              std::to_string(deltas[m]));
    }
  }
  DriftReport r;
  r.deltas.assign(deltas.begin(), deltas.end());
  r.adaptive.assign(adaptive.begin(), adaptive.end());
  r.l_hat = l_hat;
  r.measured_drift = measured_drift;
  r.bound_value = 2.0 * l_hat * sum;
  r.holds = measured_drift <= r.bound_value + 1e-9;
  return r;
}

struct DriftOptions {
  std::size_t n_probes = 1000;
  double perturb_scale = 1e-2;
  std::uint64_t seed = 0;
};

/// Full check of the freezing bound between a trained model and its
/// reference. Fusion, trunk and head are pinned to the reference for the
/// measured drift; the unpinned drift is reported separately.
inline DriftReport analyze_drift(const Model& current, const Model& reference,
                                 std::span<const MolecularInput> vocabulary, std::span<const InputPair> pairs,
                                 const DriftOptions& opt) {
  require_same_architecture(current, reference);
  if (pairs.empty()) throw EmptyInput("analyze_drift: no evaluation pairs");
  const double eps = current.config().norm_eps;
  std::vector<double> deltas;
  std::vector<std::size_t> adaptive;
  for (const auto& s : current.streams()) {
    deltas.push_back(
        representation_drift(s, current.params(), reference.params(), vocabulary, current.embedding_store(), eps));
    if (!s.frozen) adaptive.push_back(s.id);
  }

  Model pinned = current;
  pin_downstream(pinned, reference.params());
  const double measured = prediction_drift(pinned, reference, pairs);

  std::vector<ProbeInput> probes;
  for (const auto& [a, b] : pairs) {
    probes.push_back(probe_input(reference, reference.params(), a, b));
    probes.push_back(probe_input(current, current.params(), a, b));
  }
  const auto est = estimate_lipschitz(model_predictor(reference, reference.params()), probes, opt.n_probes,
                                      opt.perturb_scale, opt.seed);

  DriftReport r = verify_bound(deltas, adaptive, est.value, measured);
  r.n_probes = est.n_probes;
  r.perturb_scale = est.perturb_scale;
  r.total_drift = prediction_drift(current, reference, pairs);
  return r;
}

}  // namespace pairrel
