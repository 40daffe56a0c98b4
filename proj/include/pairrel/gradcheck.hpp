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
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "nn.hpp"

namespace pairrel {

/// Builds a scalar loss from a parameter store inside the given graph.
using LossClosure = std::function<Var(Graph&, const ParameterStore&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor). Central
  // differences at eps 1e-5 carry roughly 1e-10 of roundoff on O(1) losses,
  // so gradients that are exactly zero need a floor well above that.
  double abs_floor = 1e-5;
  // 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 0;
  Graph::Options graph{};
};

struct ParamCheck {
  std::string name;
  std::size_t entries_checked = 0;
  // Entries whose +-eps evaluations switched a ReLU; the loss is not
  // differentiable across the step, so they are counted but not compared.
  std::size_t kink_crossings = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t entries_checked = 0;
  std::size_t kink_crossings = 0;
  double tolerance = 0.0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double abs_floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

/// Compares analytic gradients against central differences for every
/// trainable parameter in `params`. The closure must be deterministic: it is
/// evaluated twice up front (each graph gets a fresh dropout seed) and any
/// difference raises NonDeterministic.
inline GradCheckReport finite_diff_check(const LossClosure& closure, const ParameterStore& params,
                                         const GradCheckOptions& opt = {}) {
  std::uint64_t evals = 0;
  auto make_options = [&](bool grad) {
    Graph::Options o = opt.graph;
    o.grad_enabled = grad;
    o.dropout_seed = hash_combine(opt.graph.dropout_seed, evals++);
    return o;
  };

  std::map<std::string, Tensor> analytic;
  double reference_loss = 0.0;
  std::uint64_t reference_kinks = 0;
  {
    Graph g(make_options(true));
    Var loss = closure(g, params);
    reference_loss = loss.value()[0];
    reference_kinks = g.kink_signature();
    g.backward(loss);
    analytic = g.parameter_grads();
  }
  {
    Graph g(make_options(false));
    const double again = closure(g, params).value()[0];
    if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(reference_loss)) {
      throw NonDeterministic("finite_diff_check: two evaluations of the closure differ (" +
                             std::to_string(reference_loss) + " vs " + std::to_string(again) +
                             "); disable dropout and other randomness");
    }
  }

  bool crossed = false;
  auto eval = [&](const ParameterStore& ps) {
    Graph g(make_options(false));
    const double v = closure(g, ps).value()[0];
    crossed = crossed || g.kink_signature() != reference_kinks;
    return v;
  };

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  ParameterStore work = params;
  for (const auto& [name, p] : params) {
    if (!p.trainable) continue;
    ParamCheck pc{name};
    const std::size_t n = p.value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_entries_per_tensor != 0 && n > opt.max_entries_per_tensor) {
      Rng rng = Rng::substream(opt.sample_seed, "gradcheck:" + name);
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_entries_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    const auto git = analytic.find(name);
    Tensor& w = work.at(name).value;
    for (std::size_t i : idx) {
      const double orig = w[i];
      crossed = false;
      w[i] = orig + opt.eps;
      const double up = eval(work);
      w[i] = orig - opt.eps;
      const double down = eval(work);
      w[i] = orig;
      if (crossed) {
        ++pc.kink_crossings;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = git == analytic.end() ? 0.0 : git->second[i];
      pc.max_rel_error = std::max(pc.max_rel_error, relative_error(a, numeric, opt.abs_floor));
      pc.max_abs_error = std::max(pc.max_abs_error, std::abs(a - numeric));
      ++pc.entries_checked;
    }
    report.entries_checked += pc.entries_checked;
    report.kink_crossings += pc.kink_crossings;
    if (pc.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = pc.max_rel_error;
      report.worst_param = name;
    }
    report.params.push_back(std::move(pc));
  }
  report.passed = report.entries_checked > 0 && report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace pairrel
