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

#include <cstdio>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "splits.hpp"

namespace pairrel {

// Planted-rule synthetic corpus. Inputs are short strings over a small
// alphabet; a drug "has N" or "has S" when that letter occurs in its string.
// Labels depend only on those token features, never on drug identity:
//   multiclass (C = 4):  y = 1 + 2 * hasN(a) + hasS(b)
//   binary:              y = hasN(a) or hasN(b)
struct PlantedOptions {
  std::size_t n_drugs = 60;
  std::size_t n_pairs = 500;
  std::uint64_t seed = 1;
  LabelSpace space = LabelSpace::multiclass(4, true);
  std::size_t min_len = 4;
  std::size_t max_len = 10;
};

inline bool has_token(const std::string& s, char c) { return s.find(c) != std::string::npos; }

inline long planted_label(const std::string& a, const std::string& b, const LabelSpace& space) {
  if (space.kind == LabelKind::binary) return (has_token(a, 'N') || has_token(b, 'N')) ? 1 : 0;
  if (space.classes != 4) throw ConfigError("planted multiclass rule needs C = 4");
  return 1 + 2 * static_cast<long>(has_token(a, 'N')) + static_cast<long>(has_token(b, 'S'));
}

inline std::string planted_drug_input(Rng& rng, std::size_t min_len, std::size_t max_len, bool n, bool s) {
  static constexpr char kAlphabet[] = {'C', 'O', 'c', '=', '(', ')', '1'};
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string out;
  for (std::size_t i = 0; i < len; ++i) out += kAlphabet[rng.below(sizeof kAlphabet)];
  if (n) out.insert(out.begin() + static_cast<std::ptrdiff_t>(rng.below(out.size() + 1)), 'N');
  if (s) out.insert(out.begin() + static_cast<std::ptrdiff_t>(rng.below(out.size() + 1)), 'S');
  return out;
}

inline PairDataset planted_dataset(const PlantedOptions& o) {
  if (o.n_drugs < 2 || o.min_len == 0 || o.max_len < o.min_len) throw ConfigError("planted_dataset: bad sizes");
  const std::size_t max_pairs = o.space.directed ? o.n_drugs * (o.n_drugs - 1) : o.n_drugs * (o.n_drugs - 1) / 2;
  if (o.n_pairs > max_pairs) throw ConfigError("planted_dataset: more pairs than distinct drug pairs");

  Rng rng = Rng::substream(o.seed, "planted.drugs");
  std::vector<std::pair<std::string, std::string>> drugs;
  for (std::size_t i = 0; i < o.n_drugs; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "D%03zu", i);
    // Cycling the feature pattern keeps every class populated.
    const bool n = (i % 4) >= 2, s = (i % 2) == 1;
    drugs.emplace_back(id, planted_drug_input(rng, o.min_len, o.max_len, n, s));
  }

  Rng pick = Rng::substream(o.seed, "planted.pairs");
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<PairRecord> records;
  while (records.size() < o.n_pairs) {
    const std::size_t a = pick.below(o.n_drugs), b = pick.below(o.n_drugs);
    if (a == b) continue;
    const auto key = o.space.directed ? std::pair{a, b} : std::pair{std::min(a, b), std::max(a, b)};
    if (!used.insert(key).second) continue;
    const auto& [ida, xa] = drugs[a];
    const auto& [idb, xb] = drugs[b];
    records.push_back({std::to_string(records.size() + 1), ida, idb, xa, xb, planted_label(xa, xb, o.space)});
  }
  return PairDataset(std::move(records), o.space);
}

}  // namespace pairrel
