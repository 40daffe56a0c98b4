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
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "heads.hpp"
#include "rng.hpp"
#include "serialization.hpp"

namespace pairrel {

struct PairRecord {
  std::string pair_id;
  std::string drug_a;
  std::string drug_b;
  std::string input_a;
  std::string input_b;
  long label = 0;

  bool operator==(const PairRecord&) const = default;
};

/// Orders pair ids numerically when both are plain non-negative integers,
/// lexicographically otherwise. Decides which record survives dedup.
inline bool pair_id_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && s.size() < 19 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (numeric(a) && numeric(b)) return std::stoll(a) < std::stoll(b);
  return a < b;
}

/// Labeled drug pairs. Construction checks unique pair ids, labels in the
/// label space and one input string per drug id.
class PairDataset {
 public:
  PairDataset() = default;
  PairDataset(std::vector<PairRecord> records, LabelSpace space) : records_(std::move(records)), space_(space) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!index_.emplace(r.pair_id, i).second) throw DataIntegrity("duplicate pair_id '" + r.pair_id + "'");
      space_.check(r.label);
      note_input(r.drug_a, r.input_a);
      note_input(r.drug_b, r.input_b);
    }
  }

  const std::vector<PairRecord>& records() const noexcept { return records_; }
  const LabelSpace& space() const noexcept { return space_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool contains(const std::string& pair_id) const { return index_.count(pair_id) != 0; }
  std::size_t index_of(const std::string& pair_id) const {
    auto it = index_.find(pair_id);
    if (it == index_.end()) throw MissingEntity("unknown pair_id '" + pair_id + "'");
    return it->second;
  }
  const PairRecord& at(const std::string& pair_id) const { return records_[index_of(pair_id)]; }

  /// drug id -> raw molecular input.
  const std::map<std::string, std::string>& drug_inputs() const noexcept { return inputs_; }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(space_.class_count(), 0);
    for (const auto& r : records_) ++h[space_.index_of(r.label)];
    return h;
  }

 private:
  void note_input(const std::string& drug, const std::string& input) {
    auto [it, fresh] = inputs_.emplace(drug, input);
    if (!fresh && it->second != input) {
      throw DataIntegrity("drug '" + drug + "' has two different inputs ('" + it->second + "' and '" + input + "')");
    }
  }

  std::vector<PairRecord> records_;
  LabelSpace space_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::string> inputs_;
};

inline std::pair<std::string, std::string> unordered_key(const PairRecord& r) {
  return r.drug_a < r.drug_b ? std::pair{r.drug_a, r.drug_b} : std::pair{r.drug_b, r.drug_a};
}

/// V_tr: every drug id in first or second position.
inline std::set<std::string> train_drug_set(std::span<const PairRecord> train) {
  std::set<std::string> v;
  for (const auto& r : train) {
    v.insert(r.drug_a);
    v.insert(r.drug_b);
  }
  return v;
}

inline std::set<std::string> drug_set(const PairDataset& ds, std::span<const std::string> pair_ids) {
  std::set<std::string> v;
  for (const auto& id : pair_ids) {
    const auto& r = ds.at(id);
    v.insert(r.drug_a);
    v.insert(r.drug_b);
  }
  return v;
}

/// Keeps one record per unordered pair (lowest pair_id wins); record order is
/// otherwise preserved. Conflicting labels are a data-integrity error.
inline PairDataset dedup_undirected(const PairDataset& ds) {
  if (ds.space().directed) throw InvalidArgument("dedup_undirected: dataset is declared directed");
  std::map<std::pair<std::string, std::string>, std::size_t> keep;
  std::vector<std::string> conflicts;
  const auto& recs = ds.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto [it, fresh] = keep.emplace(unordered_key(recs[i]), i);
    if (fresh) continue;
    const auto& held = recs[it->second];
    if (held.label != recs[i].label) {
      conflicts.push_back(held.pair_id + " (" + std::to_string(held.label) + ") vs " + recs[i].pair_id + " (" +
                          std::to_string(recs[i].label) + ") on {" + recs[i].drug_a + ", " + recs[i].drug_b + "}");
    }
    if (pair_id_less(recs[i].pair_id, held.pair_id)) it->second = i;
  }
  if (!conflicts.empty()) {
    std::string msg = "undirected label conflict:";
    for (const auto& c : conflicts) msg += "\n  " + c;
    throw DataIntegrity(msg);
  }
  std::vector<bool> kept(recs.size(), false);
  for (const auto& [key, i] : keep) kept[i] = true;
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (kept[i]) out.push_back(recs[i]);
  return PairDataset(std::move(out), ds.space());
}

/// Hash of the dataset contents, recorded in manifests.
inline std::string dataset_sha256(const PairDataset& ds) {
  std::string s = ds.space().kind == LabelKind::binary ? "binary" : "multiclass";
  s += "," + std::to_string(ds.space().classes) + "," + (ds.space().directed ? "directed" : "undirected") + "\n";
  for (const auto& r : ds.records()) {
    s += r.pair_id + "," + r.drug_a + "," + r.drug_b + "," + r.input_a + "," + r.input_b + "," +
         std::to_string(r.label) + "\n";
  }
  return sha256_hex(s);
}

enum class SplitKind { s1, s2, s3 };

inline const char* to_string(SplitKind k) {
  switch (k) {
    case SplitKind::s1: return "S1";
    case SplitKind::s2: return "S2";
    case SplitKind::s3: return "S3";
  }
  return "?";
}

inline SplitKind parse_split_kind(std::string_view s) {
  if (s == "s1" || s == "S1") return SplitKind::s1;
  if (s == "s2" || s == "S2") return SplitKind::s2;
  if (s == "s3" || s == "S3") return SplitKind::s3;
  throw ConfigError("unknown split kind '" + std::string(s) + "' (expected s1, s2 or s3)");
}

struct SplitManifest {
  int version = 1;
  SplitKind kind = SplitKind::s3;
  std::uint64_t seed = 0;
  std::string dataset_sha256;
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> v_tr;
  std::vector<std::string> v_te;
  double target_fraction = 0.0;
  double achieved_fraction = 0.0;
  std::vector<std::string> dropped;

  bool operator==(const SplitManifest&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["kind"] = to_string(kind);
    j["seed"] = seed;
    j["dataset_sha256"] = dataset_sha256;
    j["train"] = train;
    j["test"] = test;
    j["v_tr"] = v_tr;
    j["v_te"] = v_te;
    j["target_fraction"] = target_fraction;
    j["achieved_fraction"] = achieved_fraction;
    j["dropped"] = dropped;
    return j;
  }

  static SplitManifest from_json(const nlohmann::json& j) {
    try {
      SplitManifest m;
      m.version = j.at("version").get<int>();
      if (m.version != 1) throw InvalidManifest("unsupported manifest version " + std::to_string(m.version));
      m.kind = parse_split_kind(j.at("kind").get<std::string>());
      m.seed = j.at("seed").get<std::uint64_t>();
      m.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
      m.train = j.at("train").get<std::vector<std::string>>();
      m.test = j.at("test").get<std::vector<std::string>>();
      m.v_tr = j.at("v_tr").get<std::vector<std::string>>();
      m.v_te = j.at("v_te").get<std::vector<std::string>>();
      m.target_fraction = j.at("target_fraction").get<double>();
      m.achieved_fraction = j.at("achieved_fraction").get<double>();
      m.dropped = j.at("dropped").get<std::vector<std::string>>();
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidManifest(std::string("manifest: ") + e.what());
    } catch (const ConfigError& e) {
      throw InvalidManifest(std::string("manifest: ") + e.what());
    }
  }

  std::string serialize() const { return to_json().dump(2) + "\n"; }
  static SplitManifest parse(std::string_view text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidManifest(std::string("manifest: ") + e.what());
    }
    return from_json(j);
  }
  void save(const std::string& path) const { write_file(path, serialize()); }
  static SplitManifest load(const std::string& path) { return parse(read_file(path)); }
};

struct SplitOptions {
  // Accept when |achieved - target| <= tolerance * target.
  double tolerance = 0.2;
  std::size_t max_iterations = 200;
};

namespace detail {

inline double test_fraction(std::size_t train, std::size_t test) {
  return train + test == 0 ? 0.0 : static_cast<double>(test) / static_cast<double>(train + test);
}

inline void finish_manifest(const PairDataset& ds, SplitManifest& m) {
  std::vector<PairRecord> train;
  for (const auto& id : m.train) train.push_back(ds.at(id));
  const auto vtr = train_drug_set(train);
  const auto vte = drug_set(ds, m.test);
  m.v_tr.assign(vtr.begin(), vtr.end());
  m.v_te.assign(vte.begin(), vte.end());
  m.achieved_fraction = test_fraction(m.train.size(), m.test.size());
}

// Expected held-out drug share h for a target test fraction f, assuming
// pairs spread evenly over drugs.
inline double held_share(SplitKind kind, double f) {
  if (kind == SplitKind::s3) {
    const double r = std::sqrt(f / (1.0 - f));
    return r / (1.0 + r);
  }
  return f / (2.0 - f);
}

inline SplitManifest partition_split(const PairDataset& ds, SplitKind kind, double f, std::uint64_t seed,
                                     const SplitOptions& opt) {
  std::set<std::string> all;
  for (const auto& r : ds.records()) {
    all.insert(r.drug_a);
    all.insert(r.drug_b);
  }
  const std::vector<std::string> drugs(all.begin(), all.end());
  const std::size_t n = drugs.size();
  if (n < 2) throw InfeasibleSplit(std::string(to_string(kind)) + " split needs at least two drugs");

  Rng rng = Rng::substream(seed, std::string("split:") + to_string(kind));
  const double lo = f * (1.0 - opt.tolerance), hi = f * (1.0 + opt.tolerance);
  auto k = static_cast<std::size_t>(std::llround(held_share(kind, f) * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n - 1);
  double best = -1.0;

  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    std::vector<std::string> order = drugs;
    rng.shuffle(order.begin(), order.end());
    const std::set<std::string> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));

    SplitManifest m;
    m.kind = kind;
    m.seed = seed;
    m.target_fraction = f;
    std::vector<std::size_t> test_idx;
    std::vector<bool> dropped(ds.size(), false);
    std::vector<PairRecord> train_recs;
    const auto& recs = ds.records();
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const int in = static_cast<int>(held.count(recs[i].drug_a)) + static_cast<int>(held.count(recs[i].drug_b));
      if (in == 0) {
        m.train.push_back(recs[i].pair_id);
        train_recs.push_back(recs[i]);
      } else if ((kind == SplitKind::s3 && in == 2) || (kind == SplitKind::s2 && in == 1)) {
        test_idx.push_back(i);
      } else {
        dropped[i] = true;
      }
    }
    // S2: the non-held endpoint must actually occur in training.
    const auto vtr = train_drug_set(train_recs);
    for (std::size_t i : test_idx) {
      const auto& r = recs[i];
      const std::string& seen = held.count(r.drug_a) ? r.drug_b : r.drug_a;
      if (kind == SplitKind::s2 && !vtr.count(seen)) {
        dropped[i] = true;
      } else {
        m.test.push_back(r.pair_id);
      }
    }
    for (std::size_t i = 0; i < recs.size(); ++i)
      if (dropped[i]) m.dropped.push_back(recs[i].pair_id);

    const double achieved = test_fraction(m.train.size(), m.test.size());
    if (std::abs(achieved - f) < std::abs(best - f)) best = achieved;
    if (!m.train.empty() && !m.test.empty() && achieved >= lo && achieved <= hi) {
      finish_manifest(ds, m);
      return m;
    }
    if (m.test.empty() || achieved < lo) {
      k = std::min(k + 1, n - 1);
    } else {
      k = std::max<std::size_t>(k - 1, 1);
    }
  }
  throw InfeasibleSplit(std::string(to_string(kind)) + " split: target fraction " + std::to_string(f) +
                        " not reached within +-" + std::to_string(opt.tolerance * 100.0) + "% after " +
                        std::to_string(opt.max_iterations) + " iterations over " + std::to_string(n) +
                        " drugs; closest achieved " + std::to_string(best));
}

inline SplitManifest pair_split(const PairDataset& ds, double f, std::uint64_t seed, const SplitOptions& opt) {
  const auto& recs = ds.records();
  std::map<std::pair<std::string, std::string>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto [it, fresh] = group_of.emplace(unordered_key(recs[i]), groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  std::map<std::string, std::size_t> degree;
  for (const auto& r : recs) {
    ++degree[r.drug_a];
    if (r.drug_b != r.drug_a) ++degree[r.drug_b];
  }

  std::vector<std::size_t> order(groups.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  Rng rng = Rng::substream(seed, "split:S1");
  rng.shuffle(order.begin(), order.end());

  const double total = static_cast<double>(recs.size());
  const double hi = f * (1.0 + opt.tolerance);
  std::vector<bool> in_test(recs.size(), false);
  std::size_t n_test = 0;
  for (std::size_t g : order) {
    if (static_cast<double>(n_test) >= f * total) break;
    const auto& members = groups[g];
    if (static_cast<double>(n_test + members.size()) > hi * total) continue;
    // Both endpoints must keep at least one training pair.
    std::map<std::string, std::size_t> loss;
    for (std::size_t i : members) {
      ++loss[recs[i].drug_a];
      if (recs[i].drug_b != recs[i].drug_a) ++loss[recs[i].drug_b];
    }
    bool ok = true;
    for (const auto& [drug, l] : loss) ok = ok && degree[drug] > l;
    if (!ok) continue;
    for (const auto& [drug, l] : loss) degree[drug] -= l;
    for (std::size_t i : members) in_test[i] = true;
    n_test += members.size();
  }

  SplitManifest m;
  m.kind = SplitKind::s1;
  m.seed = seed;
  m.target_fraction = f;
  for (std::size_t i = 0; i < recs.size(); ++i) (in_test[i] ? m.test : m.train).push_back(recs[i].pair_id);
  const double achieved = test_fraction(m.train.size(), m.test.size());
  if (m.test.empty() || std::abs(achieved - f) > opt.tolerance * f) {
    throw InfeasibleSplit("S1 split: achieved fraction " + std::to_string(achieved) + " for target " +
                          std::to_string(f) + "; too few pairs can leave training without orphaning a drug");
  }
  finish_manifest(ds, m);
  return m;
}

}  // namespace detail

/// Seeded S1/S2/S3 split. S2/S3 hold out a random drug set and resample its
/// size until the test fraction is within tolerance; S1 holds out whole
/// unordered pair groups while every drug keeps a training pair.
inline SplitManifest generate_split(const PairDataset& ds, SplitKind kind, double test_fraction, std::uint64_t seed,
                                    const SplitOptions& opt = {}) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("test fraction must lie in (0, 1)");
  if (!(opt.tolerance >= 0.0) || opt.max_iterations == 0) throw InvalidArgument("bad split options");
  if (ds.size() == 0) throw InfeasibleSplit("empty dataset");
  SplitManifest m = kind == SplitKind::s1 ? detail::pair_split(ds, test_fraction, seed, opt)
                                          : detail::partition_split(ds, kind, test_fraction, seed, opt);
  m.dataset_sha256 = dataset_sha256(ds);
  return m;
}

struct Violation {
  std::string pair_id;  // empty for set-level rules
  std::string rule;
  std::string detail;
};

using ViolationReport = std::vector<Violation>;

inline std::size_t count_rule(const ViolationReport& r, std::string_view rule) {
  return static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [&](const Violation& v) { return v.rule == rule; }));
}

/// Checks every manifest invariant from scratch. Empty report iff legal.
inline ViolationReport validate_split(const PairDataset& ds, const SplitManifest& m) {
  for (const auto* list : {&m.train, &m.test, &m.dropped})
    for (const auto& id : *list)
      if (!ds.contains(id)) throw InvalidManifest("manifest references unknown pair_id '" + id + "'");

  ViolationReport out;
  std::set<std::string> train_ids, test_ids;
  for (const auto& id : m.train)
    if (!train_ids.insert(id).second) out.push_back({id, "duplicate_id", "listed twice in train"});
  for (const auto& id : m.test) {
    if (!test_ids.insert(id).second) out.push_back({id, "duplicate_id", "listed twice in test"});
    if (train_ids.count(id)) out.push_back({id, "overlap", "in both train and test"});
  }

  std::set<std::string> vtr;
  std::set<std::pair<std::string, std::string>> train_ordered;
  for (const auto& id : train_ids) {
    const auto& r = ds.at(id);
    vtr.insert(r.drug_a);
    vtr.insert(r.drug_b);
    train_ordered.insert({r.drug_a, r.drug_b});
  }
  const std::set<std::string> vte = drug_set(ds, std::vector<std::string>(test_ids.begin(), test_ids.end()));
  auto compare_sets = [&](const std::set<std::string>& actual, const std::vector<std::string>& recorded,
                          const char* rule) {
    const std::set<std::string> rec(recorded.begin(), recorded.end());
    for (const auto& d : actual)
      if (!rec.count(d)) out.push_back({"", rule, "drug '" + d + "' missing from recorded set"});
    for (const auto& d : rec)
      if (!actual.count(d)) out.push_back({"", rule, "drug '" + d + "' recorded but not present"});
  };
  compare_sets(vtr, m.v_tr, "v_tr_mismatch");
  compare_sets(vte, m.v_te, "v_te_mismatch");

  for (const auto& id : m.test) {
    const auto& r = ds.at(id);
    const bool a_seen = vtr.count(r.drug_a) != 0, b_seen = vtr.count(r.drug_b) != 0;
    switch (m.kind) {
      case SplitKind::s1:
        if (!a_seen || !b_seen) out.push_back({id, "s1_unseen_drug", "both drugs must appear in training"});
        if (train_ordered.count({r.drug_a, r.drug_b})) {
          out.push_back({id, "s1_pair_in_train", "the same pair appears in training"});
        } else if (train_ordered.count({r.drug_b, r.drug_a})) {
          out.push_back({id, ds.space().directed ? "s1_reversed_pair" : "s1_pair_in_train",
                         "the reversed pair appears in training"});
        }
        break;
      case SplitKind::s2: {
        const std::set<std::string> endpoints{r.drug_a, r.drug_b};
        std::size_t seen = 0;
        for (const auto& d : endpoints) seen += vtr.count(d);
        if (seen != 1) {
          out.push_back({id, "s2_overlap_count", std::to_string(seen) + " of its drugs appear in training"});
        }
        break;
      }
      case SplitKind::s3:
        if (a_seen || b_seen) {
          out.push_back({id, "s3_seen_drug", "drug '" + (a_seen ? r.drug_a : r.drug_b) + "' appears in training"});
        }
        break;
    }
  }
  return out;
}

}  // namespace pairrel
