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

#include <charconv>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drift.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "serialization.hpp"
#include "splits.hpp"
#include "training.hpp"

namespace pairrel {

// ---- CSV ------------------------------------------------------------------

inline constexpr const char* kDatasetHeader[] = {"pair_id", "drug_a", "drug_b", "input_a", "input_b", "label"};

/// Splits one CSV record. Fields may be double-quoted with "" as an escaped
/// quote; records do not span lines.
inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out(1);
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c != '"') {
        out.back() += c;
      } else if (i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else {
        quoted = false;
      }
    } else if (c == ',') {
      out.emplace_back();
      was_quoted = false;
    } else if (c == '"' && out.back().empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (was_quoted) {
      throw ParseError("line " + std::to_string(line_no) + ": text after closing quote");
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quoted field");
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string dataset_csv(const PairDataset& ds) {
  std::string out = "pair_id,drug_a,drug_b,input_a,input_b,label\n";
  for (const auto& r : ds.records()) {
    out += csv_field(r.pair_id) + "," + csv_field(r.drug_a) + "," + csv_field(r.drug_b) + "," + csv_field(r.input_a) +
           "," + csv_field(r.input_b) + "," + std::to_string(r.label) + "\n";
  }
  return out;
}

struct LoadReport {
  std::size_t rows = 0;
  std::size_t records = 0;
  std::size_t deduplicated = 0;
  std::vector<std::size_t> histogram;

  nlohmann::ordered_json to_json() const {
    return {{"rows", rows}, {"records", records}, {"deduplicated", deduplicated}, {"class_histogram", histogram}};
  }
};

/// Parses dataset CSV text under `space`; undirected spaces are deduplicated.
inline PairDataset parse_dataset(std::string_view text, const LabelSpace& space, LoadReport* report = nullptr) {
  std::vector<PairRecord> records;
  std::map<std::string, std::size_t> id_line;
  std::size_t line_no = 0, rows = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, line_no);
    if (!header_seen) {
      const bool ok = fields.size() == 6 && std::equal(fields.begin(), fields.end(), std::begin(kDatasetHeader));
      if (!ok) throw ParseError("line " + std::to_string(line_no) + ": header must be pair_id,drug_a,drug_b,input_a,input_b,label");
      header_seen = true;
      continue;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 6) {
      throw ParseError(where + ": expected 6 fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < 5; ++k)
      if (fields[k].empty()) throw ParseError(where + ": empty " + kDatasetHeader[k]);
    long label = 0;
    const auto& lf = fields[5];
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size()) throw ParseError(where + ": label '" + lf + "' is not an integer");
    try {
      space.check(label);
    } catch (const InvalidLabel& e) {
      throw InvalidLabel(where + ": " + e.what());
    }
    if (auto [it, fresh] = id_line.emplace(fields[0], line_no); !fresh) {
      throw DataIntegrity(where + ": pair_id '" + fields[0] + "' already used on line " + std::to_string(it->second));
    }
    records.push_back({fields[0], fields[1], fields[2], fields[3], fields[4], label});
    ++rows;
  }
  if (!header_seen) throw ParseError("dataset is empty (no header)");
  PairDataset ds(std::move(records), space);
  if (!space.directed) ds = dedup_undirected(ds);
  if (report != nullptr) *report = {rows, ds.size(), rows - ds.size(), ds.class_histogram()};
  return ds;
}

inline PairDataset load_dataset(const std::string& path, const LabelSpace& space, LoadReport* report = nullptr) {
  try {
    return parse_dataset(read_file(path), space, report);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const InvalidLabel& e) {
    throw InvalidLabel(path + ": " + e.what());
  }
}

inline void save_dataset(const std::string& path, const PairDataset& ds) { write_file(path, dataset_csv(ds)); }

// ---- run configuration ------------------------------------------------------

struct SplitSettings {
  SplitKind kind = SplitKind::s2;
  double test_fraction = 0.2;
  SplitOptions options;
};

struct FixtureSettings {
  std::size_t n_drugs = 60;
  std::size_t n_pairs = 500;
};

/// Everything one CLI invocation needs. A single top-level seed drives the
/// split, initialisation, batching, dropout, fixtures and drift probes.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string dataset;
  std::string manifest;
  std::string checkpoint;
  std::string reference;   // drift: checkpoint holding the pre-training parameters
  std::string embeddings;  // precomputed stream store
  std::string out = "run";
  SplitSettings split;
  TrainConfig train;
  DriftOptions drift;
  GradCheckOptions gradcheck;
  std::size_t gradcheck_pairs = 4;
  FixtureSettings fixtures;

  /// Pushes the top-level seed into every component.
  void sync_seed() {
    train.seed = train.model.seed = seed;
    drift.seed = hash_combine(seed, hash_name("drift"));
    gradcheck.sample_seed = seed;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json t = pairrel::to_json(train);
    t.erase("seed");
    return {{"seed", seed},
            {"dataset", dataset},
            {"manifest", manifest},
            {"checkpoint", checkpoint},
            {"reference", reference},
            {"embeddings", embeddings},
            {"out", out},
            {"split",
             {{"kind", to_string(split.kind)},
              {"test_fraction", split.test_fraction},
              {"tolerance", split.options.tolerance},
              {"max_iterations", split.options.max_iterations}}},
            {"train", t},
            {"drift", {{"n_probes", drift.n_probes}, {"perturb_scale", drift.perturb_scale}}},
            {"gradcheck",
             {{"eps", gradcheck.eps},
              {"tolerance", gradcheck.tolerance},
              {"max_entries_per_tensor", gradcheck.max_entries_per_tensor},
              {"pairs", gradcheck_pairs}}},
            {"fixtures", {{"n_drugs", fixtures.n_drugs}, {"n_pairs", fixtures.n_pairs}}}};
  }
};

inline RunConfig default_run_config() {
  RunConfig c;
  c.gradcheck.max_entries_per_tensor = 8;
  c.sync_seed();
  return c;
}

/// Applies a configuration document over `c`; unknown keys anywhere are errors.
inline void apply_json(const nlohmann::json& j, RunConfig& c) {
  const std::string w = "config";
  check_keys(j,
             {"seed", "dataset", "manifest", "checkpoint", "reference", "embeddings", "out", "split", "train", "drift",
              "gradcheck", "fixtures"},
             w);
  read_key(j, "seed", c.seed, w);
  read_key(j, "dataset", c.dataset, w);
  read_key(j, "manifest", c.manifest, w);
  read_key(j, "checkpoint", c.checkpoint, w);
  read_key(j, "reference", c.reference, w);
  read_key(j, "embeddings", c.embeddings, w);
  read_key(j, "out", c.out, w);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"kind", "test_fraction", "tolerance", "max_iterations"}, w + ".split");
    if (s.contains("kind")) {
      std::string k;
      read_key(s, "kind", k, w + ".split");
      c.split.kind = parse_split_kind(k);
    }
    read_key(s, "test_fraction", c.split.test_fraction, w + ".split");
    read_key(s, "tolerance", c.split.options.tolerance, w + ".split");
    read_key(s, "max_iterations", c.split.options.max_iterations, w + ".split");
  }
  if (j.contains("train")) {
    if (j.at("train").contains("seed")) throw ConfigError(w + ".train: set the seed at top level");
    apply_json(j.at("train"), c.train, w + ".train");
  }
  if (j.contains("drift")) {
    const auto& d = j.at("drift");
    check_keys(d, {"n_probes", "perturb_scale"}, w + ".drift");
    read_key(d, "n_probes", c.drift.n_probes, w + ".drift");
    read_key(d, "perturb_scale", c.drift.perturb_scale, w + ".drift");
  }
  if (j.contains("gradcheck")) {
    const auto& g = j.at("gradcheck");
    check_keys(g, {"eps", "tolerance", "max_entries_per_tensor", "pairs"}, w + ".gradcheck");
    read_key(g, "eps", c.gradcheck.eps, w + ".gradcheck");
    read_key(g, "tolerance", c.gradcheck.tolerance, w + ".gradcheck");
    read_key(g, "max_entries_per_tensor", c.gradcheck.max_entries_per_tensor, w + ".gradcheck");
    read_key(g, "pairs", c.gradcheck_pairs, w + ".gradcheck");
  }
  if (j.contains("fixtures")) {
    const auto& f = j.at("fixtures");
    check_keys(f, {"n_drugs", "n_pairs"}, w + ".fixtures");
    read_key(f, "n_drugs", c.fixtures.n_drugs, w + ".fixtures");
    read_key(f, "n_pairs", c.fixtures.n_pairs, w + ".fixtures");
  }
  c.sync_seed();
}

inline void validate(const RunConfig& c) {
  validate(c.train);
  if (!(c.split.test_fraction > 0.0 && c.split.test_fraction < 1.0)) throw ConfigError("split.test_fraction must lie in (0, 1)");
  if (c.drift.n_probes == 0 || !(c.drift.perturb_scale > 0.0)) throw ConfigError("drift settings must be positive");
  if (!(c.gradcheck.eps > 0.0) || !(c.gradcheck.tolerance > 0.0) || c.gradcheck_pairs == 0) {
    throw ConfigError("gradcheck settings must be positive");
  }
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c = default_run_config();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  apply_json(j, c);
  return c;
}

}  // namespace pairrel
