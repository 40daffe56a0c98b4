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
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "serialization.hpp"
#include "splits.hpp"

namespace pairrel {

struct TrainConfig {
  std::uint64_t seed = 7;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  // When false, fusion, trunk and head are excluded from the optimizer too.
  bool train_downstream = true;
  ModelConfig model;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  validate(c.model);
  if (c.epochs == 0 || c.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
}

// ---- configuration documents ----------------------------------------------

/// Rejects keys outside `allowed`, naming the first offender.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline nlohmann::ordered_json to_json(const LabelSpace& s) {
  return {{"kind", s.kind == LabelKind::binary ? "binary" : "multiclass"},
          {"classes", s.classes},
          {"directed", s.directed}};
}

inline LabelSpace label_space_from_json(const nlohmann::json& j, const std::string& where) {
  check_keys(j, {"kind", "classes", "directed"}, where);
  std::string kind = "multiclass";
  std::size_t classes = 2;
  bool directed = false;
  read_key(j, "kind", kind, where);
  read_key(j, "classes", classes, where);
  read_key(j, "directed", directed, where);
  if (kind == "binary") return LabelSpace::binary(directed);
  if (kind == "multiclass") return LabelSpace::multiclass(classes, directed);
  throw ConfigError(where + ".kind: expected 'binary' or 'multiclass'");
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json streams = nlohmann::ordered_json::array();
  for (const auto& s : c.streams) {
    streams.push_back(
        {{"kind", to_string(s.kind)}, {"width", s.width}, {"max_len", s.max_len}, {"seed", s.seed}});
  }
  return {{"d", c.d},
          {"heads", c.heads},
          {"norm_eps", c.norm_eps},
          {"dropout", c.dropout},
          {"fusion_variant", to_string(c.fusion)},
          {"trunk_tied", c.trunk_tied},
          {"streams", streams},
          {"roles", {c.anchor_stream, c.adapter_stream}},
          {"freeze", freeze_pattern(c)},
          {"label_space", to_json(c.label_space)}};
}

/// Overrides the fields of `c` present in `j`.
inline void apply_json(const nlohmann::json& j, ModelConfig& c, const std::string& where) {
  check_keys(j,
             {"d", "heads", "norm_eps", "dropout", "fusion_variant", "trunk_tied", "streams", "roles", "freeze",
              "label_space"},
             where);
  read_key(j, "d", c.d, where);
  read_key(j, "heads", c.heads, where);
  read_key(j, "norm_eps", c.norm_eps, where);
  read_key(j, "dropout", c.dropout, where);
  read_key(j, "trunk_tied", c.trunk_tied, where);
  if (j.contains("fusion_variant")) {
    std::string v;
    read_key(j, "fusion_variant", v, where);
    c.fusion = parse_fusion_variant(v);
  }
  const std::string pattern_before = freeze_pattern(c);
  if (j.contains("streams")) {
    const auto& arr = j.at("streams");
    if (!arr.is_array()) throw ConfigError(where + ".streams: expected an array");
    c.streams.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string w = where + ".streams[" + std::to_string(i) + "]";
      check_keys(arr[i], {"kind", "width", "max_len", "seed"}, w);
      StreamConfig s;
      s.seed = i + 1;
      std::string kind = "mock";
      read_key(arr[i], "kind", kind, w);
      if (kind == "mock") {
        s.kind = StreamKind::mock;
      } else if (kind == "precomputed") {
        s.kind = StreamKind::precomputed;
      } else {
        throw ConfigError(w + ".kind: expected 'mock' or 'precomputed'");
      }
      read_key(arr[i], "width", s.width, w);
      read_key(arr[i], "max_len", s.max_len, w);
      read_key(arr[i], "seed", s.seed, w);
      c.streams.push_back(s);
    }
  }
  if (j.contains("roles")) {
    std::vector<std::size_t> roles;
    read_key(j, "roles", roles, where);
    if (roles.size() != 2) throw ConfigError(where + ".roles: expected [anchor_stream, adapter_stream]");
    c.anchor_stream = roles[0];
    c.adapter_stream = roles[1];
  }
  std::string pattern = pattern_before;
  read_key(j, "freeze", pattern, where);
  if (c.anchor_stream >= c.streams.size() || c.adapter_stream >= c.streams.size()) {
    throw ConfigError(where + ".roles: stream index out of range");
  }
  c.frozen = freeze_from_pattern(pattern, c.anchor_stream, c.adapter_stream, c.streams.size());
  if (j.contains("label_space")) c.label_space = label_space_from_json(j.at("label_space"), where + ".label_space");
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"train_downstream", c.train_downstream},
          {"model", to_json(c.model)}};
}

inline void apply_json(const nlohmann::json& j, TrainConfig& c, const std::string& where) {
  check_keys(j,
             {"seed", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps", "patience",
              "validation_fraction", "train_downstream", "model"},
             where);
  read_key(j, "seed", c.seed, where);
  read_key(j, "epochs", c.epochs, where);
  read_key(j, "batch_size", c.batch_size, where);
  read_key(j, "learning_rate", c.learning_rate, where);
  read_key(j, "beta1", c.beta1, where);
  read_key(j, "beta2", c.beta2, where);
  read_key(j, "adam_eps", c.adam_eps, where);
  read_key(j, "patience", c.patience, where);
  read_key(j, "validation_fraction", c.validation_fraction, where);
  read_key(j, "train_downstream", c.train_downstream, where);
  if (j.contains("model")) apply_json(j.at("model"), c.model, where + ".model");
  c.model.seed = c.seed;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  apply_json(j, c, "train");
  validate(c);
  return c;
}

// ---- optimizer ------------------------------------------------------------

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamHyper adam_hyper(const TrainConfig& c) { return {c.learning_rate, c.beta1, c.beta2, c.adam_eps}; }

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  bool operator==(const AdamState& o) const {
    auto same = [](const std::map<std::string, Tensor>& a, const std::map<std::string, Tensor>& b) {
      if (a.size() != b.size()) return false;
      for (auto i = a.begin(), k = b.begin(); i != a.end(); ++i, ++k)
        if (i->first != k->first || !i->second.bit_equal(k->second)) return false;
      return true;
    };
    return step == o.step && same(m, o.m) && same(v, o.v);
  }
};

/// One bias-corrected Adam update over the parameters named in `grads`. All
/// gradients are checked before anything is written.
inline void adam_step(ParameterStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                      const AdamHyper& h) {
  for (const auto& [name, g] : grads) {
    const Parameter& p = params.at(name);
    if (!p.trainable) throw ContractViolation("adam_step: gradient supplied for frozen parameter '" + name + "'");
    if (!p.value.same_shape(g)) {
      throw InvalidArgument("adam_step: gradient of '" + name + "' is " + g.shape_str() + ", parameter is " +
                            p.value.shape_str());
    }
    if (!g.all_finite()) throw NumericFault("adam_step: non-finite gradient for '" + name + "'");
  }
  if (grads.empty()) return;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t), c2 = 1.0 - std::pow(h.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name).value;
    auto [mi, fresh_m] = state.m.try_emplace(name, w.rows(), w.cols());
    auto [vi, fresh_v] = state.v.try_emplace(name, w.rows(), w.cols());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      w[i] -= h.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
  }
}

// ---- checkpoints ----------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per instance, dropout active
  double val_loss = 0.0;    // mean per instance, eval mode
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  TrainConfig config;
  ParameterStore params;
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  bool operator==(const Checkpoint& o) const {
    return config == o.config && params.bit_equal(o.params) && params.same_layout(o.params) && adam == o.adam &&
           epoch == o.epoch && history == o.history && best_epoch == o.best_epoch &&
           std::bit_cast<std::uint64_t>(best_val_loss) == std::bit_cast<std::uint64_t>(o.best_val_loss) &&
           since_best == o.since_best;
  }

  /// Little-endian float64 values: parameters, then Adam m, then Adam v, each
  /// in name order.
  std::string blob() const {
    std::string out;
    for (const auto& [name, p] : params) append_f64_le(out, p.value.values());
    for (const auto& [name, t] : adam.m) append_f64_le(out, t.values());
    for (const auto& [name, t] : adam.v) append_f64_le(out, t.values());
    return out;
  }

  nlohmann::ordered_json sidecar(const std::string& blob_name, const std::string& blob_sha) const {
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, p] : params) {
      tensors.push_back({{"name", name}, {"shape", {p.value.rows(), p.value.cols()}}, {"trainable", p.trainable}});
    }
    nlohmann::ordered_json adam_names = nlohmann::ordered_json::array();
    for (const auto& [name, t] : adam.m) adam_names.push_back(name);
    nlohmann::ordered_json hist = nlohmann::ordered_json::array();
    for (const auto& e : history) {
      hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_acc", e.val_acc}});
    }
    nlohmann::ordered_json j;
    j["format"] = "pairrel-checkpoint";
    j["version"] = 1;
    j["config"] = to_json(config);
    j["epoch"] = epoch;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = std::isfinite(best_val_loss) ? nlohmann::ordered_json(best_val_loss) : nlohmann::ordered_json();
    j["since_best"] = since_best;
    // Every random draw is keyed by (seed, stream name, epoch[, batch]), so
    // the completed epoch count is the whole generator position.
    j["rng"] = {{"seed", config.seed}, {"streams", {"shuffle", "dropout", "val"}}, {"next_epoch", epoch + 1}};
    j["history"] = hist;
    j["tensors"] = tensors;
    j["adam"] = {{"step", adam.step}, {"tensors", adam_names}};
    j["blob"] = blob_name;
    j["blob_sha256"] = blob_sha;
    return j;
  }

  /// Writes `path` (JSON sidecar) and `path` with ".bin" in place of ".json".
  void save(const std::string& path) const {
    const std::filesystem::path side(path);
    std::filesystem::path bin = side;
    bin.replace_extension(".bin");
    if (bin == side) bin += ".bin";
    const std::string bytes = blob();
    write_file(bin.string(), bytes);
    write_file(side.string(), sidecar(bin.filename().string(), sha256_hex(bytes)).dump(2) + "\n");
  }

  static Checkpoint load(const std::string& path);
};

inline Checkpoint Checkpoint::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  try {
    if (j.at("format") != "pairrel-checkpoint" || j.at("version") != 1) {
      throw ParseError("checkpoint " + path + ": unsupported format");
    }
    const auto bin = std::filesystem::path(path).parent_path() / j.at("blob").get<std::string>();
    const std::string bytes = read_file(bin.string());
    if (sha256_hex(bytes) != j.at("blob_sha256").get<std::string>()) {
      throw DataIntegrity("checkpoint blob " + bin.string() + " does not match its recorded sha256");
    }
    Checkpoint c;
    c.config = train_config_from_json(j.at("config"));
    c.epoch = j.at("epoch").get<std::size_t>();
    c.best_epoch = j.at("best_epoch").get<std::size_t>();
    if (!j.at("best_val_loss").is_null()) c.best_val_loss = j.at("best_val_loss").get<double>();
    c.since_best = j.at("since_best").get<std::size_t>();
    for (const auto& e : j.at("history")) {
      c.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                           e.at("val_loss").get<double>(), e.at("val_acc").get<double>()});
    }
    std::size_t offset = 0;
    auto take = [&](std::size_t rows, std::size_t cols) {
      Tensor t(rows, cols, read_f64_le(bytes, offset, rows * cols));
      offset += rows * cols * 8;
      return t;
    };
    for (const auto& t : j.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      c.params.add(t.at("name").get<std::string>(), take(shape.at(0), shape.at(1)), t.at("trainable").get<bool>());
    }
    c.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    const auto names = j.at("adam").at("tensors").get<std::vector<std::string>>();
    for (const auto& n : names) {
      const auto& p = c.params.at(n).value;
      c.adam.m.emplace(n, take(p.rows(), p.cols()));
    }
    for (const auto& n : names) {
      const auto& p = c.params.at(n).value;
      c.adam.v.emplace(n, take(p.rows(), p.cols()));
    }
    if (offset != bytes.size()) throw ParseError("checkpoint blob has " + std::to_string(bytes.size() - offset) + " trailing bytes");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
}

/// Rebuilds the model described by a checkpoint and loads its parameters.
inline Model restore_model(const Checkpoint& c, std::shared_ptr<const EmbeddingStore> store = nullptr) {
  Model m(c.config.model, std::move(store));
  if (!m.params().same_layout(c.params)) throw ConfigError("checkpoint parameters do not match its configuration");
  for (auto& [name, p] : m.params()) {
    const Parameter& src = c.params.at(name);
    p.value = src.value;
    p.trainable = src.trainable;
  }
  return m;
}

// ---- training -------------------------------------------------------------

/// Drug id -> model input, built once per dataset.
inline std::map<std::string, MolecularInput> model_inputs(const Model& m, const PairDataset& ds) {
  std::map<std::string, MolecularInput> out;
  for (const auto& [id, raw] : ds.drug_inputs()) out.emplace(id, m.input(id, raw));
  return out;
}

inline double mean_loss(const Model& m, const PairDataset& ds, std::span<const std::size_t> rows,
                        const std::map<std::string, MolecularInput>& inputs) {
  if (rows.empty()) return 0.0;
  Graph g(Graph::Options{.grad_enabled = false});
  ForwardPass pass(m, g);
  double total = 0.0;
  for (std::size_t i : rows) {
    const auto& r = ds.records()[i];
    total += cross_entropy(pass.logits(inputs.at(r.drug_a), inputs.at(r.drug_b)), r.label, ds.space()).value()[0];
  }
  return total / static_cast<double>(rows.size());
}

inline ScoredBatch score_rows(const Model& m, const PairDataset& ds, std::span<const std::size_t> rows,
                              const std::map<std::string, MolecularInput>& inputs) {
  ScoredBatch b{{}, {}, ds.space()};
  Graph g(Graph::Options{.grad_enabled = false});
  ForwardPass pass(m, g);
  for (std::size_t i : rows) {
    const auto& r = ds.records()[i];
    b.predictions.push_back(
        predict_from_logits(pass.logits(inputs.at(r.drug_a), inputs.at(r.drug_b)).value().values(), ds.space()));
    b.labels.push_back(r.label);
  }
  return b;
}

struct TrainSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Holds out validation_fraction of the manifest's training pairs with the
/// "val" stream; both parts keep dataset order.
inline TrainSplit validation_split(const TrainConfig& c, const PairDataset& ds, const SplitManifest& manifest) {
  std::vector<std::size_t> rows;
  for (const auto& id : manifest.train) rows.push_back(ds.index_of(id));
  std::sort(rows.begin(), rows.end());
  std::size_t n_val = 0;
  if (c.validation_fraction > 0.0 && rows.size() >= 2) {
    n_val = static_cast<std::size_t>(std::llround(c.validation_fraction * static_cast<double>(rows.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, rows.size() - 1);
  }
  std::vector<std::size_t> shuffled = rows;
  Rng rng = Rng::substream(c.seed, "val");
  rng.shuffle(shuffled.begin(), shuffled.end());
  std::set<std::size_t> val(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  TrainSplit s;
  for (std::size_t r : rows) (val.count(r) ? s.val : s.train).push_back(r);
  return s;
}

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  bool aborted = false;
  std::string abort_reason;

  const std::vector<EpochRecord>& history() const { return last.history; }
};

inline Model model_for(const Checkpoint& c, std::shared_ptr<const EmbeddingStore> store) {
  return restore_model(c, std::move(store));
}

/// Fresh state: initialised parameters, empty optimizer, epoch 0.
inline TrainResult initial_state(const TrainConfig& cfg, std::shared_ptr<const EmbeddingStore> store = nullptr) {
  validate(cfg);
  if (cfg.model.seed != cfg.seed) throw ConfigError("model seed must equal the training seed");
  Model m(cfg.model, std::move(store));
  if (!cfg.train_downstream)
    for (const auto& prefix : Model::downstream_prefixes()) m.params().set_trainable(prefix, false);
  Checkpoint c;
  c.config = cfg;
  c.params = m.params();
  return {c, c, false, {}};
}

/// Runs epochs from `state.last` up to `until_epoch` (default: the configured
/// count) or until early stopping.
inline TrainResult continue_training(TrainResult state, const PairDataset& ds, const SplitManifest& manifest,
                                     std::shared_ptr<const EmbeddingStore> store = nullptr,
                                     std::optional<std::size_t> until_epoch = std::nullopt) {
  const TrainConfig& cfg = state.last.config;
  if (!(cfg.model.label_space.kind == ds.space().kind && cfg.model.label_space.classes == ds.space().classes)) {
    throw ConfigError("label space of the configuration does not match the dataset");
  }
  if (!manifest.dataset_sha256.empty() && manifest.dataset_sha256 != dataset_sha256(ds)) {
    throw InvalidManifest("manifest was generated for a different dataset");
  }
  if (const auto violations = validate_split(ds, manifest); !violations.empty()) {
    throw InvalidManifest("manifest is not a legal split: " + violations.front().rule + " at '" +
                          violations.front().pair_id + "'");
  }
  const std::size_t stop = std::min(until_epoch.value_or(cfg.epochs), cfg.epochs);
  Model model = model_for(state.last, store);
  const auto inputs = model_inputs(model, ds);
  const TrainSplit split = validation_split(cfg, ds, manifest);
  if (split.train.empty()) throw EmptyInput("no training pairs");
  const auto& monitor = split.val.empty() ? split.train : split.val;
  const AdamHyper hyper = adam_hyper(cfg);

  while (state.last.epoch < stop && !(cfg.patience > 0 && state.last.since_best >= cfg.patience)) {
    Checkpoint& ck = state.last;
    const Checkpoint good = ck;
    const std::size_t epoch = ck.epoch + 1;
    std::vector<std::size_t> order = split.train;
    Rng shuffle = Rng::substream(cfg.seed, "shuffle", epoch);
    shuffle.shuffle(order.begin(), order.end());

    double total = 0.0;
    try {
      for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        Graph::Options opts{.grad_enabled = true,
                            .training = model.config().dropout > 0.0,
                            .dropout_rate = model.config().dropout,
                            .dropout_seed = hash_combine(hash_combine(hash_combine(cfg.seed, hash_name("dropout")), epoch), batch)};
        Graph g(opts);
        ForwardPass pass(model, g);
        std::vector<Var> logits;
        std::vector<long> labels;
        for (std::size_t k = start; k < end; ++k) {
          const auto& r = ds.records()[order[k]];
          logits.push_back(pass.logits(inputs.at(r.drug_a), inputs.at(r.drug_b)));
          labels.push_back(r.label);
        }
        Var loss = cross_entropy(logits, labels, ds.space());
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericFault("non-finite training loss at epoch " + std::to_string(epoch));
        total += lv;
        g.backward(loss);
        adam_step(model.params(), g.parameter_grads(), ck.adam, hyper);
      }
    } catch (const NumericFault& e) {
      state.last = good;
      state.aborted = true;
      state.abort_reason = e.what();
      return state;
    }

    ck.params = model.params();
    ck.epoch = epoch;
    EpochRecord rec{epoch, total / static_cast<double>(order.size()), mean_loss(model, ds, monitor, inputs), 0.0};
    rec.val_acc = micro_accuracy(score_rows(model, ds, monitor, inputs));
    ck.history.push_back(rec);
    if (rec.val_loss < ck.best_val_loss) {
      ck.best_val_loss = rec.val_loss;
      ck.best_epoch = epoch;
      ck.since_best = 0;
      state.best = ck;
    } else {
      ++ck.since_best;
    }
  }
  return state;
}

/// train(config, dataset, manifest): best-validation and last checkpoints.
inline TrainResult train(const TrainConfig& cfg, const PairDataset& ds, const SplitManifest& manifest,
                         std::shared_ptr<const EmbeddingStore> store = nullptr) {
  return continue_training(initial_state(cfg, store), ds, manifest, store);
}

// ---- evaluation -----------------------------------------------------------

inline std::vector<std::size_t> rows_of(const PairDataset& ds, std::span<const std::string> pair_ids) {
  std::vector<std::size_t> rows;
  for (const auto& id : pair_ids) rows.push_back(ds.index_of(id));
  return rows;
}

inline MetricsReport evaluate(const Model& m, const PairDataset& ds, std::span<const std::string> pair_ids) {
  if (!(m.config().label_space.kind == ds.space().kind && m.config().label_space.classes == ds.space().classes)) {
    throw ConfigError("model label space does not match the dataset");
  }
  const auto rows = rows_of(ds, pair_ids);
  std::map<std::string, MolecularInput> inputs;
  for (std::size_t i : rows) {
    const auto& r = ds.records()[i];
    if (!inputs.count(r.drug_a)) inputs.emplace(r.drug_a, m.input(r.drug_a, r.input_a));
    if (!inputs.count(r.drug_b)) inputs.emplace(r.drug_b, m.input(r.drug_b, r.input_b));
  }
  return compute_metrics(score_rows(m, ds, rows, inputs));
}

/// Scores a dataset with a trained checkpoint and no further training. The
/// checkpoint's parameter bytes are compared before and after.
inline MetricsReport evaluate_transfer(const Checkpoint& c, const PairDataset& ds,
                                       std::span<const std::string> pair_ids,
                                       std::shared_ptr<const EmbeddingStore> store = nullptr) {
  const std::string before = sha256_hex(c.blob());
  const Model m = restore_model(c, std::move(store));
  const MetricsReport r = evaluate(m, ds, pair_ids);
  if (sha256_hex(c.blob()) != before || !m.params().bit_equal(c.params)) {
    throw ContractViolation("transfer evaluation modified parameters");
  }
  return r;
}

/// Finite-difference check of the summed cross-entropy over `rows`, in eval
/// mode, against every trainable parameter of `m`.
inline GradCheckReport gradcheck_model(const Model& m, const PairDataset& ds, std::span<const std::size_t> rows,
                                       const GradCheckOptions& opt) {
  if (rows.empty()) throw EmptyInput("gradcheck_model: no pairs");
  const auto inputs = model_inputs(m, ds);
  std::vector<long> labels;
  for (std::size_t i : rows) labels.push_back(ds.records()[i].label);
  LossClosure closure = [&](Graph& g, const ParameterStore& ps) {
    ForwardPass pass(m, g, &ps);
    std::vector<Var> logits;
    for (std::size_t i : rows) {
      const auto& r = ds.records()[i];
      logits.push_back(pass.logits(inputs.at(r.drug_a), inputs.at(r.drug_b)));
    }
    return cross_entropy(logits, labels, ds.space());
  };
  return finite_diff_check(closure, m.params(), opt);
}

}  // namespace pairrel
