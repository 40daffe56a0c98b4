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

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <pairrel.hpp>
#include <string>
#include <vector>

namespace pairrel::cli {

enum ExitCode : int { kOk = 0, kDomainError = 1, kUsageError = 2 };

struct Flags {
  std::optional<std::string> config, split, out, dataset, manifest, checkpoint, reference, fusion, freeze, roles,
      embeddings;
  std::optional<std::uint64_t> seed;
  std::optional<double> test_fraction;
};

/// Config file first, then command-line overrides.
inline RunConfig resolve(const Flags& f) {
  RunConfig c = f.config ? load_run_config(*f.config) : default_run_config();
  if (f.seed) c.seed = *f.seed;
  if (f.split) c.split.kind = parse_split_kind(*f.split);
  if (f.test_fraction) c.split.test_fraction = *f.test_fraction;
  if (f.out) c.out = *f.out;
  if (f.dataset) c.dataset = *f.dataset;
  if (f.manifest) c.manifest = *f.manifest;
  if (f.checkpoint) c.checkpoint = *f.checkpoint;
  if (f.reference) c.reference = *f.reference;
  if (f.embeddings) c.embeddings = *f.embeddings;
  auto& m = c.train.model;
  if (f.fusion) m.fusion = parse_fusion_variant(*f.fusion);
  // The freeze pattern is stated in roles, so it follows a role swap.
  const std::string pattern = f.freeze ? *f.freeze : freeze_pattern(m);
  if (f.roles) {
    if (*f.roles == "rt") {
      m.anchor_stream = 0;
      m.adapter_stream = 1;
    } else if (*f.roles == "tr") {
      m.anchor_stream = 1;
      m.adapter_stream = 0;
    } else {
      throw ConfigError("--roles: expected 'rt' (stream 0 is r) or 'tr' (stream 0 is t)");
    }
  }
  m.frozen = freeze_from_pattern(pattern, m.anchor_stream, m.adapter_stream, m.streams.size());
  c.sync_seed();
  validate(c);
  return c;
}

inline void require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing ") + what);
}

inline std::filesystem::path prepare_out(const RunConfig& c, const std::string& command) {
  const std::filesystem::path dir(c.out);
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json echo;
  echo["command"] = command;
  echo["resolved"] = c.to_json();
  write_file((dir / "config.json").string(), echo.dump(2) + "\n");
  return dir;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  write_file(p.string(), j.dump(2) + "\n");
}

inline std::shared_ptr<const EmbeddingStore> embeddings(const RunConfig& c) {
  if (c.embeddings.empty()) return nullptr;
  return std::make_shared<const EmbeddingStore>(EmbeddingStore::load(c.embeddings));
}

inline PairDataset dataset(const RunConfig& c, const LabelSpace& space, std::ostream& out) {
  require(c.dataset, "--dataset");
  LoadReport rep;
  PairDataset ds = load_dataset(c.dataset, space, &rep);
  out << "dataset " << c.dataset << ": " << rep.rows << " rows, " << rep.records << " records";
  if (rep.deduplicated > 0) out << " (" << rep.deduplicated << " undirected duplicates dropped)";
  out << ", class histogram [";
  for (std::size_t i = 0; i < rep.histogram.size(); ++i) out << (i ? " " : "") << rep.histogram[i];
  out << "]\n";
  return ds;
}

inline std::vector<std::string> all_ids(const PairDataset& ds) {
  std::vector<std::string> ids;
  for (const auto& r : ds.records()) ids.push_back(r.pair_id);
  return ids;
}

/// Test ids of the manifest when one is given, otherwise every pair.
inline std::vector<std::string> eval_ids(const RunConfig& c, const PairDataset& ds) {
  if (c.manifest.empty()) return all_ids(ds);
  const SplitManifest m = SplitManifest::load(c.manifest);
  if (const auto v = validate_split(ds, m); !v.empty()) {
    throw InvalidManifest("manifest is not a legal split of the dataset: " + v.front().rule);
  }
  return m.test;
}

inline int cmd_split(const RunConfig& c, std::ostream& out) {
  const auto dir = prepare_out(c, "split");
  const PairDataset ds = dataset(c, c.train.model.label_space, out);
  const SplitManifest m = generate_split(ds, c.split.kind, c.split.test_fraction, c.seed, c.split.options);
  const auto violations = validate_split(ds, m);
  if (!violations.empty()) throw ContractViolation("generated manifest failed validation: " + violations.front().rule);
  m.save((dir / "manifest.json").string());
  out << to_string(m.kind) << " split: " << m.train.size() << " train, " << m.test.size() << " test, achieved fraction "
      << m.achieved_fraction << ", " << m.dropped.size() << " dropped -> " << (dir / "manifest.json").string() << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto dir = prepare_out(c, "train");
  const auto store = embeddings(c);
  const PairDataset ds = dataset(c, c.train.model.label_space, out);
  SplitManifest manifest;
  if (c.manifest.empty()) {
    manifest = generate_split(ds, c.split.kind, c.split.test_fraction, c.seed, c.split.options);
    manifest.save((dir / "manifest.json").string());
  } else {
    manifest = SplitManifest::load(c.manifest);
  }
  const TrainResult init = initial_state(c.train, store);
  init.last.save((dir / "initial.json").string());
  const TrainResult r = continue_training(init, ds, manifest, store);
  r.best.save((dir / "checkpoint.json").string());
  r.last.save((dir / "last.json").string());
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : r.history()) {
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_acc", e.val_acc}});
  }
  write_json(dir / "history.json", {{"history", hist},
                                    {"best_epoch", r.best.epoch},
                                    {"aborted", r.aborted},
                                    {"abort_reason", r.abort_reason}});
  for (const auto& e : r.history()) {
    out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_acc "
        << e.val_acc << "\n";
  }
  out << "best epoch " << r.best.epoch << " -> " << (dir / "checkpoint.json").string() << "\n";
  if (r.aborted) {
    out << "aborted: " << r.abort_reason << "\n";
    return kDomainError;
  }
  return kOk;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out, bool transfer) {
  const auto dir = prepare_out(c, transfer ? "transfer-eval" : "eval");
  require(c.checkpoint, "--checkpoint");
  const Checkpoint ck = Checkpoint::load(c.checkpoint);
  const PairDataset ds = dataset(c, ck.config.model.label_space, out);
  const auto ids = eval_ids(c, ds);
  const std::string before = sha256_hex(ck.blob());
  const MetricsReport rep =
      transfer ? evaluate_transfer(ck, ds, ids, embeddings(c)) : evaluate(restore_model(ck, embeddings(c)), ds, ids);
  nlohmann::ordered_json j;
  j["mode"] = transfer ? "transfer" : "eval";
  j["checkpoint"] = c.checkpoint;
  j["parameters_sha256"] = before;
  j["parameters_unchanged"] = sha256_hex(ck.blob()) == before;
  j["metrics"] = rep.to_json();
  write_json(dir / "metrics.json", j);
  out << j["mode"].get<std::string>() << " on " << rep.n_instances << " pairs: acc " << rep.acc;
  out << " auroc " << (rep.auroc ? std::to_string(*rep.auroc) : "undefined");
  out << " aupr " << (rep.aupr ? std::to_string(*rep.aupr) : "undefined");
  out << " f1 " << rep.f1 << " mcc " << rep.mcc << "\n";
  return kOk;
}

inline int cmd_drift(const RunConfig& c, std::ostream& out) {
  const auto dir = prepare_out(c, "drift");
  require(c.checkpoint, "--checkpoint");
  std::string ref_path = c.reference;
  if (ref_path.empty()) ref_path = (std::filesystem::path(c.checkpoint).parent_path() / "initial.json").string();
  const auto store = embeddings(c);
  const Model current = restore_model(Checkpoint::load(c.checkpoint), store);
  const Model reference = restore_model(Checkpoint::load(ref_path), store);
  const PairDataset ds = dataset(c, current.config().label_space, out);
  std::vector<MolecularInput> vocab;
  std::map<std::string, std::size_t> where;
  for (const auto& [id, raw] : ds.drug_inputs()) {
    where.emplace(id, vocab.size());
    vocab.push_back(current.input(id, raw));
  }
  std::vector<InputPair> pairs;
  for (const auto& id : eval_ids(c, ds)) {
    const auto& r = ds.at(id);
    pairs.push_back({vocab[where.at(r.drug_a)], vocab[where.at(r.drug_b)]});
  }
  DriftReport rep = analyze_drift(current, reference, vocab, pairs, c.drift);
  rep.config = nlohmann::json::parse(c.to_json().dump());
  write_json(dir / "drift.json", rep.to_json());
  out << "drift: measured " << rep.measured_drift << " bound " << rep.bound_value << " (L_hat " << rep.l_hat << ", "
      << rep.n_probes << " probes) -> " << (rep.holds ? "holds" : "violated") << "\n";
  return kOk;
}

inline int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  const auto dir = prepare_out(c, "gradcheck");
  const auto store = embeddings(c);
  std::optional<Model> model;
  if (!c.checkpoint.empty()) {
    model.emplace(restore_model(Checkpoint::load(c.checkpoint), store));
  } else {
    model.emplace(c.train.model, store);
  }
  const LabelSpace space = model->config().label_space;
  PairDataset ds;
  if (!c.dataset.empty()) {
    ds = dataset(c, space, out);
  } else {
    PlantedOptions o;
    o.n_drugs = 8;
    o.n_pairs = std::max<std::size_t>(c.gradcheck_pairs, 1);
    o.seed = c.seed;
    o.space = space;
    ds = planted_dataset(o);
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min(c.gradcheck_pairs, ds.size()); ++i) rows.push_back(i);
  const GradCheckReport rep = gradcheck_model(*model, ds, rows, c.gradcheck);
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : rep.params) {
    params.push_back({{"name", p.name},
                      {"entries_checked", p.entries_checked},
                      {"kink_crossings", p.kink_crossings},
                      {"max_rel_error", p.max_rel_error},
                      {"max_abs_error", p.max_abs_error}});
  }
  write_json(dir / "gradcheck.json", {{"passed", rep.passed},
                                      {"max_rel_error", rep.max_rel_error},
                                      {"worst_param", rep.worst_param},
                                      {"tolerance", rep.tolerance},
                                      {"entries_checked", rep.entries_checked},
                                      {"kink_crossings", rep.kink_crossings},
                                      {"pairs", rows.size()},
                                      {"params", params}});
  out << "gradcheck: " << rep.entries_checked << " entries, max relative error " << rep.max_rel_error << " ("
      << rep.worst_param << "), tolerance " << rep.tolerance << " -> " << (rep.passed ? "PASS" : "FAIL") << "\n";
  return rep.passed ? kOk : kDomainError;
}

inline int cmd_fixtures(const RunConfig& c, std::ostream& out) {
  const auto dir = prepare_out(c, "fixtures");
  PlantedOptions o;
  o.n_drugs = c.fixtures.n_drugs;
  o.n_pairs = c.fixtures.n_pairs;
  o.seed = c.seed;
  o.space = c.train.model.label_space;
  const PairDataset ds = planted_dataset(o);
  save_dataset((dir / "planted.csv").string(), ds);
  out << "planted corpus: " << ds.drug_inputs().size() << " drugs, " << ds.size() << " pairs -> "
      << (dir / "planted.csv").string() << "\n";
  return kOk;
}

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pairwise drug-interaction relation learning"};
  app.name("pairrel");
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON run configuration");
    s->add_option("--seed", f.seed, "Seed for every random stream");
    s->add_option("--out", f.out, "Run directory");
  };
  auto model_flags = [&](CLI::App* s) {
    s->add_option("--fusion", f.fusion, "concat_mlp|oneway_t_from_r|oneway_r_from_t|twoway_untied|twoway_tied");
    s->add_option("--freeze", f.freeze, "Frozen roles: r, t, rt or none");
    s->add_option("--roles", f.roles, "Stream role order: rt or tr");
    s->add_option("--embeddings", f.embeddings, "Precomputed embedding store");
  };
  auto split_flags = [&](CLI::App* s) {
    s->add_option("--split", f.split, "s1|s2|s3");
    s->add_option("--test-fraction", f.test_fraction, "Target test fraction");
  };

  auto* split = app.add_subcommand("split", "Generate a split manifest");
  common(split);
  split_flags(split);
  split->add_option("--dataset", f.dataset);
  model_flags(split);

  auto* train = app.add_subcommand("train", "Train and write checkpoints");
  common(train);
  split_flags(train);
  model_flags(train);
  train->add_option("--dataset", f.dataset);
  train->add_option("--manifest", f.manifest);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* transfer = app.add_subcommand("transfer-eval", "Evaluate a checkpoint on another dataset, no training");
  for (auto* s : {eval, transfer}) {
    common(s);
    s->add_option("--dataset", f.dataset);
    s->add_option("--manifest", f.manifest);
    s->add_option("--checkpoint", f.checkpoint);
    s->add_option("--embeddings", f.embeddings);
  }

  auto* drift = app.add_subcommand("drift", "Check the freezing drift bound");
  common(drift);
  drift->add_option("--dataset", f.dataset);
  drift->add_option("--manifest", f.manifest);
  drift->add_option("--checkpoint", f.checkpoint);
  drift->add_option("--reference", f.reference, "Checkpoint with the pre-training parameters");
  drift->add_option("--embeddings", f.embeddings);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  common(gradcheck);
  model_flags(gradcheck);
  gradcheck->add_option("--dataset", f.dataset);
  gradcheck->add_option("--checkpoint", f.checkpoint);

  auto* fixtures = app.add_subcommand("fixtures", "Write the planted-rule synthetic corpus");
  common(fixtures);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'pairrel --help' for usage\n";
    return kUsageError;
  }

  try {
    const RunConfig c = resolve(f);
    if (split->parsed()) return cmd_split(c, out);
    if (train->parsed()) return cmd_train(c, out);
    if (eval->parsed()) return cmd_eval(c, out, false);
    if (transfer->parsed()) return cmd_eval(c, out, true);
    if (drift->parsed()) return cmd_drift(c, out);
    if (gradcheck->parsed()) return cmd_gradcheck(c, out);
    return cmd_fixtures(c, out);
  } catch (const Error& e) {
    err << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return kDomainError;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", "RuntimeError"}, {"message", e.what()}}.dump() << "\n";
    return kDomainError;
  }
}

}  // namespace pairrel::cli
