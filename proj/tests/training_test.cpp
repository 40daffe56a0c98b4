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

#include <gtest/gtest.h>

#include <filesystem>
#include <pairrel/fixtures.hpp>
#include <pairrel/training.hpp>

#include "test_util.hpp"

namespace pairrel {
namespace {

TrainConfig small_config(std::string freeze = "r", LabelSpace space = LabelSpace::multiclass(4, true)) {
  TrainConfig c;
  c.seed = 11;
  c.epochs = 4;
  c.batch_size = 16;
  c.learning_rate = 5e-3;
  c.model.d = 8;
  c.model.heads = 2;
  c.model.dropout = 0.1;
  c.model.streams = {{StreamKind::mock, 6, 12, 1}, {StreamKind::mock, 10, 12, 2}};
  c.model.frozen = freeze_from_pattern(freeze, 0, 1, 2);
  c.model.label_space = space;
  c.model.seed = c.seed;
  return c;
}

struct Fixture {
  PairDataset ds;
  SplitManifest manifest;
};

Fixture small_fixture(LabelSpace space = LabelSpace::multiclass(4, true)) {
  PlantedOptions o;
  o.n_drugs = 16;
  o.n_pairs = 60;
  o.space = space;
  o.seed = 3;
  Fixture f{planted_dataset(o), {}};
  f.manifest = generate_split(f.ds, SplitKind::s1, 0.2, 5);
  return f;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pairrel_training_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Adam, ZeroGradientLeavesParametersAndMomentsAtZero) {
  ParameterStore ps;
  ps.add("w", Tensor(1, 3, std::vector<double>{0.5, -1.0, 2.0}));
  const ParameterStore before = ps;
  AdamState st;
  adam_step(ps, {{"w", Tensor(1, 3, 0.0)}}, st, {});
  EXPECT_TRUE(ps.bit_equal(before));
  for (double v : st.m.at("w").values()) EXPECT_EQ(v, 0.0);
  for (double v : st.v.at("w").values()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  // After one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps).
  for (double g : {3.0, -0.02, 1e-3, -250.0}) {
    ParameterStore ps;
    ps.add("p", Tensor(1, 1, 1.0));
    AdamState st;
    AdamHyper h;
    h.eps = 1e-12;
    adam_step(ps, {{"p", Tensor(1, 1, g)}}, st, h);
    EXPECT_NEAR(ps.at("p").value[0], 1.0 - h.learning_rate * (g > 0 ? 1.0 : -1.0), 1e-12) << g;
    EXPECT_EQ(st.step, 1u);
  }
}

TEST(Adam, SecondStepMatchesClosedForm) {
  ParameterStore ps;
  ps.add("p", Tensor(1, 1, 0.0));
  AdamState st;
  const AdamHyper h;
  adam_step(ps, {{"p", Tensor(1, 1, 2.0)}}, st, h);
  adam_step(ps, {{"p", Tensor(1, 1, -1.0)}}, st, h);
  const double m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0, v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
  const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
  const double expected = -h.learning_rate * 2.0 / (2.0 + h.eps) - h.learning_rate * m_hat / (std::sqrt(v_hat) + h.eps);
  EXPECT_NEAR(ps.at("p").value[0], expected, 1e-15);
}

TEST(Adam, FrozenParameterWithGradientIsAContractViolation) {
  ParameterStore ps;
  ps.add("a", Tensor(1, 2, 1.0));
  ps.add("frozen", Tensor(1, 2, 1.0), false);
  const ParameterStore before = ps;
  AdamState st;
  EXPECT_THROW(adam_step(ps, {{"a", Tensor(1, 2, 1.0)}, {"frozen", Tensor(1, 2, 1.0)}}, st, {}), ContractViolation);
  EXPECT_TRUE(ps.bit_equal(before));
  EXPECT_EQ(st.step, 0u);
  EXPECT_TRUE(st.m.empty());
}

TEST(Adam, NonFiniteGradientAbortsWithoutWriting) {
  ParameterStore ps;
  ps.add("a", Tensor(1, 2, 1.0));
  ps.add("b", Tensor(1, 2, 1.0));
  const ParameterStore before = ps;
  AdamState st;
  Tensor bad(1, 2, 0.5);
  bad[1] = std::nan("");
  EXPECT_THROW(adam_step(ps, {{"a", Tensor(1, 2, 1.0)}, {"b", bad}}, st, {}), NumericFault);
  EXPECT_TRUE(ps.bit_equal(before));
  EXPECT_THROW(adam_step(ps, {{"a", Tensor(2, 2, 1.0)}}, st, {}), InvalidArgument);
  EXPECT_THROW(adam_step(ps, {{"zzz", Tensor(1, 2, 1.0)}}, st, {}), MissingEntity);
}

TEST(TrainConfigJson, RoundTripsAndRejectsUnknownKeys) {
  TrainConfig c = small_config("t");
  c.model.fusion = FusionVariant::oneway_t_from_r;
  c.model.trunk_tied = true;
  const auto j = to_json(c);
  EXPECT_EQ(train_config_from_json(nlohmann::json::parse(j.dump())), c);

  auto typo = nlohmann::json::parse(j.dump());
  typo["learning_rat"] = 0.1;
  EXPECT_THROW(train_config_from_json(typo), ConfigError);
  auto nested = nlohmann::json::parse(j.dump());
  nested["model"]["fusion"] = "concat_mlp";
  EXPECT_THROW(train_config_from_json(nested), ConfigError);
  auto bad_type = nlohmann::json::parse(j.dump());
  bad_type["epochs"] = "many";
  EXPECT_THROW(train_config_from_json(bad_type), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"model", {{"freeze", "x"}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"learning_rate", -1.0}}), ConfigError);
}

TEST(TrainConfigJson, SwappedRolesMoveTheFreezeToTheOtherStream) {
  const auto c = train_config_from_json(nlohmann::json{{"model", {{"roles", {1, 0}}, {"freeze", "r"}}}});
  EXPECT_EQ(c.model.anchor_stream, 1u);
  EXPECT_EQ(c.model.frozen, (std::vector<bool>{false, true}));
  EXPECT_EQ(c.model.seed, c.seed);
}

TEST(Train, SameInputsGiveBitIdenticalHistories) {
  const auto f = small_fixture();
  const auto cfg = small_config();
  const auto a = train(cfg, f.ds, f.manifest);
  const auto b = train(cfg, f.ds, f.manifest);
  ASSERT_EQ(a.history().size(), cfg.epochs);
  EXPECT_EQ(a.last, b.last);
  EXPECT_EQ(a.best, b.best);
  for (std::size_t i = 0; i < a.history().size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.history()[i].train_loss),
              std::bit_cast<std::uint64_t>(b.history()[i].train_loss));
  }
  auto other = cfg;
  other.seed = other.model.seed = 12;
  EXPECT_NE(train(other, f.ds, f.manifest).history()[0].train_loss, a.history()[0].train_loss);
}

TEST(Train, AllFrozenWithDownstreamExcludedGivesConstantLoss) {
  const auto f = small_fixture();
  auto cfg = small_config("rt");
  cfg.train_downstream = false;
  cfg.model.dropout = 0.0;
  const auto r = train(cfg, f.ds, f.manifest);
  ASSERT_EQ(r.history().size(), cfg.epochs);
  for (const auto& e : r.history()) {
    EXPECT_EQ(e.train_loss, r.history()[0].train_loss);
    EXPECT_EQ(e.val_loss, r.history()[0].val_loss);
  }
  EXPECT_EQ(r.last.adam.step, 0u);
  EXPECT_TRUE(r.last.params.bit_equal(initial_state(cfg).last.params));
}

TEST(Train, FrozenStreamIsBitIdenticalAtEveryCheckpoint) {
  const auto f = small_fixture();
  for (const std::string pattern : {"r", "t"}) {
    const auto cfg = small_config(pattern);
    const auto init = initial_state(cfg).last.params;
    const std::string frozen_prefix = pattern == "r" ? "stream0." : "stream1.";
    const std::string live_prefix = pattern == "r" ? "stream1." : "stream0.";
    auto state = initial_state(cfg);
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
      state = continue_training(state, f.ds, f.manifest, nullptr, e);
      EXPECT_TRUE(state.last.params.bit_equal(init, frozen_prefix)) << pattern << " epoch " << e;
      EXPECT_FALSE(state.last.params.bit_equal(init, live_prefix)) << pattern << " epoch " << e;
      for (const auto& [name, m] : state.last.adam.m) EXPECT_NE(name.rfind(frozen_prefix, 0), 0u) << name;
    }
  }
}

TEST(Train, LossDecreasesOnPlantedTask) {
  const auto f = small_fixture();
  auto cfg = small_config();
  cfg.epochs = 15;
  cfg.patience = 0;
  const auto r = train(cfg, f.ds, f.manifest);
  EXPECT_LT(r.history().back().train_loss, r.history().front().train_loss);
  EXPECT_LE(r.best.best_val_loss, r.history().front().val_loss);
  EXPECT_EQ(r.best.epoch, r.best.best_epoch);
}

TEST(Train, PatienceStopsEarly) {
  const auto f = small_fixture();
  auto cfg = small_config("rt");
  cfg.train_downstream = false;
  cfg.model.dropout = 0.0;
  cfg.epochs = 10;
  cfg.patience = 2;
  // Constant loss never improves after epoch 1.
  const auto r = train(cfg, f.ds, f.manifest);
  EXPECT_EQ(r.history().size(), 3u);
  EXPECT_EQ(r.best.epoch, 1u);
}

TEST(Train, RejectsMismatchedInputs) {
  const auto f = small_fixture();
  EXPECT_THROW(train(small_config("r", LabelSpace::binary(true)), f.ds, f.manifest), ConfigError);
  auto bad = f.manifest;
  bad.test.push_back(bad.train.front());
  EXPECT_THROW(train(small_config(), f.ds, bad), InvalidManifest);
  auto wrong_hash = f.manifest;
  wrong_hash.dataset_sha256 = std::string(64, '0');
  EXPECT_THROW(train(small_config(), f.ds, wrong_hash), InvalidManifest);
}

TEST(Train, ValidationSplitIsSeededAndDisjoint) {
  const auto f = small_fixture();
  const auto cfg = small_config();
  const auto s = validation_split(cfg, f.ds, f.manifest);
  EXPECT_EQ(s.train.size() + s.val.size(), f.manifest.train.size());
  EXPECT_EQ(s.val.size(), static_cast<std::size_t>(std::llround(0.1 * f.manifest.train.size())));
  std::set<std::size_t> seen(s.train.begin(), s.train.end());
  for (auto v : s.val) EXPECT_TRUE(seen.insert(v).second);
  const auto again = validation_split(cfg, f.ds, f.manifest);
  EXPECT_EQ(again.val, s.val);
}

TEST(Checkpoint, RoundTripIsByteExactAndResumesIdentically) {
  const auto f = small_fixture();
  auto cfg = small_config();
  cfg.patience = 0;
  const auto dir = scratch("ckpt");
  const auto full = train(cfg, f.ds, f.manifest);

  auto half = continue_training(initial_state(cfg), f.ds, f.manifest, nullptr, 2);
  half.last.save((dir / "half.json").string());
  const Checkpoint loaded = Checkpoint::load((dir / "half.json").string());
  EXPECT_EQ(loaded, half.last);
  EXPECT_EQ(loaded.blob(), half.last.blob());

  const auto resumed = continue_training({half.best, loaded, false, {}}, f.ds, f.manifest);
  EXPECT_EQ(resumed.last, full.last);
  ASSERT_EQ(resumed.history().size(), full.history().size());
  for (std::size_t i = 0; i < full.history().size(); ++i) EXPECT_EQ(resumed.history()[i], full.history()[i]);
}

TEST(Checkpoint, CorruptBlobIsDetected) {
  const auto dir = scratch("corrupt");
  const auto st = initial_state(small_config());
  st.last.save((dir / "c.json").string());
  auto bytes = read_file((dir / "c.bin").string());
  bytes[3] ^= 1;
  write_file((dir / "c.bin").string(), bytes);
  EXPECT_THROW(Checkpoint::load((dir / "c.json").string()), DataIntegrity);
  write_file((dir / "c.json").string(), "{not json");
  EXPECT_THROW(Checkpoint::load((dir / "c.json").string()), ParseError);
}

TEST(Evaluate, RepeatableAndTransferLeavesBytesUnchanged) {
  const auto f = small_fixture();
  const auto r = train(small_config(), f.ds, f.manifest);
  const Model m = restore_model(r.best);
  const auto a = evaluate(m, f.ds, f.manifest.test);
  const auto b = evaluate(m, f.ds, f.manifest.test);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.n_instances, f.manifest.test.size());

  PlantedOptions o;
  o.n_drugs = 12;
  o.n_pairs = 30;
  o.seed = 99;
  const auto other = planted_dataset(o);
  std::vector<std::string> ids;
  for (const auto& rec : other.records()) ids.push_back(rec.pair_id);
  const std::string before = r.best.blob();
  const auto t = evaluate_transfer(r.best, other, ids);
  EXPECT_EQ(r.best.blob(), before);
  EXPECT_EQ(t.n_instances, ids.size());
  EXPECT_THROW(evaluate_transfer(r.best, small_fixture(LabelSpace::binary(true)).ds, ids), ConfigError);
}

}  // namespace
}  // namespace pairrel
