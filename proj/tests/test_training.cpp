#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"

using namespace powerdyad;
using testing_support::toy_model;

namespace {

TrainConfig quick_train(int epochs = 8) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.min_epochs = std::min(3, epochs);
  t.patience = 3;
  t.batch_size = 8;
  t.learning_rate = 1e-2;
  t.seed = 4;
  return t;
}

double accuracy_of(const Checkpoint& ck, std::shared_ptr<const EmbeddingTable> table,
                   const std::vector<DyadInstance>& set) {
  const auto model = ck.instantiate(table);
  const FeatureBuilder b(table, ck.model, ck.standardizer);
  std::size_t ok = 0;
  for (const auto& inst : set) ok += predicted_label(model.score(b.build(inst)).probability) == inst.label;
  return static_cast<double>(ok) / static_cast<double>(set.size());
}

}  // namespace

TEST(EarlyStopping, PatienceArithmetic) {
  EarlyStopping s(30, 70, 5);
  int stopped = 0;
  for (int e = 1; e <= 70; ++e) {
    const double acc = e <= 31 ? 0.5 + e * 0.01 : 0.81 - (e - 31) * 0.001;
    s.observe(e, acc);
    if (s.should_stop()) {
      stopped = e;
      break;
    }
  }
  EXPECT_EQ(stopped, 36);
  EXPECT_EQ(s.best_epoch(), 31);
}

TEST(EarlyStopping, FloorAndCeiling) {
  EarlyStopping s(10, 12, 2);
  s.observe(1, 0.9);
  for (int e = 2; e <= 9; ++e) {
    s.observe(e, 0.1);
    EXPECT_FALSE(s.should_stop()) << e;
  }
  s.observe(10, 0.1);
  EXPECT_TRUE(s.should_stop());
  EarlyStopping c(1, 3, 100);
  for (int e = 1; e <= 3; ++e) c.observe(e, e);
  EXPECT_TRUE(c.should_stop());
  EXPECT_EQ(c.best_epoch(), 3);
}

TEST(EarlyStopping, TiesKeepEarliest) {
  EarlyStopping s(0, 10, 3);
  s.observe(1, 0.7);
  s.observe(2, 0.7);
  EXPECT_EQ(s.best_epoch(), 1);
}

TEST(Train, SeparableSetReachesFullTrainAccuracy) {
  const auto train_set = synthetic::planted_markers(20, 31);
  const auto dev_set = synthetic::planted_markers(10, 32);
  auto all = train_set;
  all.insert(all.end(), dev_set.begin(), dev_set.end());
  // Separability is established first with the linear baseline.
  BaselineOptions bo;
  bo.c_grid = {10.0};
  const auto lin = train_baseline(train_set, dev_set, bo);
  std::size_t lin_ok = 0;
  for (const auto& inst : train_set) lin_ok += predicted_label(lin.model.probability(inst)) == inst.label;
  ASSERT_EQ(lin_ok, train_set.size());

  const auto table = testing_support::table_for(all, 8);
  auto c = toy_model(Architecture::separated_cnn, 8);
  c.conv_filters = 8;
  auto t = quick_train(30);
  t.min_epochs = 30;
  t.patience = 30;
  const auto r = train(c, t, train_set, dev_set, table);
  EXPECT_LE(r.record.epochs.size(), 30u);
  EXPECT_EQ(accuracy_of(r.checkpoint, table, train_set), 1.0);
}

TEST(Train, Determinism) {
  const auto all = synthetic::planted_markers(40, 8);
  const auto table = testing_support::table_for(all, 6);
  const std::vector<DyadInstance> tr(all.begin(), all.begin() + 30), dv(all.begin() + 30, all.end());
  for (auto arch : {Architecture::batched_cnn, Architecture::separated_cnn, Architecture::sequential_cnn_lstm}) {
    auto c = toy_model(arch);
    c.dropout_rate = 0.2;
    const auto a = train(c, quick_train(4), tr, dv, table);
    const auto b = train(c, quick_train(4), tr, dv, table);
    EXPECT_EQ(a.record.to_json().dump(), b.record.to_json().dump());
    EXPECT_EQ(a.checkpoint.serialize(), b.checkpoint.serialize());
    auto other = quick_train(4);
    other.seed = 5;
    EXPECT_NE(train(c, other, tr, dv, table).checkpoint.serialize(), a.checkpoint.serialize());
  }
}

TEST(Train, RecordRoundTrip) {
  const auto all = synthetic::planted_markers(20, 9);
  const auto table = testing_support::table_for(all, 6);
  const std::vector<DyadInstance> tr(all.begin(), all.begin() + 15), dv(all.begin() + 15, all.end());
  const auto r = train(toy_model(Architecture::separated_cnn), quick_train(3), tr, dv, table);
  const auto back = TrainRecord::from_json(r.record.to_json());
  EXPECT_EQ(back.to_json(), r.record.to_json());
  EXPECT_EQ(r.record.best_dev_accuracy,
            std::max_element(r.record.epochs.begin(), r.record.epochs.end(), [](auto& x, auto& y) {
              return x.dev_accuracy < y.dev_accuracy;
            })->dev_accuracy);
}

TEST(Train, CheckpointReproducesBestDevAccuracy) {
  const auto all = synthetic::planted_markers(40, 10);
  const auto table = testing_support::table_for(all, 6);
  const std::vector<DyadInstance> tr(all.begin(), all.begin() + 28), dv(all.begin() + 28, all.end());
  const auto r = train(toy_model(Architecture::sequential_cnn_lstm), quick_train(6), tr, dv, table);
  EXPECT_EQ(accuracy_of(r.checkpoint, table, dv), r.record.best_dev_accuracy);
}

TEST(Train, SplitContracts) {
  const auto all = synthetic::planted_markers(10, 1);
  const auto table = testing_support::table_for(all, 6);
  const auto c = toy_model(Architecture::separated_cnn);
  EXPECT_THROW(train(c, quick_train(), all, all, table), DataError);
  EXPECT_THROW(train(c, quick_train(), {}, all, table), UsageError);
  auto bad = quick_train();
  bad.batch_size = 0;
  EXPECT_THROW(train(c, bad, std::span(all).first(5), std::span(all).last(5), table), UsageError);
}

TEST(Train, NonFiniteLossNamesBatch) {
  const auto all = synthetic::planted_markers(12, 2);
  const auto table = testing_support::table_for(all, 6);
  auto t = quick_train(2);
  t.learning_rate = std::numeric_limits<double>::max();
  try {
    train(toy_model(Architecture::separated_cnn), t, std::span(all).first(8), std::span(all).last(4), table);
    FAIL() << "expected a numerical failure";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("syn|2|"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripAndFingerprint) {
  const auto all = synthetic::planted_markers(16, 3);
  const auto table = testing_support::table_for(all, 6);
  const auto r = train(toy_model(Architecture::sequential_cnn_lstm), quick_train(2), std::span(all).first(12),
                       std::span(all).last(4), table);
  const auto bytes = r.checkpoint.serialize();
  const auto back = Checkpoint::parse(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.model, r.checkpoint.model);
  EXPECT_EQ(back.standardizer, r.checkpoint.standardizer);
  const auto other = testing_support::table_for(all, 6, 999);
  EXPECT_THROW(back.instantiate(other), DataError);
  EXPECT_THROW(Checkpoint::parse(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(Checkpoint::parse("garbage"), DataError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::ParameterSet p;
  p.add("w", 2, 1);
  p[0] << 1.0, -1.0;
  auto g = p.zeros_like();
  g[0] << 0.5, -3.0;
  nn::Adam adam(p, 0.1);
  adam.step(p, g);
  // Bias-corrected first step is lr * sign(g) up to eps.
  EXPECT_NEAR(p[0](0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p[0](1, 0), -0.9, 1e-7);
}

// -- tuning -----------------------------------------------------------------

namespace {

struct TuneFixture {
  std::vector<DyadInstance> all = synthetic::planted_markers(36, 12);
  std::vector<DyadInstance> tr{all.begin(), all.begin() + 24};
  std::vector<DyadInstance> dv{all.begin() + 24, all.end()};
  std::shared_ptr<const EmbeddingTable> table = testing_support::table_for(all, 6);
};

}  // namespace

TEST(Tune, BudgetOneIsSingleRankedTrial) {
  TuneFixture fx;
  SearchSpace s;
  s.dense_hidden = {3, 5, 7};
  const auto r = tune(s, toy_model(Architecture::separated_cnn), quick_train(3), 1, fx.tr, fx.dv, fx.table, 1);
  ASSERT_EQ(r.trials.size(), 1u);
  ASSERT_EQ(r.ranked.size(), 1u);
  EXPECT_EQ(r.ranked[0].id, r.trials[0].id);
  EXPECT_TRUE(r.ranked[0].ok);
}

TEST(Tune, DropoutOnlyTrialsRankDeterministically) {
  TuneFixture fx;
  SearchSpace s;
  s.dropout_rate = {0.0, 0.3};
  auto run = [&] {
    const auto r = tune(s, toy_model(Architecture::separated_cnn), quick_train(3), 2, fx.tr, fx.dv, fx.table, 6);
    std::vector<std::string> out;
    for (const auto& t : r.ranked) out.push_back(t.log_record().dump());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tune, TwoByTwoGridMatchesManualRuns) {
  TuneFixture fx;
  SearchSpace s;
  s.dense_hidden = {3, 6};
  s.learning_rate = {1e-2, 3e-3};
  const auto base_m = toy_model(Architecture::separated_cnn);
  const auto base_t = quick_train(4);
  const auto r = tune(s, base_m, base_t, 10, fx.tr, fx.dv, fx.table, 77);
  ASSERT_EQ(r.trials.size(), 4u);

  // Oracle: enumerate the grid by hand and train each point independently.
  struct Manual {
    double acc;
    std::size_t params;
    std::uint64_t hash;
    int dense;
    double lr;
  };
  std::vector<Manual> manual;
  for (int dh : {3, 6})
    for (double lr : {1e-2, 3e-3}) {
      auto m = base_m;
      m.dense_hidden = dh;
      auto t = base_t;
      t.learning_rate = lr;
      const auto res = train(m, t, fx.tr, fx.dv, fx.table);
      manual.push_back({res.record.best_dev_accuracy, PowerModel(m, fx.table).parameter_count(), config_hash(m, t), dh, lr});
    }
  std::sort(manual.begin(), manual.end(), [](const Manual& x, const Manual& y) {
    if (x.acc != y.acc) return x.acc > y.acc;
    if (x.params != y.params) return x.params < y.params;
    return x.hash < y.hash;
  });
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.ranked[i].model.dense_hidden, manual[i].dense) << i;
    EXPECT_EQ(r.ranked[i].train.learning_rate, manual[i].lr) << i;
    EXPECT_EQ(r.ranked[i].dev_accuracy, manual[i].acc) << i;
  }
}

TEST(Tune, ParallelWorkersGiveSameResult) {
  TuneFixture fx;
  SearchSpace s;
  s.conv_filters = {2, 3};
  s.batch_size = {4, 8};
  const auto m = toy_model(Architecture::separated_cnn);
  const auto a = tune(s, m, quick_train(2), 4, fx.tr, fx.dv, fx.table, 3, 1);
  const auto b = tune(s, m, quick_train(2), 4, fx.tr, fx.dv, fx.table, 3, 3);
  ASSERT_EQ(a.ranked.size(), b.ranked.size());
  for (std::size_t i = 0; i < a.ranked.size(); ++i) EXPECT_EQ(a.ranked[i].log_record(), b.ranked[i].log_record());
}

TEST(Tune, OrderingRules) {
  Trial ok_low, ok_high, failed, small;
  ok_low.ok = ok_high.ok = small.ok = true;
  ok_low.dev_accuracy = 0.6;
  ok_high.dev_accuracy = 0.8;
  ok_high.parameter_count = 100;
  small.dev_accuracy = 0.8;
  small.parameter_count = 50;
  failed.dev_accuracy = 0.99;
  std::vector<Trial> v{failed, ok_low, ok_high, small};
  std::sort(v.begin(), v.end(), trial_ranks_before);
  EXPECT_EQ(v[0].parameter_count, 50u);
  EXPECT_EQ(v[1].parameter_count, 100u);
  EXPECT_EQ(v[2].dev_accuracy, 0.6);
  EXPECT_FALSE(v[3].ok);
}

TEST(Tune, GridDecodingCoversEveryPoint) {
  SearchSpace s;
  s.dense_hidden = {1, 2, 3};
  s.learning_rate = {0.1, 0.2};
  s.conv_activation = {nn::Activation::relu, nn::Activation::tanh};
  ASSERT_EQ(s.grid_size(), 12u);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < 12; ++i) {
    const auto [m, t] = s.point(i, ModelConfig{}, TrainConfig{});
    seen.insert(std::to_string(m.dense_hidden) + nn::to_string(m.conv_activation) + std::to_string(t.learning_rate));
  }
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_THROW(search_space_from_json({{"dense_hidden", "x"}}), UsageError);
}
