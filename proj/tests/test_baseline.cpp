#include <gtest/gtest.h>

#include "support.hpp"

using namespace powerdyad;

namespace {

Email note(std::string body, std::string from = "a", std::string to = "b") {
  Email e;
  e.id = body;
  e.thread_id = "t";
  e.sender = std::move(from);
  e.recipients = {std::move(to)};
  e.body = std::move(body);
  return e;
}

std::map<std::uint32_t, double> dense(const SparseVector& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Ngrams, HandEnumeratedTwoEmailInstance) {
  DyadInstance inst;
  inst.emails_a_to_b = {note("Send report"), note("send it")};
  NgramVectorizer v;
  v.set_vocabulary({"it", "report", "send", "send it", "send report", "report send", "zebra"});
  // sorted vocabulary: it=0 report=1 report send=2 send=3 send it=4 send report=5 zebra=6
  const auto x = featurize_pair(inst, v);
  const std::map<std::uint32_t, double> expected{{0, 1.0}, {1, 1.0}, {2, 1.0}, {3, 2.0}, {4, 1.0}, {5, 1.0}};
  EXPECT_EQ(dense(x), expected);

  v.weighting = NgramWeighting::binary;
  EXPECT_EQ(dense(featurize_pair(inst, v)).at(3), 1.0);
}

TEST(Ngrams, EmptyDirectionBlockIsZero) {
  DyadInstance inst;
  inst.emails_a_to_b = {note("please send")};
  NgramVectorizer v;
  v.set_vocabulary({"please", "send"});
  for (const auto& [col, val] : featurize_pair(inst, v)) EXPECT_LT(col, v.size());
  inst.emails_b_to_a = {note("send", "b", "a")};
  const auto x = featurize_pair(inst, v);
  ASSERT_EQ(x.size(), 3u);
  EXPECT_EQ(x.back().first, v.size() + 1);
}

TEST(Ngrams, UnseenTokensGiveZeroBlocks) {
  DyadInstance inst;
  inst.emails_a_to_b = {note("qqq rrr")};
  inst.emails_b_to_a = {note("sss", "b", "a")};
  NgramVectorizer v;
  v.set_vocabulary({"please", "send"});
  EXPECT_TRUE(featurize_pair(inst, v).empty());
}

TEST(Ngrams, FitKeepsMostFrequent) {
  DyadInstance inst;
  inst.emails_a_to_b = {note("x x x y y z")};
  NgramVectorizer v;
  v.n_max = 1;
  v.max_features = 2;
  v.fit(std::vector<DyadInstance>{inst});
  EXPECT_EQ(v.ngrams(), (std::vector<std::string>{"x", "y"}));
}

TEST(Ngrams, StructuralBlock) {
  const auto inst = synthetic::planted_markers(20, 2);
  NgramVectorizer v;
  v.fit(inst);
  const auto st = Standardizer::fit(inst);
  for (const auto& i : inst) {
    const auto x = featurize_pair(i, v, &st);
    for (std::size_t k = 1; k < x.size(); ++k) EXPECT_LT(x[k - 1].first, x[k].first);
    for (const auto& [col, val] : x) EXPECT_LT(col, 2 * v.size() + 6);
  }
}

TEST(Baseline, SeparableSetFullTrainAccuracy) {
  const auto train_set = synthetic::planted_markers(40, 5);
  const auto dev_set = synthetic::planted_markers(20, 6);
  const auto r = train_baseline(train_set, dev_set);
  std::size_t ok = 0;
  for (const auto& inst : train_set) ok += predicted_label(r.model.probability(inst)) == inst.label;
  EXPECT_EQ(ok, train_set.size());
  EXPECT_EQ(r.c_scores.size(), 5u);
  EXPECT_GE(r.dev_accuracy, 0.9);
}

TEST(Baseline, SingleClassIsDataError) {
  auto train_set = synthetic::planted_markers(10, 5);
  for (auto& i : train_set) i.label = 1;
  EXPECT_THROW(train_baseline(train_set, train_set), DataError);
}

TEST(Baseline, SerializationRoundTrip) {
  const auto train_set = synthetic::planted_markers(30, 7);
  const auto dev_set = synthetic::planted_markers(10, 8);
  const auto r = train_baseline(train_set, dev_set);
  const auto text = r.model.serialize();
  const auto back = BaselineModel::parse(text);
  EXPECT_EQ(back.serialize(), text);
  for (const auto& inst : dev_set) EXPECT_EQ(back.decision(inst), r.model.decision(inst));
  EXPECT_THROW(BaselineModel::parse(text.substr(0, text.size() / 2)), DataError);
  EXPECT_THROW(BaselineModel::parse("powerdyad-baseline 9\n"), DataError);
}

TEST(Baseline, Deterministic) {
  const auto train_set = synthetic::planted_markers(30, 9);
  const auto dev_set = synthetic::planted_markers(10, 10);
  EXPECT_EQ(train_baseline(train_set, dev_set).model.serialize(), train_baseline(train_set, dev_set).model.serialize());
}

TEST(Baseline, SvmSolvesTinyProblem) {
  // Two points on a line; the max-margin separator puts the boundary between them.
  std::vector<SparseVector> xs{{{0, 1.0}}, {{0, -1.0}}};
  const auto m = LinearSvm::fit(xs, {1, 0}, 1, 100.0, 1000, 1e-9, 0);
  EXPECT_GT(m.decision(xs[0]), 0.0);
  EXPECT_LT(m.decision(xs[1]), 0.0);
  EXPECT_NEAR(m.decision(xs[0]), 1.0, 1e-6);
}

TEST(Baseline, OptionsFromJson) {
  const auto o = baseline_options_from_json({{"ngram_range", {1, 1}}, {"weighting", "binary"}, {"c_grid", {0.5}}});
  EXPECT_EQ(o.n_max, 1);
  EXPECT_EQ(o.weighting, NgramWeighting::binary);
  EXPECT_EQ(o.c_grid, std::vector<double>{0.5});
  EXPECT_THROW(baseline_options_from_json({{"c_grid", nlohmann::json::array()}}), UsageError);
}
