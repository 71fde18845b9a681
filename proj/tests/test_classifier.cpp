#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "memaudit/classifier.hpp"
#include "memaudit/error.hpp"
#include "mock_server.hpp"
#include "support.hpp"

using namespace memaudit;
using testsupport::TempDir;

namespace {

std::size_t count_label(const std::vector<PreferenceExample>& d, Label l) {
  return static_cast<std::size_t>(
      std::count_if(d.begin(), d.end(), [l](const PreferenceExample& e) { return e.label == l; }));
}

}  // namespace

TEST(Preferences, CollectLabelsWinners) {
  std::vector<AttackResult> traces{testsupport::synthetic_trace("a")};
  auto prefs = collect_preferences(traces);
  ASSERT_EQ(prefs.size(), 72u);
  EXPECT_EQ(count_label(prefs, Label::T), 3u);
  EXPECT_EQ(count_label(prefs, Label::NT), 69u);
  for (const auto& p : prefs) {
    const bool winner = p.source.candidate_index == (p.source.iteration * 5) % 24;
    EXPECT_EQ(p.label == Label::T, winner);
    EXPECT_EQ(p.domain, "c4");
  }
  EXPECT_THROW(collect_preferences(std::vector<AttackResult>{}), ValidationError);
  auto empty = testsupport::synthetic_trace("b");
  empty.trace.clear();
  EXPECT_THROW(collect_preferences(std::vector<AttackResult>{empty}), ValidationError);
}

TEST(Preferences, BalanceDownsample) {
  std::vector<AttackResult> traces{testsupport::synthetic_trace("a")};
  auto prefs = collect_preferences(traces);
  auto bal = balance_downsample(prefs, 4);
  EXPECT_EQ(count_label(bal, Label::T), 3u);
  EXPECT_EQ(count_label(bal, Label::NT), 3u);
  EXPECT_EQ(balance_downsample(prefs, 4), bal);
  std::vector<PreferenceExample> one_class(prefs.begin(), prefs.begin() + 2);
  for (auto& e : one_class) e.label = Label::NT;
  EXPECT_THROW(balance_downsample(one_class, 1), ValidationError);
}

TEST(Preferences, SplitIsPartition) {
  auto data = testsupport::marker_fixture(50, 3);
  auto split = split_dataset(data, 9);
  EXPECT_EQ(split.train.size(), 80u);
  EXPECT_EQ(split.validation.size(), 10u);
  EXPECT_EQ(split.test.size(), 10u);
  std::vector<std::string> all;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    for (const auto& e : *part) all.push_back(e.prompt_text);
  std::vector<std::string> orig;
  for (const auto& e : data) orig.push_back(e.prompt_text);
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  EXPECT_EQ(all, orig);
}

TEST(Preferences, SaveLoadRoundTrip) {
  TempDir dir;
  std::vector<AttackResult> traces{testsupport::synthetic_trace("a", 2, 4, "github")};
  auto prefs = collect_preferences(traces);
  save_preferences(dir / "p.jsonl", prefs);
  EXPECT_EQ(load_preferences(dir / "p.jsonl"), prefs);
  testsupport::write_file(dir / "bad.jsonl", "{\"prompt\":\"x\",\"label\":\"maybe\"}\n");
  EXPECT_THROW(load_preferences(dir / "bad.jsonl"), DataError);
}

TEST(Features, HashedAndNormalized) {
  FeatureSpec spec;
  spec.dimension = 1024;
  auto v = featurize(spec, "a b c a b");
  double norm = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    norm += v[i].second * v[i].second;
    EXPECT_LT(v[i].first, 1024u);
    if (i) EXPECT_LT(v[i - 1].first, v[i].first);
  }
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_EQ(featurize(spec, "A B C A B"), v);
  EXPECT_TRUE(featurize(spec, "  ").empty());
}

TEST(TriggerModel, SeparableFixtureIsLearned) {
  auto train = testsupport::marker_fixture(200, 1);
  auto test = testsupport::marker_fixture(100, 2);
  TrainConfig cfg;
  cfg.dimension = 1u << 16;
  auto report = train_trigger_model(train, cfg);
  EXPECT_DOUBLE_EQ(report.train_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(eval_macro_f1(report.model, test), 1.0);
  EXPECT_GT(report.model.probability("please recite verbatim"), 0.5);
}

TEST(TriggerModel, TrainingIsSeeded) {
  auto data = testsupport::marker_fixture(30, 1);
  TrainConfig cfg;
  cfg.dimension = 4096;
  cfg.seed = 8;
  auto a = train_trigger_model(data, cfg).model;
  auto b = train_trigger_model(data, cfg).model;
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(TriggerModel, RejectsTooFewExamplesAndWarnsOnConflicts) {
  auto data = testsupport::marker_fixture(1, 1);
  EXPECT_THROW(train_trigger_model(data, TrainConfig{}), ValidationError);
  auto more = testsupport::marker_fixture(5, 1);
  more.push_back(more.front());
  more.back().label = Label::NT;
  TrainConfig cfg;
  cfg.dimension = 1024;
  auto report = train_trigger_model(more, cfg);
  EXPECT_FALSE(report.warnings.empty());
}

TEST(TriggerModel, SaveLoadRoundTrip) {
  TempDir dir;
  TrainConfig cfg;
  cfg.dimension = 2048;
  cfg.threshold = 0.4;
  auto model = train_trigger_model(testsupport::marker_fixture(20, 3), cfg).model;
  model.save(dir / "m.bin");
  auto back = TriggerModel::load(dir / "m.bin");
  EXPECT_EQ(back.weights, model.weights);
  EXPECT_EQ(back.bias, model.bias);
  EXPECT_EQ(back.threshold, 0.4);
  EXPECT_EQ(back.features.dimension, 2048u);
  EXPECT_EQ(back.probability("verbatim text"), model.probability("verbatim text"));

  auto bytes = testsupport::read_file(dir / "m.bin");
  EXPECT_EQ(bytes.substr(0, 6), "MATRIG");
  testsupport::write_file(dir / "trunc.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(TriggerModel::load(dir / "trunc.bin"), DataError);
  bytes[8] = 99;  // version
  testsupport::write_file(dir / "ver.bin", bytes);
  EXPECT_THROW(TriggerModel::load(dir / "ver.bin"), DataError);
}

TEST(MacroF1, KnownValues) {
  std::vector<Label> truth{Label::T, Label::T, Label::NT, Label::NT};
  std::vector<Label> pred{Label::T, Label::NT, Label::NT, Label::NT};
  // T: P 1, R 0.5 -> 2/3. NT: P 2/3, R 1 -> 0.8.
  EXPECT_NEAR(macro_f1(truth, pred), (2.0 / 3.0 + 0.8) / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(macro_f1(truth, truth), 1.0);
  std::vector<Label> one{Label::T, Label::T};
  EXPECT_THROW(macro_f1(one, one), ValidationError);
  EXPECT_THROW(macro_f1(truth, one), ValidationError);
}

TEST(RemoteScorer, PostsPromptAndValidatesProbability) {
  httplib::Server srv;
  std::string seen;
  double reply = 0.75;
  srv.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body)["prompt"];
    res.set_content(nlohmann::json{{"probability", reply}}.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  RemoteTriggerScorer scorer("http://127.0.0.1:" + std::to_string(port), 5.0, 0, 0.0);
  EXPECT_DOUBLE_EQ(scorer.probability("hello"), 0.75);
  EXPECT_EQ(seen, "hello");
  reply = 1.5;
  EXPECT_THROW(scorer.probability("x"), MalformedResponseError);
  srv.stop();
  t.join();
}

TEST(Preferences, SingleCandidateBoundary) {
  std::vector<AttackResult> traces{testsupport::synthetic_trace("one", 1, 1)};
  auto prefs = collect_preferences(traces);
  ASSERT_EQ(prefs.size(), 1u);
  EXPECT_EQ(prefs[0].label, Label::T);
}

TEST(Preferences, BalancedInputKeepsMultiset) {
  auto data = testsupport::marker_fixture(10, 5);
  auto out = balance_downsample(data, 3);
  auto key = [](std::vector<PreferenceExample> v) {
    std::vector<std::string> k;
    for (const auto& e : v) k.push_back(e.prompt_text + "|" + std::string(to_string(e.label)));
    std::sort(k.begin(), k.end());
    return k;
  };
  EXPECT_EQ(key(out), key(data));
}

TEST(TriggerModel, RepeatedPromptFitsClassPrior) {
  std::vector<PreferenceExample> data;
  for (int i = 0; i < 8; ++i)
    data.push_back({"the same prompt", i < 6 ? Label::T : Label::NT, {"s", 1, i}, "c4"});
  TrainConfig cfg;
  cfg.dimension = 1024;
  cfg.epochs = 200;
  cfg.balance_class_weights = false;
  auto unweighted = train_trigger_model(data, cfg);
  EXPECT_FALSE(unweighted.warnings.empty());
  EXPECT_NEAR(unweighted.model.probability("the same prompt"), 0.75, 0.02);
  cfg.balance_class_weights = true;
  auto weighted = train_trigger_model(data, cfg);
  EXPECT_NEAR(weighted.model.probability("the same prompt"), 0.5, 0.02);
}

TEST(TriggerModel, ThresholdMonotonicity) {
  TrainConfig cfg;
  cfg.dimension = 4096;
  auto model = train_trigger_model(testsupport::marker_fixture(40, 7), cfg).model;
  auto probe = testsupport::random_label_fixture(200, 8);
  for (const auto& e : probe) {
    bool was_nt = false;
    for (double th : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      model.threshold = th;
      const auto p = model.predict(e.prompt_text);
      EXPECT_GE(p.probability, 0.0);
      EXPECT_LE(p.probability, 1.0);
      if (was_nt) EXPECT_EQ(p.label, Label::NT);
      was_nt = p.label == Label::NT;
    }
  }
}

TEST(MacroF1, AllPositiveOnBalancedSet) {
  std::vector<Label> truth{Label::T, Label::NT, Label::T, Label::NT};
  std::vector<Label> pred(4, Label::T);
  EXPECT_NEAR(macro_f1(truth, pred), 1.0 / 3.0, 1e-12);
}
