#include <gtest/gtest.h>

#include <sstream>

#include "memaudit/cli.hpp"
#include "memaudit/error.hpp"
#include "memaudit/manifest.hpp"
#include "memaudit/results_io.hpp"
#include "support.hpp"

using namespace memaudit;
using nlohmann::json;
using testsupport::read_file;
using testsupport::TempDir;
using testsupport::write_file;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Corpus of `n` documents per domain, each 240 tokens long.
void write_corpus(const std::filesystem::path& p, int n = 3,
                  std::vector<std::string> domains = {"c4", "github"}) {
  std::string lines;
  for (const auto& d : domains)
    for (int i = 0; i < n; ++i)
      lines += json{{"id", d + std::to_string(i)},
                    {"domain", d},
                    {"text", testsupport::words(d + std::to_string(i) + "w", 240)},
                    {"meta", {{"membership", i % 2 ? "non_member" : "member"}}}}
                   .dump() +
               "\n";
  write_file(p, lines);
}

json simulated_manifest() {
  return json{
      {"corpus", "corpus.jsonl"},
      {"output_dir", "out"},
      {"seq_lens", {200}},
      {"seed", 3},
      {"workers", 2},
      {"endpoints",
       {{"initializer", {{"type", "simulated_initializer"}}},
        {"attacker",
         {{"type", "simulated_attacker"},
          {"seed", 1},
          {"injections", {{{"iteration", 2}, {"candidate_index", 3}, {"text", "xyzzy"}}}}}},
        {"victim",
         {{"type", "simulated_victim"},
          {"memory", "samples"},
          {"trigger_rules", {{{"tokens", {"xyzzy"}}, {"emit", "suffix"}}}},
          {"default_output", "I'm sorry, I can't recall it."}}}}},
      {"attack", {{"n_candidates", 6}, {"iterations", 3}}}};
}

std::string write_manifest(const TempDir& dir, const json& m) {
  write_file(dir / "manifest.json", m.dump(2));
  return (dir / "manifest.json").string();
}

}  // namespace

TEST(Manifest, RejectsUnknownKeys) {
  auto m = simulated_manifest();
  m["atack"] = json::object();
  try {
    RunManifest::parse(m, ".");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("atack"), std::string::npos);
  }
  m = simulated_manifest();
  m["endpoints"]["victim"]["colour"] = 1;
  EXPECT_THROW(RunManifest::parse(m, "."), ValidationError);
}

TEST(Manifest, ResolvesPathsAndAlpha) {
  auto m = simulated_manifest();
  m["alpha_schedule"] = {{"c4", {{"200", 0.7}}}};
  m["default_alpha"] = 0.25;
  auto parsed = RunManifest::parse(m, "/base");
  EXPECT_EQ(parsed.corpus, std::filesystem::path("/base/corpus.jsonl"));
  EXPECT_EQ(parsed.output_dir, std::filesystem::path("/base/out"));
  PretrainSample c4("x", "c4", 200, "a", "b");
  PretrainSample wiki("y", "wiki", 200, "a", "b");
  PretrainSample books("z", "books", 200, "a", "b");
  EXPECT_EQ(parsed.alpha_for(c4), 0.7);
  EXPECT_EQ(parsed.alpha_for(books), 0.2);
  EXPECT_EQ(parsed.alpha_for(wiki), 0.25);
  parsed.alpha_override = 0.9;
  EXPECT_EQ(parsed.alpha_for(wiki), 0.9);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({}).code, kExitValidation);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitValidation);
  EXPECT_EQ(cli({"attack"}).code, kExitValidation);
}

TEST(Cli, SplitReportsSkipped) {
  TempDir dir;
  write_corpus(dir / "c.jsonl", 2);
  auto r = cli({"split", "--input", (dir / "c.jsonl").string(), "--seq-len", "200", "--out",
                (dir / "s.jsonl").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("skipped 0"), std::string::npos);
  EXPECT_EQ(load_samples(dir / "s.jsonl").size(), 4u);
  r = cli({"split", "--input", (dir / "c.jsonl").string(), "--seq-len", "300", "--out",
           (dir / "s3.jsonl").string()});
  EXPECT_NE(r.out.find("skipped 4"), std::string::npos);
  write_file(dir / "bad.jsonl", "{\"id\":1}\n");
  EXPECT_EQ(cli({"split", "--input", (dir / "bad.jsonl").string(), "--seq-len", "200", "--out",
                 (dir / "x.jsonl").string()})
                .code,
            kExitValidation);
}

TEST(Cli, AttackEndToEndIsReproducible) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl");
  const auto manifest = write_manifest(dir, simulated_manifest());
  auto r = cli({"attack", "--manifest", manifest});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("6 of 6 samples succeeded"), std::string::npos) << r.out;
  const auto first = read_file(dir / "out/results.jsonl");
  auto file = read_results(dir / "out/results.jsonl");
  ASSERT_EQ(file.results.size(), 6u);
  for (const auto& res : file.results) {
    EXPECT_DOUBLE_EQ(*res.best_score.mem, 1.0);
    EXPECT_EQ(res.scored_prompt_count(), 19u);
  }
  auto csv = read_file(dir / "out/metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricCsvHeader);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/summary.csv"));

  ASSERT_EQ(cli({"attack", "--manifest", manifest, "--workers", "1"}).code, kExitOk);
  EXPECT_EQ(read_file(dir / "out/results.jsonl"), first);
}

TEST(Cli, MissingAlphaFailsBeforeAnyRequest) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 1, {"wiki"});
  auto r = cli({"attack", "--manifest", write_manifest(dir, simulated_manifest())});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("wiki"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "out/results.jsonl"));
  EXPECT_EQ(cli({"attack", "--manifest", (dir / "manifest.json").string(), "--alpha", "0.3"}).code,
            kExitOk);
}

TEST(Cli, MissingApiKeyIsValidationError) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 1);
  auto m = simulated_manifest();
  m["endpoints"]["victim"] = {{"type", "openai"},
                              {"base_url", "http://127.0.0.1:1"},
                              {"model", "m"},
                              {"api_key_env", "MEMAUDIT_DEFINITELY_UNSET"}};
  auto r = cli({"attack", "--manifest", write_manifest(dir, m)});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("MEMAUDIT_DEFINITELY_UNSET"), std::string::npos);
}

TEST(Cli, AllSamplesFailingIsRuntimeError) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 1);
  auto m = simulated_manifest();
  m["endpoints"]["victim"] = {{"type", "openai"},
                              {"base_url", "http://127.0.0.1:1"},
                              {"model", "m"},
                              {"max_retries", 0},
                              {"timeout", 1}};
  auto r = cli({"attack", "--manifest", write_manifest(dir, m)});
  EXPECT_EQ(r.code, kExitRuntime);
  auto file = read_results(dir / "out/results.jsonl");
  EXPECT_EQ(file.errors.size(), 2u);
}

TEST(Cli, BaselineWithEmptySamples) {
  TempDir dir;
  write_file(dir / "samples.jsonl", "");
  auto m = simulated_manifest();
  m.erase("corpus");
  m["samples"] = "samples.jsonl";
  auto r = cli({"baseline", "--manifest", write_manifest(dir, m)});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_file(dir / "out/baseline_metrics.csv"), std::string(kMetricCsvHeader) + "\n");
}

TEST(Cli, BaselineOnCorpus) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 2);
  auto r = cli({"baseline", "--manifest", write_manifest(dir, simulated_manifest())});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto file = read_results(dir / "out/baseline_results.jsonl");
  ASSERT_EQ(file.results.size(), 4u);
  for (const auto& res : file.results) EXPECT_EQ(res.method, Method::prefix_suffix);
  // default output is a refusal under the keyword list
  const auto summary = read_file(dir / "out/baseline_summary.csv");
  EXPECT_NE(summary.find("c4,200,prefix_suffix,"), std::string::npos) << summary;
  EXPECT_NE(summary.find("1.0000,2\ngithub"), std::string::npos) << summary;
}

TEST(Cli, CalibrateWritesChoice) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 5);
  auto r = cli({"calibrate", "--manifest", write_manifest(dir, simulated_manifest()), "--alphas",
                "0.2,0.4,0.6", "--fraction", "0.2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto doc = json::parse(read_file(dir / "out/calibration.json"));
  EXPECT_EQ(doc["subset_size"], 2);
  EXPECT_EQ(doc["means"].size(), 3u);
  EXPECT_NE(r.out.find("selected alpha"), std::string::npos);
}

TEST(Cli, ClassifierPipeline) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 6, {"c4"});
  const auto manifest = write_manifest(dir, simulated_manifest());
  ASSERT_EQ(cli({"attack", "--manifest", manifest}).code, kExitOk);
  const auto results = (dir / "out/results.jsonl").string();
  const auto prefs = (dir / "prefs.jsonl").string();
  auto r = cli({"collect-prefs", "--results", results, "--out", prefs});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("18 T, 90 NT"), std::string::npos) << r.out;

  const auto model = (dir / "m.bin").string();
  r = cli({"train-clf", "--prefs", prefs, "--out", model, "--dimension", "4096", "--seed", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("trained on"), std::string::npos);
  r = cli({"eval-clf", "--model", model, "--prefs", prefs});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("macro-F1"), std::string::npos);

  r = cli({"analyze", "--results", results, "--mode", "ngram", "--n-max", "2", "-k", "3"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  ASSERT_EQ(cli({"baseline", "--manifest", manifest}).code, kExitOk);
  r = cli({"analyze", "--results", results, (dir / "out/baseline_results.jsonl").string(),
           "--mode", "score-stats", "--field", "mem", "--out", (dir / "stats.json").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  auto stats = json::parse(read_file(dir / "stats.json"));
  EXPECT_EQ(stats["pairs"], 6);
}

TEST(Cli, TrainRefusesMixedDomains) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 2);
  ASSERT_EQ(cli({"attack", "--manifest", write_manifest(dir, simulated_manifest())}).code, kExitOk);
  const auto prefs = (dir / "p.jsonl").string();
  ASSERT_EQ(cli({"collect-prefs", "--results", (dir / "out/results.jsonl").string(), "--out", prefs})
                .code,
            kExitOk);
  EXPECT_EQ(cli({"train-clf", "--prefs", prefs, "--out", (dir / "m.bin").string()}).code,
            kExitValidation);
  EXPECT_EQ(cli({"train-clf", "--prefs", prefs, "--out", (dir / "m.bin").string(), "--domain",
                 "github", "--dimension", "1024"})
                .code,
            kExitOk);
}

TEST(Cli, BadInputPathFails) {
  auto r = cli({"split", "--input", "/nonexistent/c.jsonl", "--seq-len", "200", "--out", "/tmp/x"});
  EXPECT_NE(r.code, kExitOk);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, ClassifierScorerNeedsModel) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 1);
  auto m = simulated_manifest();
  m["attack"]["scorer"] = "classifier";
  m["attack"]["init_mode"] = "prefix_only";
  auto r = cli({"attack", "--manifest", write_manifest(dir, m)});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, AlphaOverrideReachesEveryScore) {
  TempDir dir;
  write_corpus(dir / "corpus.jsonl", 1);
  const auto manifest = write_manifest(dir, simulated_manifest());
  ASSERT_EQ(cli({"attack", "--manifest", manifest, "--alpha", "1.0"}).code, kExitOk);
  for (const auto& r : read_results(dir / "out/results.jsonl").results) {
    EXPECT_EQ(r.alpha, 1.0);
    for (const auto& it : r.trace)
      for (const auto& s : it.scores) EXPECT_DOUBLE_EQ(s.objective, *s.mem);
  }
}
