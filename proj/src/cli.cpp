#include "memaudit/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "memaudit/attack.hpp"
#include "memaudit/classifier.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/error.hpp"
#include "memaudit/manifest.hpp"
#include "memaudit/report.hpp"
#include "memaudit/results_io.hpp"
#include "memaudit/text_metrics.hpp"

namespace memaudit {

namespace {

using nlohmann::json;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

int cmd_split(const std::string& input, int seq_len, const std::string& out_path,
              const std::string& tokenizer, Streams io) {
  const auto mode = tokenizer_mode_from_string(tokenizer);
  const auto docs = load_corpus(input);
  std::vector<PretrainSample> samples;
  std::size_t skipped = 0;
  for (const auto& d : docs) {
    if (token_spans(d.text).size() < static_cast<std::size_t>(std::max(seq_len, 0))) {
      ++skipped;
      continue;
    }
    samples.push_back(split_sample(d, seq_len, mode));
  }
  save_samples(out_path, samples);
  io.out << "split " << docs.size() << " documents into " << samples.size()
         << " samples (prefix " << prefix_budget(seq_len) << " / suffix "
         << (seq_len - static_cast<int>(prefix_budget(seq_len))) << " tokens), skipped "
         << skipped << '\n';
  return kExitOk;
}

std::unique_ptr<RefusalDetector> make_refusal(const RunManifest& m,
                                              std::unique_ptr<ChatModel>& judge_holder,
                                              const std::vector<PretrainSample>& samples) {
  if (m.refusal_mode == RefusalMode::judge) {
    judge_holder = make_model(*m.judge, samples, m.seed);
    return std::make_unique<RefusalDetector>(*judge_holder);
  }
  if (m.refusal_phrases_file)
    return std::make_unique<RefusalDetector>(load_refusal_phrases(*m.refusal_phrases_file));
  return std::make_unique<RefusalDetector>();
}

// Writes <prefix>results.jsonl, <prefix>metrics.csv and <prefix>summary.csv.
void write_run_outputs(const RunManifest& m, const std::string& prefix, const std::string& command,
                       const std::vector<PretrainSample>& samples,
                       const std::vector<SampleOutcome>& outcomes, Streams io) {
  std::filesystem::create_directories(m.output_dir);
  const auto summary = summarize(command, outcomes);
  write_results(m.output_dir / (prefix + "results.jsonl"), outcomes, summary);

  std::unique_ptr<ChatModel> judge;
  const auto refusal = make_refusal(m, judge, samples);
  std::vector<MetricRow> rows;
  std::size_t unscored = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].result) continue;
    if (samples[i].suffix_withheld()) {
      ++unscored;
      continue;
    }
    rows.push_back(compute_metrics(*outcomes[i].result, samples[i], *refusal));
  }
  export_rows(rows, ExportFormat::csv, m.output_dir / (prefix + "metrics.csv"));
  if (!rows.empty())
    export_table(aggregate(rows, {"domain", "seq_len", "method"}), ExportFormat::csv,
                 m.output_dir / (prefix + "summary.csv"));

  io.out << command << ": " << summary.succeeded << " of " << summary.samples
         << " samples succeeded, " << summary.failed << " failed";
  if (!rows.empty()) {
    const auto all = aggregate(rows, {}).groups.front();
    io.out << "; mean mem " << format_fixed4(all.mean_mem) << ", mean lcs_p "
           << format_fixed4(all.mean_lcs_p) << ", refusal rate "
           << format_fixed4(all.refusal_rate);
  }
  if (unscored > 0) io.out << "; " << unscored << " without ground truth";
  io.out << '\n';
  for (const auto& o : outcomes)
    if (!o.result) io.err << "sample " << o.sample_id << " failed: " << o.error << '\n';
}

struct LoadedRun {
  RunManifest manifest;
  std::vector<PretrainSample> samples;
  std::vector<double> alphas;
};

LoadedRun load_run(const std::string& path, RunManifest::Purpose purpose,
                   std::optional<double> alpha, std::optional<int> workers) {
  LoadedRun run{RunManifest::load(path), {}, {}};
  if (alpha) run.manifest.alpha_override = alpha;
  if (workers) run.manifest.workers = *workers;
  run.manifest.validate(purpose);
  run.samples = run.manifest.load_samples();
  if (purpose != RunManifest::Purpose::baseline) {
    for (const auto& s : run.samples) {
      auto a = run.manifest.alpha_for(s);
      if (!a)
        throw ValidationError("no alpha for domain '" + s.domain + "' at seq_len " +
                              std::to_string(s.seq_len) +
                              "; add it to alpha_schedule or set default_alpha");
      run.alphas.push_back(*a);
    }
  }
  return run;
}

struct AttackModels {
  std::unique_ptr<ChatModel> initializer, attacker, victim;
  std::unique_ptr<TriggerScorer> scorer;

  AttackEndpoints endpoints() const {
    return {initializer.get(), attacker.get(), victim.get(), scorer.get()};
  }
};

AttackModels make_attack_models(const LoadedRun& run) {
  const auto& m = run.manifest;
  AttackModels models;
  models.initializer = make_model(*m.initializer, run.samples, m.seed);
  models.attacker = make_model(*m.attacker, run.samples, m.seed + 1);
  models.victim = make_model(*m.victim, run.samples, m.seed + 2);
  if (m.attack.scorer == ScorerKind::classifier) {
    if (m.classifier_model)
      models.scorer = std::make_unique<TriggerModel>(TriggerModel::load(*m.classifier_model));
    else
      models.scorer = std::make_unique<RemoteTriggerScorer>(*m.scorer_endpoint);
  }
  return models;
}

int cmd_attack(const std::string& manifest, std::optional<double> alpha,
               std::optional<int> workers, Streams io) {
  const auto run = load_run(manifest, RunManifest::Purpose::attack, alpha, workers);
  const auto models = make_attack_models(run);
  const auto templates = run.manifest.templates();
  const auto endpoints = models.endpoints();

  std::map<std::string, double> alpha_of;
  for (std::size_t i = 0; i < run.samples.size(); ++i)
    alpha_of[run.samples[i].id] = run.alphas[i];

  const auto outcomes =
      run_batch(run.samples, run.manifest.workers, [&](const PretrainSample& s) {
        AttackConfig cfg = run.manifest.attack;
        cfg.alpha = alpha_of.at(s.id);
        return run_attack(s, cfg, endpoints, templates);
      });
  write_run_outputs(run.manifest, "", "attack", run.samples, outcomes, io);
  const bool any_ok = std::any_of(outcomes.begin(), outcomes.end(),
                                  [](const SampleOutcome& o) { return o.result.has_value(); });
  return any_ok ? kExitOk : kExitRuntime;
}

int cmd_baseline(const std::string& manifest, std::optional<int> workers, Streams io) {
  const auto run = load_run(manifest, RunManifest::Purpose::baseline, std::nullopt, workers);
  const auto victim = make_model(*run.manifest.victim, run.samples, run.manifest.seed + 2);
  const auto outcomes = run_batch(run.samples, run.manifest.workers, [&](const PretrainSample& s) {
    return prefix_suffix_attack(s, *victim);
  });
  write_run_outputs(run.manifest, "baseline_", "baseline", run.samples, outcomes, io);
  const bool any_ok = std::any_of(outcomes.begin(), outcomes.end(),
                                  [](const SampleOutcome& o) { return o.result.has_value(); });
  return (any_ok || outcomes.empty()) ? kExitOk : kExitRuntime;
}

int cmd_calibrate(const std::string& manifest, const std::vector<double>& alphas,
                  double fraction, std::optional<int> workers, Streams io) {
  const auto run = load_run(manifest, RunManifest::Purpose::calibrate, std::nullopt, workers);
  const auto models = make_attack_models(run);
  const auto result = calibrate_alpha(run.samples, alphas, fraction, run.manifest.attack,
                                      models.endpoints(), run.manifest.templates(),
                                      run.manifest.workers);
  json means = json::array();
  for (const auto& [a, mean] : result.mean_objective) {
    means.push_back({{"alpha", a}, {"mean_objective", mean}});
    io.out << "alpha " << format_fixed4(a) << ": mean objective " << format_fixed4(mean) << '\n';
  }
  std::filesystem::create_directories(run.manifest.output_dir);
  std::ofstream(run.manifest.output_dir / "calibration.json", std::ios::binary)
      << json{{"alpha", result.alpha},
              {"subset_size", result.subset_size},
              {"fraction", fraction},
              {"means", means}}
             .dump(2)
      << '\n';
  io.out << "selected alpha " << format_fixed4(result.alpha) << " on " << result.subset_size
         << " samples\n";
  return kExitOk;
}

std::vector<AttackResult> read_all_results(const std::vector<std::string>& paths) {
  std::vector<AttackResult> all;
  for (const auto& p : paths) {
    auto file = read_results(p);
    all.insert(all.end(), file.results.begin(), file.results.end());
  }
  return all;
}

int cmd_collect_prefs(const std::vector<std::string>& results, const std::string& out_path,
                      bool balance, std::uint64_t seed, Streams io) {
  auto traces = read_all_results(results);
  // Baseline results carry no candidate sampling, so they hold no preferences.
  std::erase_if(traces, [](const AttackResult& r) { return r.method != Method::ours; });
  auto prefs = collect_preferences(traces);
  if (balance) prefs = balance_downsample(prefs, seed);
  save_preferences(out_path, prefs);
  const auto n_t = std::count_if(prefs.begin(), prefs.end(),
                                 [](const PreferenceExample& e) { return e.label == Label::T; });
  io.out << "collected " << prefs.size() << " preference examples from " << traces.size()
         << " traces: " << n_t << " T, " << (static_cast<long>(prefs.size()) - n_t) << " NT\n";
  return kExitOk;
}

bool has_both_labels(const std::vector<PreferenceExample>& data) {
  bool t = false, nt = false;
  for (const auto& e : data) (e.label == Label::T ? t : nt) = true;
  return t && nt;
}

int cmd_train_clf(const std::string& prefs_path, const std::string& out_path,
                  const std::string& domain, bool downsample, const std::string& test_out,
                  const TrainConfig& config, Streams io) {
  auto data = load_preferences(prefs_path);
  if (!domain.empty()) {
    std::erase_if(data, [&](const PreferenceExample& e) { return e.domain != domain; });
  } else {
    std::set<std::string> domains;
    for (const auto& e : data) domains.insert(e.domain);
    if (domains.size() > 1)
      throw ValidationError("preference data spans " + std::to_string(domains.size()) +
                            " domains; pick one with --domain (one classifier per domain)");
  }
  if (data.empty()) throw ValidationError("no preference examples to train on");
  if (downsample) data = balance_downsample(data, config.seed);
  const auto split = split_dataset(data, config.seed);
  const auto report = train_trigger_model(split.train, config);
  for (const auto& w : report.warnings) io.err << "warning: " << w << '\n';
  report.model.save(out_path);
  if (!test_out.empty()) save_preferences(test_out, split.test);

  io.out << "trained on " << split.train.size() << " examples (train accuracy "
         << format_fixed4(report.train_accuracy) << ")";
  if (has_both_labels(split.validation))
    io.out << ", validation macro-F1 " << format_fixed4(eval_macro_f1(report.model, split.validation));
  if (has_both_labels(split.test))
    io.out << ", test macro-F1 " << format_fixed4(eval_macro_f1(report.model, split.test));
  io.out << '\n';
  return kExitOk;
}

int cmd_eval_clf(const std::string& model_path, const std::string& prefs_path, Streams io) {
  const auto model = TriggerModel::load(model_path);
  const auto data = load_preferences(prefs_path);
  const double f1 = eval_macro_f1(model, data);
  io.out << "macro-F1 " << format_fixed4(f1) << " on " << data.size() << " examples\n";
  return kExitOk;
}

double score_field(const AttackResult& r, const std::string& field) {
  if (field == "objective") return r.best_score.objective;
  const auto& v = field == "mem" ? r.best_score.mem : r.best_score.lcs_p;
  if (!v) throw ValidationError("result '" + r.sample_id + "' has no " + field + " score");
  return *v;
}

int cmd_analyze(const std::vector<std::string>& results, const std::string& mode,
                std::size_t n_min, std::size_t n_max, std::size_t k, const std::string& field,
                const std::string& which, const std::string& out_path, Streams io) {
  json report;
  if (mode == "ngram") {
    std::vector<TokenSeq> prompts;
    for (const auto& r : read_all_results(results))
      prompts.push_back(tokenize(which == "init" ? r.init_prompt.text : r.best_prompt.text));
    const auto grams = top_ngrams(prompts, n_min, n_max, k);
    report = json::array();
    for (const auto& g : grams) {
      std::string joined;
      for (const auto& t : g.ngram) joined += (joined.empty() ? "" : " ") + t;
      io.out << g.ngram.size() << '\t' << g.count << '\t' << joined << '\n';
      report.push_back({{"n", g.ngram.size()}, {"ngram", g.ngram}, {"count", g.count}});
    }
  } else {
    if (results.size() != 2)
      throw ValidationError("score-stats compares exactly two results files");
    const auto a = read_results(results[0]).results;
    const auto b = read_results(results[1]).results;
    std::map<std::string, double> b_scores;
    for (const auto& r : b) b_scores[r.sample_id] = score_field(r, field);
    std::vector<double> x, y;
    for (const auto& r : a) {
      auto it = b_scores.find(r.sample_id);
      if (it == b_scores.end()) continue;
      x.push_back(score_field(r, field));
      y.push_back(it->second);
    }
    if (x.empty()) throw ValidationError("no sample ids in common between the two files");
    const auto stats = score_vector_stats(x, y);
    auto show = [](const std::optional<double>& v) { return v ? format_fixed4(*v) : std::string("undefined"); };
    auto as_json = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    io.out << "paired " << x.size() << " samples on " << field << ": cosine " << show(stats.cosine)
           << ", l2 " << format_fixed4(stats.l2) << ", pearson " << show(stats.pearson) << '\n';
    report = {{"field", field},
              {"pairs", x.size()},
              {"cosine", as_json(stats.cosine)},
              {"l2", stats.l2},
              {"pearson", as_json(stats.pearson)}};
  }
  if (!out_path.empty()) std::ofstream(out_path, std::ios::binary) << report.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"memaudit: black-box training-data extraction audits for chat models"};
  app.name("memaudit");
  app.require_subcommand(1);
  Streams io{out, err};

  std::string input, out_path, tokenizer = std::string(to_string(kDefaultTokenizer));
  int seq_len = 200;
  auto* split = app.add_subcommand("split", "Split a JSONL corpus into prefix/suffix samples");
  split->add_option("--input", input, "Corpus JSONL")->required();
  split->add_option("--seq-len", seq_len, "Total token budget per sample")->required();
  split->add_option("--out", out_path, "Samples JSONL to write")->required();
  split->add_option("--tokenizer", tokenizer, "whitespace or whitespace_lowercased");

  std::string manifest;
  std::optional<double> alpha;
  std::optional<int> workers;
  auto* attack = app.add_subcommand("attack", "Run the interactive prompt-optimization attack");
  attack->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
  attack->add_option("--alpha", alpha, "Override alpha for every sample");
  attack->add_option("--workers", workers, "Parallel samples");

  auto* baseline = app.add_subcommand("baseline", "Run the prefix-suffix baseline");
  baseline->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
  baseline->add_option("--workers", workers, "Parallel samples");

  std::vector<double> alphas;
  double fraction = 0.2;
  auto* calibrate = app.add_subcommand("calibrate", "Pick alpha on a seeded subset of samples");
  calibrate->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
  calibrate->add_option("--alphas", alphas, "Candidate alphas")->required()->delimiter(',');
  calibrate->add_option("--fraction", fraction, "Fraction of samples to attack");
  calibrate->add_option("--workers", workers, "Parallel samples");

  std::vector<std::string> results;
  bool balance = false;
  std::uint64_t seed = 0;
  auto* collect = app.add_subcommand("collect-prefs", "Harvest T/NT preference data from traces");
  collect->add_option("--results", results, "Attack results JSONL")->required();
  collect->add_option("--out", out_path, "Preference JSONL to write")->required();
  collect->add_flag("--balance", balance, "Downsample the majority label");
  collect->add_option("--seed", seed, "Downsampling seed");

  std::string prefs, domain, test_out;
  bool no_downsample = false;
  TrainConfig train_cfg;
  auto* train = app.add_subcommand("train-clf", "Train a trigger classifier for one domain");
  train->add_option("--prefs", prefs, "Preference JSONL")->required();
  train->add_option("--out", out_path, "Model file to write")->required();
  train->add_option("--domain", domain, "Domain to train on");
  train->add_option("--dimension", train_cfg.dimension, "Hashed feature dimension");
  train->add_option("--epochs", train_cfg.epochs, "SGD epochs");
  train->add_option("--lr", train_cfg.learning_rate, "Initial learning rate");
  train->add_option("--threshold", train_cfg.threshold, "Decision threshold");
  train->add_option("--seed", train_cfg.seed, "Seed for downsampling, split and SGD");
  train->add_flag("--no-downsample", no_downsample, "Keep the label imbalance");
  train->add_option("--test-out", test_out, "Write the held-out test split here");

  std::string model_path;
  auto* eval = app.add_subcommand("eval-clf", "Macro-F1 of a trigger classifier");
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--prefs", prefs, "Labelled preference JSONL")->required();

  std::string mode = "ngram", field = "mem", which = "best";
  std::size_t n_min = 1, n_max = 5, k = 10;
  auto* analyze = app.add_subcommand("analyze", "N-gram patterns or score-vector statistics");
  analyze->add_option("--results", results, "Attack results JSONL")->required();
  analyze->add_option("--mode", mode, "ngram or score-stats")
      ->check(CLI::IsMember({"ngram", "score-stats"}));
  analyze->add_option("--n-min", n_min, "Smallest n");
  analyze->add_option("--n-max", n_max, "Largest n");
  analyze->add_option("-k", k, "N-grams kept per n");
  analyze->add_option("--field", field, "Score compared by score-stats")
      ->check(CLI::IsMember({"mem", "lcs_p", "objective"}));
  analyze->add_option("--prompts", which, "Prompts used by ngram")
      ->check(CLI::IsMember({"best", "init"}));
  analyze->add_option("--out", out_path, "Write the report as JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*split) return cmd_split(input, seq_len, out_path, tokenizer, io);
    if (*attack) return cmd_attack(manifest, alpha, workers, io);
    if (*baseline) return cmd_baseline(manifest, workers, io);
    if (*calibrate) return cmd_calibrate(manifest, alphas, fraction, workers, io);
    if (*collect) return cmd_collect_prefs(results, out_path, balance, seed, io);
    if (*train) return cmd_train_clf(prefs, out_path, domain, !no_downsample, test_out, train_cfg, io);
    if (*eval) return cmd_eval_clf(model_path, prefs, io);
    if (*analyze) return cmd_analyze(results, mode, n_min, n_max, k, field, which, out_path, io);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const SuffixWithheldError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace memaudit
