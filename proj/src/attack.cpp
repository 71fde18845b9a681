#include "memaudit/attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "memaudit/error.hpp"
#include "memaudit/text_metrics.hpp"

namespace memaudit {

std::string_view to_string(InitMode m) {
  return m == InitMode::with_suffix ? "with_suffix" : "prefix_only";
}
std::string_view to_string(ScorerKind s) {
  return s == ScorerKind::rouge_suffix ? "rouge_suffix" : "classifier";
}
std::string_view to_string(PromptOrigin o) {
  switch (o) {
    case PromptOrigin::initial:
      return "initial";
    case PromptOrigin::sampled:
      return "sampled";
    case PromptOrigin::refined_best:
      return "refined_best";
  }
  return "initial";
}
std::string_view to_string(Method m) {
  return m == Method::ours ? "ours" : "prefix_suffix";
}

InitMode init_mode_from_string(std::string_view s) {
  if (s == "with_suffix") return InitMode::with_suffix;
  if (s == "prefix_only") return InitMode::prefix_only;
  throw ValidationError("unknown init_mode '" + std::string(s) + "'");
}
ScorerKind scorer_kind_from_string(std::string_view s) {
  if (s == "rouge_suffix") return ScorerKind::rouge_suffix;
  if (s == "classifier") return ScorerKind::classifier;
  throw ValidationError("unknown scorer '" + std::string(s) + "'");
}
PromptOrigin prompt_origin_from_string(std::string_view s) {
  if (s == "initial") return PromptOrigin::initial;
  if (s == "sampled") return PromptOrigin::sampled;
  if (s == "refined_best") return PromptOrigin::refined_best;
  throw ValidationError("unknown prompt origin '" + std::string(s) + "'");
}
Method method_from_string(std::string_view s) {
  if (s == "ours") return Method::ours;
  if (s == "prefix_suffix") return Method::prefix_suffix;
  throw ValidationError("unknown method '" + std::string(s) + "'");
}

void AttackConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must be in [0, 1], got " + std::to_string(alpha));
  if (n_candidates < 1) throw ValidationError("n_candidates must be >= 1");
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (victim_parallelism < 1) throw ValidationError("victim_parallelism must be >= 1");
  if (scorer == ScorerKind::classifier && init_mode == InitMode::with_suffix)
    throw ValidationError(
        "scorer=classifier runs without the suffix; use init_mode=prefix_only");
}

std::size_t AttackResult::scored_prompt_count() const {
  if (method == Method::prefix_suffix) return 1;
  std::size_t n = 1;
  for (const auto& it : trace) n += it.candidates.size();
  return n;
}

AlphaSchedule AlphaSchedule::defaults() {
  AlphaSchedule s;
  for (const char* d : {"c4", "cc", "github"}) s.set(d, 200, 0.4);
  for (const char* d : {"arxiv", "books"}) s.set(d, 200, 0.2);
  for (const char* d : {"cc", "c4"}) s.set(d, 300, 0.5);
  for (const char* d : {"github", "arxiv"}) s.set(d, 300, 0.4);
  s.set("books", 300, 0.3);
  for (const char* d : {"c4", "cc", "arxiv"}) s.set(d, 500, 0.5);
  s.set("github", 500, 0.6);
  s.set("books", 500, 0.4);
  s.set("falcon-rw", 200, 0.2);
  s.set("falcon-rw", 300, 0.3);
  s.set("falcon-rw", 500, 0.8);
  return s;
}

void AlphaSchedule::set(const std::string& domain, int seq_len, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha for " + domain + "/" + std::to_string(seq_len) +
                          " must be in [0, 1]");
  table_[{domain, seq_len}] = alpha;
}

std::optional<double> AlphaSchedule::lookup(const std::string& domain,
                                            int seq_len) const {
  auto it = table_.find({domain, seq_len});
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

double objective(double alpha, double mem, double lcs_p) {
  return alpha * mem - (1.0 - alpha) * lcs_p;
}

Messages build_meta_prompt(const PretrainSample& sample, InitMode mode,
                           const PromptTemplate& tmpl) {
  std::map<std::string, std::string> values{{"PREFIX", sample.prefix_text}};
  if (mode == InitMode::with_suffix) {
    values["SUFFIX"] = sample.suffix_text();
    values["TEXT"] = sample.prefix_text + sample.suffix_text();
  } else {
    values["TEXT"] = sample.prefix_text;
  }

  std::string system = expand_template(tmpl.system, values);
  if (!system.empty()) system += "\n";
  system += kRegularizationClause;
  return {{Role::system, std::move(system)},
          {Role::user, expand_template(tmpl.user, values)}};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string query_victim(ChatModel& victim, const PretrainSample& sample,
                         const std::string& prompt, int iteration) {
  ChatRequest req;
  req.messages = {{Role::user, prompt}};
  req.n = 1;
  req.max_new_tokens = victim_max_tokens(sample);
  req.context.sample_id = sample.id;
  req.context.iteration = iteration;
  auto out = victim.complete(req);
  if (out.empty()) throw MalformedResponseError("victim returned no completion");
  return std::move(out.front());
}

// Queries the victim for each prompt with up to `parallelism` requests in
// flight. Outputs are indexed like the prompts.
std::vector<std::string> query_victim_all(ChatModel& victim, const PretrainSample& sample,
                                          const std::vector<Prompt>& prompts,
                                          int iteration, int parallelism) {
  std::vector<std::string> outputs(prompts.size());
  const auto workers =
      std::min<std::size_t>(static_cast<std::size_t>(parallelism), prompts.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i)
      outputs[i] = query_victim(victim, sample, prompts[i].text, iteration);
    return outputs;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (auto i = next++; i < prompts.size(); i = next++)
          outputs[i] = query_victim(victim, sample, prompts[i].text, iteration);
      } catch (...) {
        errors[w] = std::current_exception();
        next = prompts.size();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return outputs;
}

}  // namespace

int victim_max_tokens(const PretrainSample& sample) {
  return std::max(1, static_cast<int>(std::ceil(
                         1.25 * static_cast<double>(sample.suffix_budget()))));
}

Prompt init_prompt(ChatModel& initializer, const PretrainSample& sample,
                   const AttackConfig& config, const TemplateLibrary& templates) {
  ChatRequest req;
  req.messages = build_meta_prompt(sample, config.init_mode,
                                   templates.meta_prompt(config.meta_prompt_template));
  req.n = 1;
  req.context.sample_id = sample.id;
  auto out = initializer.complete(req);
  const std::string text = out.empty() ? std::string() : trim(out.front());
  if (text.empty())
    throw MalformedResponseError("initializer returned an empty prompt for sample '" +
                                 sample.id + "'");
  return Prompt{text, PromptOrigin::initial, 0, 0};
}

CandidateScore score_candidate(std::string_view prompt_text,
                               std::string_view victim_output,
                               const TokenSeq& suffix, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must be in [0, 1]");
  CandidateScore s;
  s.mem = rouge_l(tokenize(victim_output, suffix.mode), suffix);
  s.lcs_p = rouge_l(tokenize(prompt_text, suffix.mode), suffix);
  s.objective = objective(alpha, *s.mem, *s.lcs_p);
  return s;
}

std::vector<Prompt> sample_candidates(ChatModel& attacker, const Prompt& previous,
                                      int n, int iteration, const AttackConfig& config,
                                      const TemplateLibrary& templates,
                                      const std::string& sample_id) {
  if (n < 1) throw ValidationError("candidate count must be >= 1");
  const auto& tmpl = templates.paraphrase(config.paraphrase_template);
  const std::map<std::string, std::string> values{{"PROMPT", previous.text}};

  ChatRequest req;
  if (!tmpl.system.empty())
    req.messages.push_back({Role::system, expand_template(tmpl.system, values)});
  req.messages.push_back({Role::user, expand_template(tmpl.user, values)});
  req.n = n;
  req.temperature = config.attacker_temperature;
  req.context = {sample_id, iteration, previous.text};

  auto texts = attacker.complete(req);
  std::vector<Prompt> out;
  for (const auto& t : texts) {
    auto text = trim(t);
    if (text.empty()) continue;
    out.push_back(Prompt{std::move(text), PromptOrigin::sampled, iteration,
                         static_cast<int>(out.size())});
  }
  if (static_cast<int>(out.size()) < n)
    throw GatewayError("short batch: attacker produced " + std::to_string(out.size()) +
                       " non-empty candidates of " + std::to_string(n));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::pair<Prompt, CandidateScore> select_best(
    std::span<const std::pair<Prompt, CandidateScore>> scored) {
  if (scored.empty()) throw ValidationError("select_best needs at least one candidate");
  const auto* best = &scored.front();
  for (const auto& cand : scored.subspan(1)) {
    const auto& [p, s] = cand;
    const auto& [bp, bs] = *best;
    if (s.objective > bs.objective ||
        (s.objective == bs.objective &&
         (p.candidate_index < bp.candidate_index ||
          (p.candidate_index == bp.candidate_index && p.iteration < bp.iteration))))
      best = &cand;
  }
  return *best;
}

AttackResult run_attack(const PretrainSample& sample, const AttackConfig& config,
                        const AttackEndpoints& endpoints,
                        const TemplateLibrary& templates) {
  config.validate();
  if (!endpoints.initializer || !endpoints.attacker || !endpoints.victim)
    throw ValidationError("run_attack needs initializer, attacker and victim endpoints");
  if (config.scorer == ScorerKind::rouge_suffix && sample.suffix_withheld())
    throw ValidationError("scorer=rouge_suffix needs the suffix of sample '" +
                          sample.id + "'");
  if (config.scorer == ScorerKind::classifier && endpoints.scorer == nullptr)
    throw ValidationError("scorer=classifier needs a trigger model");

  const TokenSeq* suffix =
      config.scorer == ScorerKind::rouge_suffix ? &sample.suffix() : nullptr;
  auto score = [&](const std::string& prompt, const std::string& output) {
    if (suffix) return score_candidate(prompt, output, *suffix, config.alpha);
    CandidateScore s;
    s.objective = endpoints.scorer->probability(prompt);
    return s;
  };

  AttackResult result;
  result.sample_id = sample.id;
  result.domain = sample.domain;
  result.seq_len = sample.seq_len;
  result.method = Method::ours;
  result.scorer = config.scorer;
  result.alpha = config.alpha;

  result.init_prompt = init_prompt(*endpoints.initializer, sample, config, templates);
  result.init_output = query_victim(*endpoints.victim, sample, result.init_prompt.text, 0);
  result.init_score = score(result.init_prompt.text, result.init_output);

  std::vector<std::pair<Prompt, CandidateScore>> finalists{
      {result.init_prompt, result.init_score}};
  std::vector<std::string> finalist_outputs{result.init_output};

  Prompt current = result.init_prompt;
  for (int t = 1; t <= config.iterations; ++t) {
    IterationTrace it;
    it.iteration = t;
    it.candidates = sample_candidates(*endpoints.attacker, current, config.n_candidates,
                                      t, config, templates, sample.id);
    it.outputs = query_victim_all(*endpoints.victim, sample, it.candidates, t,
                                  config.victim_parallelism);

    std::vector<std::pair<Prompt, CandidateScore>> scored;
    scored.reserve(it.candidates.size());
    for (std::size_t i = 0; i < it.candidates.size(); ++i) {
      it.scores.push_back(score(it.candidates[i].text, it.outputs[i]));
      scored.emplace_back(it.candidates[i], it.scores.back());
    }
    auto [best, best_score] = select_best(scored);
    it.selected_index = best.candidate_index;
    best.origin = PromptOrigin::refined_best;
    finalists.emplace_back(best, best_score);
    finalist_outputs.push_back(it.outputs[static_cast<std::size_t>(best.candidate_index)]);
    current = best;
    result.trace.push_back(std::move(it));
  }

  const auto [best, best_score] = select_best(finalists);
  for (std::size_t i = 0; i < finalists.size(); ++i) {
    if (finalists[i].first == best) {
      result.best_output = finalist_outputs[i];
      break;
    }
  }
  result.best_prompt = best;
  result.best_score = best_score;
  return result;
}

AttackResult prefix_suffix_attack(const PretrainSample& sample, ChatModel& victim) {
  AttackResult result;
  result.sample_id = sample.id;
  result.domain = sample.domain;
  result.seq_len = sample.seq_len;
  result.method = Method::prefix_suffix;
  result.scorer = ScorerKind::rouge_suffix;
  result.alpha = 1.0;

  const Prompt prompt{sample.prefix_text, PromptOrigin::initial, 0, 0};
  const std::string output = query_victim(victim, sample, prompt.text, 0);
  const CandidateScore s = score_candidate(prompt.text, output, sample.suffix(), 1.0);

  result.init_prompt = result.best_prompt = prompt;
  result.init_output = result.best_output = output;
  result.init_score = result.best_score = s;
  result.trace.push_back(IterationTrace{0, {prompt}, {output}, {s}, 0});
  return result;
}

std::vector<SampleOutcome> run_batch(std::span<const PretrainSample> samples,
                                     int workers, const AttackFn& attack) {
  std::vector<SampleOutcome> outcomes(samples.size());
  auto run_one = [&](std::size_t i) {
    outcomes[i].sample_id = samples[i].id;
    try {
      outcomes[i].result = attack(samples[i]);
    } catch (const Error& e) {
      outcomes[i].error = e.what();
    }
  };

  const auto n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), samples.size());
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run_one(i);
    return outcomes;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w)
    pool.emplace_back([&] {
      for (auto i = next++; i < samples.size(); i = next++) run_one(i);
    });
  for (auto& t : pool) t.join();
  return outcomes;
}

CalibrationResult calibrate_alpha(std::span<const PretrainSample> samples,
                                  std::span<const double> candidate_alphas,
                                  double fraction, const AttackConfig& config,
                                  const AttackEndpoints& endpoints,
                                  const TemplateLibrary& templates, int workers) {
  if (candidate_alphas.empty()) throw ValidationError("no candidate alphas given");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("calibration fraction must be in (0, 1]");
  if (samples.empty()) throw ValidationError("no samples to calibrate on");

  const auto n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(samples.size()))),
      1, samples.size());
  const auto subset =
      sample_subset(std::vector<PretrainSample>(samples.begin(), samples.end()), n,
                    config.seed);

  CalibrationResult out;
  out.subset_size = subset.size();
  bool have_best = false;
  double best_mean = 0.0;
  for (double a : candidate_alphas) {
    AttackConfig cfg = config;
    cfg.alpha = a;
    cfg.validate();
    auto outcomes = run_batch(subset, workers, [&](const PretrainSample& s) {
      return run_attack(s, cfg, endpoints, templates);
    });
    out.attacks_run += outcomes.size();

    double sum = 0.0;
    std::size_t ok = 0;
    for (const auto& o : outcomes) {
      if (!o.result) continue;
      sum += o.result->best_score.objective;
      ++ok;
    }
    if (ok == 0)
      throw Error("alpha calibration failed: every sample failed for alpha " +
                  std::to_string(a));
    const double mean = sum / static_cast<double>(ok);
    out.mean_objective.emplace_back(a, mean);
    if (!have_best || mean > best_mean || (mean == best_mean && a < out.alpha)) {
      out.alpha = a;
      best_mean = mean;
      have_best = true;
    }
  }
  return out;
}

}  // namespace memaudit
