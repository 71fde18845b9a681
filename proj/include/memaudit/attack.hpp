#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memaudit/corpus.hpp"
#include "memaudit/gateway.hpp"
#include "memaudit/templates.hpp"

namespace memaudit {

enum class InitMode { with_suffix, prefix_only };
enum class ScorerKind { rouge_suffix, classifier };
enum class PromptOrigin { initial, sampled, refined_best };
enum class Method { ours, prefix_suffix };

std::string_view to_string(InitMode m);
std::string_view to_string(ScorerKind s);
std::string_view to_string(PromptOrigin o);
std::string_view to_string(Method m);
InitMode init_mode_from_string(std::string_view s);
ScorerKind scorer_kind_from_string(std::string_view s);
PromptOrigin prompt_origin_from_string(std::string_view s);
Method method_from_string(std::string_view s);

struct AttackConfig {
  double alpha = 0.4;
  int n_candidates = 24;
  int iterations = 3;
  InitMode init_mode = InitMode::with_suffix;
  ScorerKind scorer = ScorerKind::rouge_suffix;
  std::string meta_prompt_template = "default";
  std::string paraphrase_template = "default";
  std::uint64_t seed = 0;
  double attacker_temperature = 1.0;
  // Victim queries issued concurrently within one iteration.
  int victim_parallelism = 1;

  void validate() const;
};

struct Prompt {
  std::string text;
  PromptOrigin origin = PromptOrigin::initial;
  int iteration = 0;
  int candidate_index = 0;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

// mem and lcs_p are unset in classifier mode, where the objective is the
// trigger probability instead of alpha*mem - (1-alpha)*lcs_p.
struct CandidateScore {
  std::optional<double> mem;
  std::optional<double> lcs_p;
  double objective = 0.0;

  friend bool operator==(const CandidateScore&, const CandidateScore&) = default;
};

struct IterationTrace {
  int iteration = 0;
  std::vector<Prompt> candidates;
  std::vector<std::string> outputs;
  std::vector<CandidateScore> scores;
  int selected_index = 0;

  friend bool operator==(const IterationTrace&, const IterationTrace&) = default;
};

struct AttackResult {
  std::string sample_id;
  std::string domain;
  int seq_len = 0;
  Method method = Method::ours;
  ScorerKind scorer = ScorerKind::rouge_suffix;
  double alpha = 0.0;

  Prompt init_prompt;
  std::string init_output;
  CandidateScore init_score;

  Prompt best_prompt;
  std::string best_output;
  CandidateScore best_score;

  std::vector<IterationTrace> trace;

  // init plus every candidate of every iteration.
  std::size_t scored_prompt_count() const;

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

// Scores a prompt without the ground truth: probability that it triggers
// memorized output.
class TriggerScorer {
 public:
  virtual ~TriggerScorer() = default;
  virtual double probability(std::string_view prompt) const = 0;
};

struct AttackEndpoints {
  ChatModel* initializer = nullptr;
  ChatModel* attacker = nullptr;
  ChatModel* victim = nullptr;
  const TriggerScorer* scorer = nullptr;  // classifier mode only
};

// (domain, seq_len) -> alpha.
class AlphaSchedule {
 public:
  // Llama-family table plus falcon-rw rows keyed by domain "falcon-rw".
  static AlphaSchedule defaults();

  void set(const std::string& domain, int seq_len, double alpha);
  std::optional<double> lookup(const std::string& domain, int seq_len) const;
  const std::map<std::pair<std::string, int>, double>& entries() const noexcept {
    return table_;
  }

 private:
  std::map<std::pair<std::string, int>, double> table_;
};

double objective(double alpha, double mem, double lcs_p);

// with_suffix fills {TEXT} with prefix + suffix, prefix_only with the prefix
// alone and never reads the suffix. {PREFIX} is always available, {SUFFIX}
// only in with_suffix mode.
Messages build_meta_prompt(const PretrainSample& sample, InitMode mode,
                           const PromptTemplate& tmpl);

Prompt init_prompt(ChatModel& initializer, const PretrainSample& sample,
                   const AttackConfig& config, const TemplateLibrary& templates);

CandidateScore score_candidate(std::string_view prompt_text,
                               std::string_view victim_output,
                               const TokenSeq& suffix, double alpha);

std::vector<Prompt> sample_candidates(ChatModel& attacker, const Prompt& previous,
                                      int n, int iteration,
                                      const AttackConfig& config,
                                      const TemplateLibrary& templates,
                                      const std::string& sample_id = {});

// Highest objective; ties go to the lowest candidate_index, then the lowest
// iteration.
std::pair<Prompt, CandidateScore> select_best(
    std::span<const std::pair<Prompt, CandidateScore>> scored);

// Initialization followed by `iterations` rounds of best-of-n sampling and
// victim feedback. The final answer is the best over the initial prompt and
// every round's winner.
AttackResult run_attack(const PretrainSample& sample, const AttackConfig& config,
                        const AttackEndpoints& endpoints,
                        const TemplateLibrary& templates);

// Feeds the raw prefix to the victim.
AttackResult prefix_suffix_attack(const PretrainSample& sample, ChatModel& victim);

// Victim generation budget: ceil(1.25 * suffix token budget).
int victim_max_tokens(const PretrainSample& sample);

struct SampleOutcome {
  std::string sample_id;
  std::optional<AttackResult> result;
  std::string error;  // set iff result is empty
};

// Runs `attack` over samples with `workers` threads. A failing sample is
// recorded and the rest continue. Output order follows input order.
using AttackFn = std::function<AttackResult(const PretrainSample&)>;
std::vector<SampleOutcome> run_batch(std::span<const PretrainSample> samples,
                                     int workers, const AttackFn& attack);

struct CalibrationResult {
  double alpha = 0.0;
  std::vector<std::pair<double, double>> mean_objective;  // (alpha, mean)
  std::size_t subset_size = 0;
  std::size_t attacks_run = 0;
};

// Attacks a seeded `fraction` of the samples once per candidate alpha and
// returns the alpha with the highest mean objective (ties: smallest alpha).
CalibrationResult calibrate_alpha(std::span<const PretrainSample> samples,
                                  std::span<const double> candidate_alphas,
                                  double fraction, const AttackConfig& config,
                                  const AttackEndpoints& endpoints,
                                  const TemplateLibrary& templates,
                                  int workers = 1);

}  // namespace memaudit
