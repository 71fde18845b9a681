#pragma once

#include <string>
#include <vector>

#include "memaudit/attack.hpp"
#include "memaudit/classifier.hpp"
#include "memaudit/random.hpp"
#include "support.hpp"

namespace testsupport {

// An "ours" result with `iterations` rounds of `n` candidates; round t selects
// candidate (t * 5) % n.
inline memaudit::AttackResult synthetic_trace(const std::string& id, int iterations = 3,
                                              int n = 24, const std::string& domain = "c4") {
  using namespace memaudit;
  AttackResult r;
  r.sample_id = id;
  r.domain = domain;
  r.seq_len = 200;
  r.alpha = 0.4;
  r.init_prompt = {"init prompt " + id, PromptOrigin::initial, 0, 0};
  r.init_output = "out";
  r.init_score = CandidateScore{0.1, 0.0, 0.04};
  for (int t = 1; t <= iterations; ++t) {
    IterationTrace it;
    it.iteration = t;
    for (int k = 0; k < n; ++k) {
      it.candidates.push_back({id + " round " + std::to_string(t) + " cand " + std::to_string(k),
                               PromptOrigin::sampled, t, k});
      it.outputs.push_back("output " + std::to_string(k));
      const double mem = k == (t * 5) % n ? 0.9 : 0.1;
      it.scores.push_back(CandidateScore{mem, 0.0, objective(0.4, mem, 0.0)});
    }
    it.selected_index = (t * 5) % n;
    r.best_prompt = it.candidates[static_cast<std::size_t>(it.selected_index)];
    r.best_prompt.origin = PromptOrigin::refined_best;
    r.best_score = it.scores[static_cast<std::size_t>(it.selected_index)];
    r.best_output = "output";
    r.trace.push_back(std::move(it));
  }
  return r;
}

// T prompts carry a marker phrase; NT prompts never do.
inline std::vector<memaudit::PreferenceExample> marker_fixture(std::size_t per_class,
                                                               std::uint64_t seed) {
  using namespace memaudit;
  Rng rng(seed);
  std::vector<PreferenceExample> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool t = i % 2 == 0;
    auto words = random_tokens(rng, 6 + uniform_index(rng, 8), 200);
    if (t) words.insert(words.begin() + static_cast<long>(uniform_index(rng, words.size())),
                        "verbatim");
    out.push_back({join(words), t ? Label::T : Label::NT, {"s" + std::to_string(i), 1, 0}, "c4"});
  }
  return out;
}

// Prompts and labels drawn independently.
inline std::vector<memaudit::PreferenceExample> random_label_fixture(std::size_t n,
                                                                     std::uint64_t seed) {
  using namespace memaudit;
  Rng rng(seed);
  std::vector<PreferenceExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto words = random_tokens(rng, 6 + uniform_index(rng, 10), 500);
    const Label l = uniform_index(rng, 2) == 0 ? Label::T : Label::NT;
    out.push_back({join(words), l, {"r" + std::to_string(i), 1, 0}, "c4"});
  }
  return out;
}

}  // namespace testsupport
