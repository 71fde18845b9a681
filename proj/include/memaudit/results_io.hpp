#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memaudit/attack.hpp"

namespace memaudit {

nlohmann::json to_json(const AttackResult& r);
AttackResult attack_result_from_json(const nlohmann::json& j);

struct RunSummary {
  std::string command;  // "attack" or "baseline"
  std::size_t samples = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  double mean_mem = 0.0;
  double mean_lcs_p = 0.0;
  double mean_objective = 0.0;
};

// One line per outcome: {"record": "result", ...} or
// {"record": "error", "sample_id", "error"}, then one
// {"record": "summary", ...} line. No timestamps or latencies, so identical
// runs give identical bytes.
void write_results(const std::filesystem::path& path,
                   std::span<const SampleOutcome> outcomes, const RunSummary& summary);

struct ResultsFile {
  std::vector<AttackResult> results;
  std::vector<SampleOutcome> errors;
  std::optional<RunSummary> summary;
};

ResultsFile read_results(const std::filesystem::path& path);

RunSummary summarize(std::string command, std::span<const SampleOutcome> outcomes);

}  // namespace memaudit
