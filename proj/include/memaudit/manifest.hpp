#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memaudit/attack.hpp"
#include "memaudit/classifier.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/gateway.hpp"
#include "memaudit/report.hpp"
#include "memaudit/templates.hpp"

namespace memaudit {

// How one model role is served.
struct EndpointSpec {
  enum class Kind { openai, simulated_victim, simulated_attacker, simulated_initializer };
  Kind kind = Kind::openai;
  EndpointConfig http;
  SimulatedVictimSpec victim;
  // "samples": fill victim memory from the run's samples; otherwise empty
  // and `victim.memory` was given inline or loaded from a samples file.
  bool memory_from_samples = false;
  SimulatedAttackerSpec attacker;
  SimulatedInitializerSpec initializer;
};

// A parsed and validated run manifest (JSON). Relative paths are resolved
// against the manifest's directory.
struct RunManifest {
  std::filesystem::path base_dir;
  std::optional<std::filesystem::path> corpus;   // raw documents, split per seq_len
  std::optional<std::filesystem::path> samples;  // pre-split samples
  std::filesystem::path output_dir;
  std::vector<int> seq_lens;
  std::vector<std::string> domains;  // empty: all
  std::uint64_t seed = 0;
  int workers = 1;
  TokenizerMode tokenizer = kDefaultTokenizer;

  std::optional<EndpointSpec> attacker;
  std::optional<EndpointSpec> victim;
  std::optional<EndpointSpec> initializer;
  std::optional<EndpointSpec> judge;

  AttackConfig attack;
  std::optional<double> alpha_override;
  std::optional<double> default_alpha;
  AlphaSchedule alpha_schedule = AlphaSchedule::defaults();

  std::optional<std::filesystem::path> classifier_model;
  std::optional<std::string> scorer_endpoint;
  std::optional<std::filesystem::path> templates_file;

  RefusalMode refusal_mode = RefusalMode::keyword;
  std::optional<std::filesystem::path> refusal_phrases_file;

  // Structural parse; throws ValidationError naming the offending key.
  static RunManifest parse(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static RunManifest load(const std::filesystem::path& path);

  enum class Purpose { attack, baseline, calibrate };
  // Checks everything a run needs before any request is sent: files exist,
  // roles are present, credentials are set, configs are in range.
  void validate(Purpose purpose) const;

  // Samples from `samples` or from splitting `corpus` at each seq_len,
  // filtered by domain. too_short counts skipped documents.
  std::vector<PretrainSample> load_samples(std::size_t* too_short = nullptr) const;

  // Alpha for one sample: override, then schedule, then default_alpha.
  std::optional<double> alpha_for(const PretrainSample& sample) const;

  TemplateLibrary templates() const;
};

// Instantiates a model for a role. Simulated victims configured with
// memory "samples" are filled from `samples`.
std::unique_ptr<ChatModel> make_model(const EndpointSpec& spec,
                                      const std::vector<PretrainSample>& samples,
                                      std::uint64_t seed);

}  // namespace memaudit
