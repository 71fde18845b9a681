#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memaudit/attack.hpp"
#include "memaudit/text_metrics.hpp"

namespace memaudit {

// T: the prompt triggers memorized output; NT: it does not.
enum class Label { T, NT };

std::string_view to_string(Label l);
Label label_from_string(std::string_view s);

struct PreferenceSource {
  std::string sample_id;
  int iteration = 0;
  int candidate_index = 0;

  friend bool operator==(const PreferenceSource&, const PreferenceSource&) = default;
};

struct PreferenceExample {
  std::string prompt_text;
  Label label = Label::NT;
  PreferenceSource source;
  std::string domain;

  friend bool operator==(const PreferenceExample&, const PreferenceExample&) = default;
};

// Per iteration: the selected candidate is T, every other candidate NT.
// Throws ValidationError for an empty list or a trace without candidates.
std::vector<PreferenceExample> collect_preferences(std::span<const AttackResult> traces);

// Downsamples the majority label to the minority count, then shuffles.
std::vector<PreferenceExample> balance_downsample(std::span<const PreferenceExample> data,
                                                  std::uint64_t seed);

struct DatasetSplit {
  std::vector<PreferenceExample> train;
  std::vector<PreferenceExample> validation;
  std::vector<PreferenceExample> test;
};

// Seeded shuffle then 80/10/10 cut.
DatasetSplit split_dataset(std::span<const PreferenceExample> data, std::uint64_t seed);

void save_preferences(const std::filesystem::path& path,
                      std::span<const PreferenceExample> data);
std::vector<PreferenceExample> load_preferences(const std::filesystem::path& path);

// Hashed token n-grams, L2-normalized.
struct FeatureSpec {
  std::uint32_t dimension = 1u << 18;
  std::uint32_t n_min = 1;
  std::uint32_t n_max = 3;
  TokenizerMode mode = kDefaultTokenizer;
};

using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

// Sorted by index, no duplicates.
SparseVector featurize(const FeatureSpec& spec, std::string_view text);

struct Prediction {
  Label label = Label::NT;
  double probability = 0.0;
};

class TriggerModel final : public TriggerScorer {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  FeatureSpec features;
  std::vector<double> weights;  // size features.dimension
  double bias = 0.0;
  std::uint64_t seed = 0;
  double threshold = 0.5;

  double probability(std::string_view prompt) const override;
  Prediction predict(std::string_view prompt) const;

  // Versioned little-endian binary with the feature spec embedded.
  void save(const std::filesystem::path& path) const;
  static TriggerModel load(const std::filesystem::path& path);
};

struct TrainConfig {
  std::uint32_t dimension = 1u << 18;
  int epochs = 40;
  double learning_rate = 0.5;
  double l2 = 1e-6;
  // true: weight each class by N / (2 * N_class); false: use the two fields.
  bool balance_class_weights = true;
  double weight_t = 1.0;
  double weight_nt = 1.0;
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

struct TrainReport {
  TriggerModel model;
  std::vector<std::string> warnings;
  double train_accuracy = 0.0;
};

// Class-weighted logistic regression fitted by seeded SGD. Needs at least two
// examples per label. Data where the same prompt carries both labels is
// flagged in warnings; the model is still returned.
TrainReport train_trigger_model(std::span<const PreferenceExample> data,
                                const TrainConfig& config);

// Unweighted mean of per-label F1. Throws ValidationError if the truth
// contains only one label.
double macro_f1(std::span<const Label> truth, std::span<const Label> predicted);
double eval_macro_f1(const TriggerModel& model, std::span<const PreferenceExample> testset);

// External scorer: POST {base_url}/score {"prompt"} -> {"probability"}.
class RemoteTriggerScorer final : public TriggerScorer {
 public:
  RemoteTriggerScorer(std::string base_url, double timeout = 30.0, int max_retries = 2,
                      double backoff_base = 0.5);
  double probability(std::string_view prompt) const override;

 private:
  std::string base_url_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  double timeout_;
  int max_retries_;
  double backoff_base_;
};

}  // namespace memaudit
