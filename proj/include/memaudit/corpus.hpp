#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "memaudit/text_metrics.hpp"

namespace memaudit {

using Meta = std::map<std::string, std::string>;

struct RawDocument {
  std::string id;
  std::string domain;
  std::string text;
  Meta meta;
};

// One document cut into an attack prefix and the ground-truth suffix.
//
// The suffix is guarded: every access goes through suffix() or
// suffix_text(), which count reads and throw SuffixWithheldError once the
// suffix has been withheld. Practical-mode attacks run against withheld
// samples so the guard proves they never look at the ground truth.
class PretrainSample {
 public:
  PretrainSample() = default;
  PretrainSample(std::string id, std::string domain, int seq_len,
                 std::string prefix_text, std::string suffix_text,
                 TokenizerMode mode = kDefaultTokenizer, Meta meta = {});

  std::string id;
  std::string domain;
  int seq_len = 0;
  TokenSeq prefix;
  std::string prefix_text;
  Meta meta;

  const TokenSeq& suffix() const;
  const std::string& suffix_text() const;

  // Suffix token budget derived from seq_len; never touches the suffix.
  std::size_t suffix_budget() const;

  bool suffix_withheld() const noexcept { return !suffix_.has_value(); }
  void withhold_suffix() noexcept;

  // Number of suffix()/suffix_text() calls, shared across copies.
  std::size_t suffix_reads() const noexcept { return reads_->load(); }

 private:
  struct Suffix {
    TokenSeq tokens;
    std::string text;
  };
  std::optional<Suffix> suffix_;
  std::shared_ptr<std::atomic<std::size_t>> reads_ =
      std::make_shared<std::atomic<std::size_t>>(0);
};

// Prefix token count for a total budget: 200 -> 66, 300 -> 100, 500 -> 167,
// anything else round(0.33 * seq_len).
std::size_t prefix_budget(int seq_len);

// One JSON object per line: {"id", "domain", "text", "meta"?}. Throws
// DataError carrying the 1-based line number on parse errors, missing
// fields, empty text or duplicate ids.
std::vector<RawDocument> load_corpus(const std::filesystem::path& path);

// Throws DataError if the document has fewer than seq_len tokens.
PretrainSample split_sample(const RawDocument& doc, int seq_len,
                            TokenizerMode mode = kDefaultTokenizer);

// Seeded uniform sample without replacement, returned in input order.
std::vector<RawDocument> sample_subset(const std::vector<RawDocument>& docs,
                                       std::size_t n, std::uint64_t seed);

// Same procedure over split samples, used for alpha calibration subsets.
std::vector<PretrainSample> sample_subset(
    const std::vector<PretrainSample>& samples, std::size_t n,
    std::uint64_t seed);

// Samples file written by `memaudit split`.
void save_samples(const std::filesystem::path& path,
                  const std::vector<PretrainSample>& samples);
std::vector<PretrainSample> load_samples(
    const std::filesystem::path& path,
    TokenizerMode mode = kDefaultTokenizer);

}  // namespace memaudit
