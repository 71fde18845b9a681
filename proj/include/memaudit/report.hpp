#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memaudit/attack.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/gateway.hpp"

namespace memaudit {

enum class MemberLabel { member, non_member };

std::string_view to_string(MemberLabel m);
std::optional<MemberLabel> member_label_from_string(std::string_view s);

struct MetricRow {
  std::string sample_id;
  std::string domain;
  int seq_len = 0;
  Method method = Method::ours;
  double mem = 0.0;
  double lcs_p = 0.0;
  std::optional<double> dis;  // present iff method == ours
  bool refused = false;
  std::optional<MemberLabel> member_label;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

// Default refusal phrases, also shipped as assets/refusal_phrases.txt.
std::vector<std::string> default_refusal_phrases();

// One phrase per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> load_refusal_phrases(const std::filesystem::path& path);

enum class RefusalMode { keyword, judge };

class RefusalDetector {
 public:
  // Keyword mode.
  explicit RefusalDetector(std::vector<std::string> phrases = default_refusal_phrases());
  // Judge mode: asks `judge` for a REFUSAL / ANSWERED verdict.
  explicit RefusalDetector(ChatModel& judge);

  RefusalMode mode() const noexcept { return judge_ ? RefusalMode::judge : RefusalMode::keyword; }

  // Throws MalformedResponseError when the judge reply has no verdict token.
  bool is_refusal(std::string_view output) const;

 private:
  std::vector<std::string> phrases_;
  ChatModel* judge_ = nullptr;
};

// Messages sent to the judge for one output.
Messages judge_messages(std::string_view output);

// Finds the first REFUSAL or ANSWERED word (case-sensitive) in a judge reply.
std::optional<bool> parse_judge_verdict(std::string_view reply);

// Membership comes from sample.meta["membership"] ("member"/"non_member").
MetricRow compute_metrics(const AttackResult& result, const PretrainSample& sample,
                          const RefusalDetector& refusal);

struct GroupStats {
  std::vector<std::string> key;  // one value per group-by field
  double mean_mem = 0.0;
  double mean_lcs_p = 0.0;
  std::optional<double> mean_dis;  // absent when no row in the group has dis
  double refusal_rate = 0.0;
  std::size_t count = 0;

  friend bool operator==(const GroupStats&, const GroupStats&) = default;
};

struct MetricTable {
  std::vector<std::string> group_by;
  std::vector<GroupStats> groups;  // sorted by key

  friend bool operator==(const MetricTable&, const MetricTable&) = default;
};

// Group fields: domain, seq_len, method, member_label, refused. An empty
// list gives a single group over all rows.
MetricTable aggregate(std::span<const MetricRow> rows,
                      const std::vector<std::string>& group_by);

enum class ExportFormat { csv, jsonl };

// Floats are written with 4 decimals; identical tables give identical bytes.
void export_table(const MetricTable& table, ExportFormat format,
                  const std::filesystem::path& path);
MetricTable read_table_jsonl(const std::filesystem::path& path);

inline constexpr std::string_view kMetricCsvHeader =
    "sample_id,domain,seq_len,method,mem,lcs_p,dis,refused,member_label";

void export_rows(std::span<const MetricRow> rows, ExportFormat format,
                 const std::filesystem::path& path);
std::vector<MetricRow> read_rows_jsonl(const std::filesystem::path& path);

// "%.4f" in the C locale.
std::string format_fixed4(double v);

}  // namespace memaudit
