#include "memaudit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "memaudit/error.hpp"
#include "memaudit/random.hpp"

namespace memaudit {

using nlohmann::json;

PretrainSample::PretrainSample(std::string id_, std::string domain_,
                               int seq_len_, std::string prefix_text_,
                               std::string suffix_text_, TokenizerMode mode,
                               Meta meta_)
    : id(std::move(id_)),
      domain(std::move(domain_)),
      seq_len(seq_len_),
      prefix(tokenize(prefix_text_, mode)),
      prefix_text(std::move(prefix_text_)),
      meta(std::move(meta_)) {
  suffix_ = Suffix{tokenize(suffix_text_, mode), std::move(suffix_text_)};
}

const TokenSeq& PretrainSample::suffix() const {
  reads_->fetch_add(1);
  if (!suffix_) throw SuffixWithheldError("suffix of sample '" + id + "' is withheld");
  return suffix_->tokens;
}

const std::string& PretrainSample::suffix_text() const {
  reads_->fetch_add(1);
  if (!suffix_) throw SuffixWithheldError("suffix of sample '" + id + "' is withheld");
  return suffix_->text;
}

std::size_t PretrainSample::suffix_budget() const {
  const auto total = static_cast<std::size_t>(std::max(seq_len, 0));
  return total > prefix.size() ? total - prefix.size() : 0;
}

void PretrainSample::withhold_suffix() noexcept { suffix_.reset(); }

std::size_t prefix_budget(int seq_len) {
  switch (seq_len) {
    case 200:
      return 66;
    case 300:
      return 100;
    case 500:
      return 167;
    default:
      return static_cast<std::size_t>(std::lround(0.33 * seq_len));
  }
}

namespace {

std::string require_string(const json& rec, const char* key,
                           std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end())
    throw DataError(std::string("missing field '") + key + "'", line);
  if (!it->is_string())
    throw DataError(std::string("field '") + key + "' must be a string", line);
  return it->get<std::string>();
}

Meta parse_meta(const json& rec, std::size_t line) {
  Meta meta;
  auto it = rec.find("meta");
  if (it == rec.end() || it->is_null()) return meta;
  if (!it->is_object()) throw DataError("field 'meta' must be an object", line);
  for (auto& [k, v] : it->items())
    meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return meta;
}

std::vector<std::size_t> pick_indices(std::size_t total, std::size_t n,
                                      std::uint64_t seed) {
  if (n > total)
    throw ValidationError("cannot sample " + std::to_string(n) + " of " +
                          std::to_string(total) + " items");
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots end up a uniform sample.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<RawDocument> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());

  std::vector<RawDocument> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!rec.is_object()) throw DataError("record is not an object", lineno);

    RawDocument doc;
    doc.id = require_string(rec, "id", lineno);
    doc.domain = require_string(rec, "domain", lineno);
    doc.text = require_string(rec, "text", lineno);
    doc.meta = parse_meta(rec, lineno);
    if (token_spans(doc.text).empty()) throw DataError("empty text", lineno);
    if (!seen.insert(doc.id).second)
      throw DataError("duplicate id '" + doc.id + "'", lineno);
    docs.push_back(std::move(doc));
  }
  return docs;
}

PretrainSample split_sample(const RawDocument& doc, int seq_len,
                            TokenizerMode mode) {
  if (seq_len < 2)
    throw ValidationError("seq_len must be at least 2, got " +
                          std::to_string(seq_len));
  const auto spans = token_spans(doc.text);
  const auto total = static_cast<std::size_t>(seq_len);
  if (spans.size() < total)
    throw DataError("document '" + doc.id + "' is too short: " +
                    std::to_string(spans.size()) + " tokens available, " +
                    std::to_string(total) + " required");

  const std::size_t n_prefix = prefix_budget(seq_len);
  if (n_prefix == 0 || n_prefix >= total)
    throw ValidationError("seq_len " + std::to_string(seq_len) +
                          " leaves an empty prefix or suffix");

  const std::size_t prefix_end = spans[n_prefix - 1].second;
  const std::size_t suffix_end = spans[total - 1].second;
  return PretrainSample(doc.id, doc.domain, seq_len,
                        doc.text.substr(0, prefix_end),
                        doc.text.substr(prefix_end, suffix_end - prefix_end),
                        mode, doc.meta);
}

std::vector<RawDocument> sample_subset(const std::vector<RawDocument>& docs,
                                       std::size_t n, std::uint64_t seed) {
  std::vector<RawDocument> out;
  for (auto i : pick_indices(docs.size(), n, seed)) out.push_back(docs[i]);
  return out;
}

std::vector<PretrainSample> sample_subset(
    const std::vector<PretrainSample>& samples, std::size_t n,
    std::uint64_t seed) {
  std::vector<PretrainSample> out;
  for (auto i : pick_indices(samples.size(), n, seed))
    out.push_back(samples[i]);
  return out;
}

void save_samples(const std::filesystem::path& path,
                  const std::vector<PretrainSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write samples file " + path.string());
  for (const auto& s : samples) {
    json rec = {{"id", s.id},
                {"domain", s.domain},
                {"seq_len", s.seq_len},
                {"prefix", s.prefix_text},
                {"prefix_tokens", s.prefix.size()}};
    if (s.suffix_withheld()) {
      rec["suffix"] = nullptr;
    } else {
      rec["suffix"] = s.suffix_text();
      rec["suffix_tokens"] = s.suffix().size();
    }
    if (!s.meta.empty()) rec["meta"] = s.meta;
    out << rec.dump() << '\n';
  }
}

std::vector<PretrainSample> load_samples(const std::filesystem::path& path,
                                         TokenizerMode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open samples file " + path.string());

  std::vector<PretrainSample> samples;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!rec.is_object()) throw DataError("record is not an object", lineno);
    auto id = require_string(rec, "id", lineno);
    auto domain = require_string(rec, "domain", lineno);
    auto prefix = require_string(rec, "prefix", lineno);
    if (!rec.contains("seq_len") || !rec["seq_len"].is_number_integer())
      throw DataError("missing integer field 'seq_len'", lineno);
    const int seq_len = rec["seq_len"].get<int>();
    const bool withheld = !rec.contains("suffix") || rec["suffix"].is_null();
    std::string suffix = withheld ? std::string()
                                  : require_string(rec, "suffix", lineno);
    if (!seen.insert(id).second)
      throw DataError("duplicate id '" + id + "'", lineno);

    PretrainSample s(std::move(id), std::move(domain), seq_len,
                     std::move(prefix), std::move(suffix), mode,
                     parse_meta(rec, lineno));
    if (withheld) s.withhold_suffix();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace memaudit
