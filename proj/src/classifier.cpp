#include "memaudit/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "memaudit/error.hpp"
#include "memaudit/random.hpp"

namespace memaudit {

using nlohmann::json;

std::string_view to_string(Label l) { return l == Label::T ? "T" : "NT"; }

Label label_from_string(std::string_view s) {
  if (s == "T") return Label::T;
  if (s == "NT") return Label::NT;
  throw ValidationError("unknown label '" + std::string(s) + "' (expected T or NT)");
}

std::vector<PreferenceExample> collect_preferences(std::span<const AttackResult> traces) {
  if (traces.empty()) throw ValidationError("no attack traces to collect preferences from");
  std::vector<PreferenceExample> out;
  for (const auto& r : traces) {
    if (r.trace.empty())
      throw ValidationError("attack result for '" + r.sample_id + "' has no trace");
    for (const auto& it : r.trace) {
      if (it.candidates.empty())
        throw ValidationError("trace of '" + r.sample_id + "' iteration " +
                              std::to_string(it.iteration) + " has no candidates");
      for (const auto& c : it.candidates) {
        out.push_back({c.text,
                       c.candidate_index == it.selected_index ? Label::T : Label::NT,
                       {r.sample_id, it.iteration, c.candidate_index},
                       r.domain});
      }
    }
  }
  return out;
}

std::vector<PreferenceExample> balance_downsample(std::span<const PreferenceExample> data,
                                                  std::uint64_t seed) {
  std::vector<PreferenceExample> pos, neg;
  for (const auto& e : data) (e.label == Label::T ? pos : neg).push_back(e);
  if (pos.empty() || neg.empty())
    throw ValidationError("balancing needs examples of both labels");

  Rng rng(seed);
  auto& major = pos.size() > neg.size() ? pos : neg;
  const auto& minor = pos.size() > neg.size() ? neg : pos;
  if (major.size() > minor.size()) {
    // Seeded partial shuffle keeps a uniform subset, then restore input order.
    std::vector<std::size_t> idx(major.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < minor.size(); ++i)
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    idx.resize(minor.size());
    std::sort(idx.begin(), idx.end());
    std::vector<PreferenceExample> kept;
    for (auto i : idx) kept.push_back(std::move(major[i]));
    major = std::move(kept);
  }
  std::vector<PreferenceExample> out = std::move(pos);
  out.insert(out.end(), neg.begin(), neg.end());
  shuffle(out, rng);
  return out;
}

DatasetSplit split_dataset(std::span<const PreferenceExample> data, std::uint64_t seed) {
  std::vector<PreferenceExample> all(data.begin(), data.end());
  Rng rng(seed);
  shuffle(all, rng);
  const std::size_t n_train = all.size() * 8 / 10;
  const std::size_t n_val = all.size() / 10;
  DatasetSplit split;
  split.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                          all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
  return split;
}

void save_preferences(const std::filesystem::path& path,
                      std::span<const PreferenceExample> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write preference file " + path.string());
  for (const auto& e : data) {
    json rec = {{"prompt", e.prompt_text},
                {"label", to_string(e.label)},
                {"domain", e.domain},
                {"source",
                 {{"sample_id", e.source.sample_id},
                  {"iteration", e.source.iteration},
                  {"candidate_index", e.source.candidate_index}}}};
    out << rec.dump() << '\n';
  }
}

std::vector<PreferenceExample> load_preferences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open preference file " + path.string());
  std::vector<PreferenceExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      PreferenceExample e;
      e.prompt_text = rec.at("prompt").get<std::string>();
      e.label = label_from_string(rec.at("label").get<std::string>());
      e.domain = rec.value("domain", std::string());
      if (rec.contains("source") && rec["source"].is_object()) {
        const auto& s = rec["source"];
        e.source = {s.value("sample_id", std::string()), s.value("iteration", 0),
                    s.value("candidate_index", 0)};
      }
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError(std::string("bad preference record: ") + ex.what(), lineno);
    } catch (const ValidationError& ex) {
      throw DataError(ex.what(), lineno);
    }
  }
  return out;
}

SparseVector featurize(const FeatureSpec& spec, std::string_view text) {
  const auto toks = tokenize(text, spec.mode);
  std::map<std::uint32_t, double> acc;
  for (std::uint32_t n = spec.n_min; n <= spec.n_max; ++n) {
    if (toks.size() < n) break;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      // Order and unit separator keep "a b" distinct from "ab".
      std::uint64_t h = fnv1a(std::to_string(n));
      for (std::size_t j = i; j < i + n; ++j) {
        h = fnv1a("\x1f", h);
        h = fnv1a(toks[j], h);
      }
      acc[static_cast<std::uint32_t>(h % spec.dimension)] += 1.0;
    }
  }
  double norm = 0.0;
  for (const auto& [_, v] : acc) norm += v * v;
  norm = std::sqrt(norm);
  SparseVector out;
  out.reserve(acc.size());
  for (const auto& [i, v] : acc) out.emplace_back(i, v / norm);
  return out;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(const std::vector<double>& w, const SparseVector& x) {
  double s = 0.0;
  for (const auto& [i, v] : x) s += w[i] * v;
  return s;
}

}  // namespace

double TriggerModel::probability(std::string_view prompt) const {
  return sigmoid(dot(weights, featurize(features, prompt)) + bias);
}

Prediction TriggerModel::predict(std::string_view prompt) const {
  const double p = probability(prompt);
  return {p >= threshold ? Label::T : Label::NT, p};
}

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'A', 'T', 'R', 'I', 'G', '\0', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &value, 8);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw DataError("trigger model file is truncated");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void TriggerModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write trigger model " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, features.dimension);
  put<std::uint32_t>(out, features.n_min);
  put<std::uint32_t>(out, features.n_max);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.mode));
  put<std::uint64_t>(out, seed);
  put<double>(out, threshold);
  put<double>(out, bias);
  std::uint32_t nnz = 0;
  for (double w : weights) nnz += (w != 0.0);
  put<std::uint32_t>(out, nnz);
  for (std::uint32_t i = 0; i < weights.size(); ++i) {
    if (weights[i] == 0.0) continue;
    put<std::uint32_t>(out, i);
    put<double>(out, weights[i]);
  }
  if (!out) throw DataError("failed writing trigger model " + path.string());
}

TriggerModel TriggerModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trigger model " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError(path.string() + " is not a trigger model file");
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw DataError("unsupported trigger model version " + std::to_string(version));

  TriggerModel m;
  m.features.dimension = get<std::uint32_t>(in);
  m.features.n_min = get<std::uint32_t>(in);
  m.features.n_max = get<std::uint32_t>(in);
  const auto mode = get<std::uint32_t>(in);
  if (m.features.dimension == 0 || m.features.n_min < 1 ||
      m.features.n_min > m.features.n_max || mode > 1)
    throw DataError("corrupt feature spec in " + path.string());
  m.features.mode = static_cast<TokenizerMode>(mode);
  m.seed = get<std::uint64_t>(in);
  m.threshold = get<double>(in);
  m.bias = get<double>(in);
  m.weights.assign(m.features.dimension, 0.0);
  const auto nnz = get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < nnz; ++k) {
    const auto i = get<std::uint32_t>(in);
    const auto w = get<double>(in);
    if (i >= m.features.dimension || !std::isfinite(w))
      throw DataError("corrupt weight entry in " + path.string());
    m.weights[i] = w;
  }
  return m;
}

TrainReport train_trigger_model(std::span<const PreferenceExample> data,
                                const TrainConfig& config) {
  if (config.dimension == 0) throw ValidationError("feature dimension must be > 0");
  if (config.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
  if (!(config.threshold > 0.0 && config.threshold < 1.0))
    throw ValidationError("threshold must be in (0, 1)");

  std::size_t n_pos = 0;
  for (const auto& e : data) n_pos += (e.label == Label::T);
  const std::size_t n_neg = data.size() - n_pos;
  if (n_pos < 2 || n_neg < 2)
    throw ValidationError("training needs at least two examples of each label (got " +
                          std::to_string(n_pos) + " T, " + std::to_string(n_neg) + " NT)");

  TrainReport report;
  {
    std::map<std::string, std::set<Label>> labels_of;
    for (const auto& e : data) labels_of[e.prompt_text].insert(e.label);
    std::size_t conflicting = 0;
    for (const auto& [_, ls] : labels_of) conflicting += (ls.size() > 1);
    if (conflicting > 0)
      report.warnings.push_back(std::to_string(conflicting) +
                                " prompt(s) appear with both labels; data is not separable");
  }

  double w_pos = config.weight_t;
  double w_neg = config.weight_nt;
  if (config.balance_class_weights) {
    const auto n = static_cast<double>(data.size());
    w_pos = n / (2.0 * static_cast<double>(n_pos));
    w_neg = n / (2.0 * static_cast<double>(n_neg));
  }

  TriggerModel& m = report.model;
  m.features.dimension = config.dimension;
  m.seed = config.seed;
  m.threshold = config.threshold;
  m.weights.assign(config.dimension, 0.0);

  std::vector<SparseVector> x;
  x.reserve(data.size());
  for (const auto& e : data) x.push_back(featurize(m.features, e.prompt_text));

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    const double lr = config.learning_rate / std::sqrt(1.0 + epoch);
    for (auto i : order) {
      const bool pos = data[i].label == Label::T;
      const double p = sigmoid(dot(m.weights, x[i]) + m.bias);
      const double g = (pos ? w_pos : w_neg) * (p - (pos ? 1.0 : 0.0));
      for (const auto& [j, v] : x[i])
        m.weights[j] -= lr * (g * v + config.l2 * m.weights[j]);
      m.bias -= lr * g;
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = sigmoid(dot(m.weights, x[i]) + m.bias);
    correct += ((p >= m.threshold) == (data[i].label == Label::T));
  }
  report.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return report;
}

double macro_f1(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size())
    throw ValidationError("truth and prediction lengths differ");
  std::array<std::size_t, 2> tp{}, fp{}, fn{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t == p) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  if (tp[0] + fn[0] == 0 || tp[1] + fn[1] == 0)
    throw ValidationError("macro-F1 needs both labels in the test set");
  double sum = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return sum / 2.0;
}

double eval_macro_f1(const TriggerModel& model, std::span<const PreferenceExample> testset) {
  std::vector<Label> truth, pred;
  truth.reserve(testset.size());
  pred.reserve(testset.size());
  for (const auto& e : testset) {
    truth.push_back(e.label);
    pred.push_back(model.predict(e.prompt_text).label);
  }
  return macro_f1(truth, pred);
}

RemoteTriggerScorer::RemoteTriggerScorer(std::string base_url, double timeout,
                                         int max_retries, double backoff_base)
    : base_url_(std::move(base_url)),
      timeout_(timeout),
      max_retries_(max_retries),
      backoff_base_(backoff_base) {
  std::tie(scheme_host_port_, path_prefix_) = split_base_url(base_url_);
}

double RemoteTriggerScorer::probability(std::string_view prompt) const {
  const std::string body = json{{"prompt", prompt}}.dump();
  Rng rng(fnv1a(prompt));
  int last_status = 0;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(backoff_delay(attempt - 1, backoff_base_, rng));
    httplib::Client client(scheme_host_port_);
    const auto t = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(timeout_));
    client.set_connection_timeout(t);
    client.set_read_timeout(t);
    auto res = client.Post(path_prefix_ + "/score", body, "application/json");
    if (!res) {
      last_status = 0;
      continue;
    }
    last_status = res->status;
    if (res->status == 429 || res->status >= 500) continue;
    if (res->status != 200)
      throw GatewayError("scorer " + base_url_ + " returned HTTP " +
                             std::to_string(res->status),
                         res->status);
    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw MalformedResponseError("scorer response is not JSON");
    }
    if (!doc.is_object() || !doc.contains("probability") || !doc["probability"].is_number())
      throw MalformedResponseError("scorer response lacks a numeric 'probability'");
    const double p = doc["probability"].get<double>();
    if (!(p >= 0.0 && p <= 1.0))
      throw MalformedResponseError("scorer probability outside [0, 1]");
    return p;
  }
  throw RetriesExhaustedError("scorer " + base_url_ + " failed after " +
                                  std::to_string(max_retries_ + 1) + " attempts",
                              last_status);
}

}  // namespace memaudit
