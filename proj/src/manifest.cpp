#include "memaudit/manifest.hpp"

#include <fstream>
#include <set>

#include "memaudit/error.hpp"

namespace memaudit {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (auto& [k, _] : obj.items())
    if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + where);
}

const json& require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  return j;
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& where, T fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

TriggerRule parse_rule(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where, {"contains", "tokens", "emit", "fraction", "filler"});
  TriggerRule r;
  if (j.contains("tokens")) {
    r.kind = PatternKind::token_set;
    r.tokens = get_as<std::vector<std::string>>(j, "tokens", where, {});
  } else {
    r.kind = PatternKind::substring;
    r.substring = get_as<std::string>(j, "contains", where, "");
  }
  const auto emit = get_as<std::string>(j, "emit", where, "suffix");
  if (emit == "suffix") {
    r.emit = EmitKind::suffix;
  } else if (emit == "partial") {
    r.emit = EmitKind::partial;
    r.fraction = get_as<double>(j, "fraction", where, 0.5);
  } else if (emit == "filler") {
    r.emit = EmitKind::filler;
    if (j.contains("filler")) r.filler = get_as<std::string>(j, "filler", where, "");
  } else {
    throw ValidationError(where + ".emit must be suffix, partial or filler");
  }
  return r;
}

EndpointSpec parse_endpoint(const json& j, const std::string& where,
                            const std::filesystem::path& base) {
  require_object(j, where);
  EndpointSpec spec;
  const auto type = get_as<std::string>(j, "type", where, "openai");
  if (type == "openai") {
    check_keys(j, where,
               {"type", "base_url", "model", "api_key_env", "timeout", "max_retries",
                "max_in_flight", "temperature", "max_new_tokens", "backoff_base",
                "supports_n"});
    spec.kind = EndpointSpec::Kind::openai;
    auto& c = spec.http;
    c.base_url = get_as<std::string>(j, "base_url", where, "");
    c.model_name = get_as<std::string>(j, "model", where, "");
    c.api_key_env = get_as<std::string>(j, "api_key_env", where, "");
    c.timeout = get_as<double>(j, "timeout", where, c.timeout);
    c.max_retries = get_as<int>(j, "max_retries", where, c.max_retries);
    c.max_in_flight = get_as<int>(j, "max_in_flight", where, c.max_in_flight);
    c.temperature = get_as<double>(j, "temperature", where, c.temperature);
    c.max_new_tokens = get_as<int>(j, "max_new_tokens", where, c.max_new_tokens);
    c.backoff_base = get_as<double>(j, "backoff_base", where, c.backoff_base);
    c.supports_n = get_as<bool>(j, "supports_n", where, c.supports_n);
  } else if (type == "simulated_victim") {
    check_keys(j, where,
               {"type", "memory", "trigger_rules", "refusal_patterns", "default_output", "seed"});
    spec.kind = EndpointSpec::Kind::simulated_victim;
    auto& v = spec.victim;
    const json mem = j.value("memory", json("samples"));
    if (mem.is_string() && mem.get<std::string>() == "samples") {
      spec.memory_from_samples = true;
    } else if (mem.is_string()) {
      // Path to a samples file carrying the suffixes.
      const auto path = resolve(base, mem.get<std::string>());
      if (!std::filesystem::exists(path))
        throw ValidationError(where + ".memory file " + path.string() + " does not exist");
      for (const auto& s : memaudit::load_samples(path))
        if (!s.suffix_withheld()) v.memory[s.id] = s.suffix_text();
    } else if (mem.is_object()) {
      for (auto& [id, text] : mem.items()) {
        if (!text.is_string()) throw ValidationError(where + ".memory values must be strings");
        v.memory[id] = text.get<std::string>();
      }
    } else {
      throw ValidationError(where + ".memory must be \"samples\", a path or an object");
    }
    if (j.contains("trigger_rules")) {
      if (!j["trigger_rules"].is_array())
        throw ValidationError(where + ".trigger_rules must be an array");
      for (std::size_t i = 0; i < j["trigger_rules"].size(); ++i)
        v.trigger_rules.push_back(parse_rule(j["trigger_rules"][i],
                                             where + ".trigger_rules[" + std::to_string(i) + "]"));
    }
    v.refusal_patterns = get_as<std::vector<std::string>>(j, "refusal_patterns", where, {});
    v.default_output = get_as<std::string>(j, "default_output", where, "");
    v.seed = get_as<std::uint64_t>(j, "seed", where, 0);
  } else if (type == "simulated_attacker") {
    check_keys(j, where, {"type", "seed", "vocabulary", "injections"});
    spec.kind = EndpointSpec::Kind::simulated_attacker;
    auto& a = spec.attacker;
    a.seed = get_as<std::uint64_t>(j, "seed", where, 0);
    a.vocabulary = get_as<std::vector<std::string>>(j, "vocabulary", where, {});
    if (j.contains("injections")) {
      for (const auto& inj : j["injections"]) {
        const std::string w = where + ".injections";
        require_object(inj, w);
        check_keys(inj, w, {"iteration", "candidate_index", "text"});
        a.injections.push_back({get_as<int>(inj, "iteration", w, 1),
                                get_as<int>(inj, "candidate_index", w, 0),
                                get_as<std::string>(inj, "text", w, "")});
      }
    }
  } else if (type == "simulated_initializer") {
    check_keys(j, where, {"type", "marker", "head_tokens", "question_template"});
    spec.kind = EndpointSpec::Kind::simulated_initializer;
    auto& s = spec.initializer;
    s.marker = get_as<std::string>(j, "marker", where, s.marker);
    s.head_tokens = get_as<std::size_t>(j, "head_tokens", where, s.head_tokens);
    s.question_template = get_as<std::string>(j, "question_template", where, s.question_template);
  } else {
    throw ValidationError(where + ".type '" + type + "' is not one of openai, simulated_victim, "
                          "simulated_attacker, simulated_initializer");
  }
  return spec;
}

void validate_endpoint(const EndpointSpec& spec, const std::string& role) {
  try {
    if (spec.kind == EndpointSpec::Kind::openai) spec.http.validate();
    if (spec.kind == EndpointSpec::Kind::simulated_victim) spec.victim.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("endpoints." + role + ": " + e.what());
  }
}

void require_file(const std::optional<std::filesystem::path>& p, const std::string& what) {
  if (p && !std::filesystem::is_regular_file(*p))
    throw ValidationError(what + " " + p->string() + " does not exist");
}

}  // namespace

RunManifest RunManifest::parse(const json& doc, const std::filesystem::path& base_dir) {
  require_object(doc, "manifest");
  check_keys(doc, "manifest",
             {"corpus", "samples", "output_dir", "seq_lens", "domains", "seed", "workers",
              "tokenizer", "endpoints", "attack", "alpha_schedule", "default_alpha",
              "templates_file", "refusal"});
  RunManifest m;
  m.base_dir = base_dir;
  const std::string w = "manifest";
  if (doc.contains("corpus")) m.corpus = resolve(base_dir, get_as<std::string>(doc, "corpus", w, ""));
  if (doc.contains("samples"))
    m.samples = resolve(base_dir, get_as<std::string>(doc, "samples", w, ""));
  m.output_dir = resolve(base_dir, get_as<std::string>(doc, "output_dir", w, "out"));
  m.seq_lens = get_as<std::vector<int>>(doc, "seq_lens", w, {});
  m.domains = get_as<std::vector<std::string>>(doc, "domains", w, {});
  m.seed = get_as<std::uint64_t>(doc, "seed", w, 0);
  m.workers = get_as<int>(doc, "workers", w, 1);
  m.tokenizer = tokenizer_mode_from_string(
      get_as<std::string>(doc, "tokenizer", w, std::string(to_string(kDefaultTokenizer))));

  if (doc.contains("endpoints")) {
    const auto& eps = require_object(doc["endpoints"], "endpoints");
    check_keys(eps, "endpoints", {"attacker", "victim", "initializer", "judge"});
    auto role = [&](const char* name, std::optional<EndpointSpec>& slot) {
      if (eps.contains(name))
        slot = parse_endpoint(eps[name], std::string("endpoints.") + name, base_dir);
    };
    role("attacker", m.attacker);
    role("victim", m.victim);
    role("initializer", m.initializer);
    role("judge", m.judge);
  }

  if (doc.contains("attack")) {
    const auto& a = require_object(doc["attack"], "attack");
    const std::string aw = "attack";
    check_keys(a, aw,
               {"alpha", "n_candidates", "iterations", "init_mode", "scorer",
                "meta_prompt_template", "paraphrase_template", "attacker_temperature",
                "victim_parallelism", "classifier_model", "scorer_endpoint"});
    auto& c = m.attack;
    if (a.contains("alpha") && !a["alpha"].is_null()) m.alpha_override = get_as<double>(a, "alpha", aw, 0.0);
    c.n_candidates = get_as<int>(a, "n_candidates", aw, c.n_candidates);
    c.iterations = get_as<int>(a, "iterations", aw, c.iterations);
    c.init_mode = init_mode_from_string(get_as<std::string>(a, "init_mode", aw, "with_suffix"));
    c.scorer = scorer_kind_from_string(get_as<std::string>(a, "scorer", aw, "rouge_suffix"));
    c.meta_prompt_template = get_as<std::string>(a, "meta_prompt_template", aw, "default");
    c.paraphrase_template = get_as<std::string>(a, "paraphrase_template", aw, "default");
    c.attacker_temperature = get_as<double>(a, "attacker_temperature", aw, c.attacker_temperature);
    c.victim_parallelism = get_as<int>(a, "victim_parallelism", aw, c.victim_parallelism);
    if (a.contains("classifier_model"))
      m.classifier_model = resolve(base_dir, get_as<std::string>(a, "classifier_model", aw, ""));
    if (a.contains("scorer_endpoint"))
      m.scorer_endpoint = get_as<std::string>(a, "scorer_endpoint", aw, "");
  }
  m.attack.seed = m.seed;

  if (doc.contains("alpha_schedule")) {
    const auto& sched = require_object(doc["alpha_schedule"], "alpha_schedule");
    for (auto& [domain, lens] : sched.items()) {
      require_object(lens, "alpha_schedule." + domain);
      for (auto& [len, alpha] : lens.items()) {
        int seq_len = 0;
        try {
          seq_len = std::stoi(len);
        } catch (const std::exception&) {
          throw ValidationError("alpha_schedule." + domain + " key '" + len +
                                "' is not a sequence length");
        }
        if (!alpha.is_number())
          throw ValidationError("alpha_schedule." + domain + "." + len + " must be a number");
        m.alpha_schedule.set(domain, seq_len, alpha.get<double>());
      }
    }
  }
  if (doc.contains("default_alpha")) m.default_alpha = get_as<double>(doc, "default_alpha", w, 0.4);
  if (doc.contains("templates_file"))
    m.templates_file = resolve(base_dir, get_as<std::string>(doc, "templates_file", w, ""));

  if (doc.contains("refusal")) {
    const auto& r = require_object(doc["refusal"], "refusal");
    check_keys(r, "refusal", {"mode", "phrases_file"});
    const auto mode = get_as<std::string>(r, "mode", "refusal", "keyword");
    if (mode == "keyword")
      m.refusal_mode = RefusalMode::keyword;
    else if (mode == "judge")
      m.refusal_mode = RefusalMode::judge;
    else
      throw ValidationError("refusal.mode must be keyword or judge");
    if (r.contains("phrases_file"))
      m.refusal_phrases_file = resolve(base_dir, get_as<std::string>(r, "phrases_file", "refusal", ""));
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

void RunManifest::validate(Purpose purpose) const {
  if (corpus.has_value() == samples.has_value())
    throw ValidationError("manifest needs exactly one of 'corpus' or 'samples'");
  require_file(corpus, "corpus file");
  require_file(samples, "samples file");
  if (corpus && seq_lens.empty())
    throw ValidationError("manifest with 'corpus' needs a non-empty 'seq_lens'");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  if (alpha_override && !(*alpha_override >= 0.0 && *alpha_override <= 1.0))
    throw ValidationError("attack.alpha must be in [0, 1]");
  if (default_alpha && !(*default_alpha >= 0.0 && *default_alpha <= 1.0))
    throw ValidationError("default_alpha must be in [0, 1]");
  require_file(templates_file, "templates file");
  require_file(refusal_phrases_file, "refusal phrases file");

  if (!victim) throw ValidationError("manifest has no 'victim' endpoint");
  validate_endpoint(*victim, "victim");
  if (refusal_mode == RefusalMode::judge) {
    if (!judge) throw ValidationError("refusal.mode=judge needs a 'judge' endpoint");
    validate_endpoint(*judge, "judge");
  }
  if (purpose == Purpose::baseline) return;

  if (!attacker) throw ValidationError("manifest has no 'attacker' endpoint");
  if (!initializer) throw ValidationError("manifest has no 'initializer' endpoint");
  validate_endpoint(*attacker, "attacker");
  validate_endpoint(*initializer, "initializer");

  AttackConfig probe = attack;
  probe.alpha = alpha_override.value_or(0.5);
  probe.validate();
  templates().meta_prompt(attack.meta_prompt_template);
  templates().paraphrase(attack.paraphrase_template);

  if (attack.scorer == ScorerKind::classifier) {
    if (!classifier_model && !scorer_endpoint)
      throw ValidationError(
          "scorer=classifier needs attack.classifier_model or attack.scorer_endpoint");
    require_file(classifier_model, "classifier model");
  }
}

std::vector<PretrainSample> RunManifest::load_samples(std::size_t* too_short) const {
  std::vector<PretrainSample> out;
  std::size_t skipped = 0;
  auto wanted = [&](const std::string& domain) {
    return domains.empty() ||
           std::find(domains.begin(), domains.end(), domain) != domains.end();
  };
  if (samples) {
    for (auto& s : memaudit::load_samples(*samples, tokenizer))
      if (wanted(s.domain)) out.push_back(std::move(s));
  } else {
    const auto docs = load_corpus(*corpus);
    for (int len : seq_lens) {
      for (const auto& d : docs) {
        if (!wanted(d.domain)) continue;
        if (token_spans(d.text).size() < static_cast<std::size_t>(len)) {
          ++skipped;
          continue;
        }
        auto s = split_sample(d, len, tokenizer);
        // Same document at several lengths needs distinct sample ids.
        if (seq_lens.size() > 1) s.id += "@" + std::to_string(len);
        out.push_back(std::move(s));
      }
    }
  }
  if (too_short) *too_short = skipped;
  return out;
}

std::optional<double> RunManifest::alpha_for(const PretrainSample& sample) const {
  if (alpha_override) return alpha_override;
  if (auto a = alpha_schedule.lookup(sample.domain, sample.seq_len)) return a;
  return default_alpha;
}

TemplateLibrary RunManifest::templates() const {
  auto lib = TemplateLibrary::with_defaults();
  if (templates_file) lib.load(*templates_file);
  return lib;
}

std::unique_ptr<ChatModel> make_model(const EndpointSpec& spec,
                                      const std::vector<PretrainSample>& samples,
                                      std::uint64_t seed) {
  switch (spec.kind) {
    case EndpointSpec::Kind::openai:
      return std::make_unique<HttpChatModel>(spec.http, seed);
    case EndpointSpec::Kind::simulated_victim: {
      auto v = spec.victim;
      if (spec.memory_from_samples)
        for (const auto& s : samples)
          if (!s.suffix_withheld()) v.memory[s.id] = s.suffix_text();
      return std::make_unique<SimulatedVictim>(std::move(v));
    }
    case EndpointSpec::Kind::simulated_attacker:
      return std::make_unique<SimulatedAttacker>(spec.attacker);
    case EndpointSpec::Kind::simulated_initializer:
      return std::make_unique<SimulatedInitializer>(spec.initializer);
  }
  throw ValidationError("unknown endpoint kind");
}

}  // namespace memaudit
