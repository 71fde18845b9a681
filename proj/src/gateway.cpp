#include "memaudit/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <thread>
#include <tuple>

#include <httplib.h>
#include <json.hpp>

#include "memaudit/error.hpp"
#include "memaudit/text_metrics.hpp"

namespace memaudit {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  throw ValidationError("unknown chat role '" + std::string(name) + "'");
}

std::vector<std::string> FunctionModel::complete(const ChatRequest& request) {
  return fn_(request);
}

void EndpointConfig::validate() const {
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
    throw ValidationError("endpoint base_url must start with http:// or https://, got '" +
                          base_url + "'");
  if (model_name.empty()) throw ValidationError("endpoint model_name is empty");
  if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
  if (!(timeout > 0.0)) throw ValidationError("timeout must be > 0");
  if (!(backoff_base >= 0.0)) throw ValidationError("backoff_base must be >= 0");
  if (!api_key_env.empty() && std::getenv(api_key_env.c_str()) == nullptr)
    throw ValidationError("environment variable " + api_key_env +
                          " (api key) is not set");
}

std::chrono::duration<double> backoff_delay(int attempt, double base,
                                            Rng& rng) {
  const double jitter = 0.9 + 0.2 * uniform01(rng);
  return std::chrono::duration<double>(base * std::ldexp(1.0, attempt) *
                                       jitter);
}

InFlightLimiter::InFlightLimiter(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ValidationError("in-flight capacity must be >= 1");
}

void InFlightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return in_flight_ < capacity_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

int InFlightLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos)
    throw ValidationError("base_url '" + base_url + "' has no scheme");
  const auto path_start = base_url.find('/', scheme + 3);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

std::string build_chat_body(const std::string& model, const Messages& messages,
                            double temperature, int max_tokens, int n) {
  json msgs = json::array();
  for (const auto& m : messages)
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json body = {{"model", model},
               {"messages", std::move(msgs)},
               {"temperature", temperature},
               {"max_tokens", max_tokens},
               {"n", n}};
  return body.dump();
}

std::vector<std::string> parse_chat_response(std::string_view body,
                                             std::optional<TokenUsage>* usage) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array())
    throw MalformedResponseError("response has no 'choices' array");

  std::vector<std::string> texts;
  for (const auto& choice : doc["choices"]) {
    const json* content = nullptr;
    if (choice.is_object() && choice.contains("message") &&
        choice["message"].is_object() && choice["message"].contains("content"))
      content = &choice["message"]["content"];
    if (content == nullptr)
      throw MalformedResponseError("choice without message.content");
    // Some servers send null content for empty generations.
    texts.push_back(content->is_string() ? content->get<std::string>() : "");
  }
  if (usage != nullptr) {
    usage->reset();
    if (doc.contains("usage") && doc["usage"].is_object()) {
      const auto& u = doc["usage"];
      usage->emplace(TokenUsage{u.value("prompt_tokens", 0),
                                u.value("completion_tokens", 0)});
    }
  }
  return texts;
}

HttpChatModel::HttpChatModel(EndpointConfig config, std::uint64_t jitter_seed)
    : config_(std::move(config)),
      limiter_(config_.max_in_flight),
      sleeper_([](std::chrono::duration<double> d) {
        std::this_thread::sleep_for(d);
      }),
      jitter_rng_(jitter_seed) {
  config_.validate();
  std::tie(scheme_host_port_, path_prefix_) = split_base_url(config_.base_url);
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr)
      throw ValidationError("environment variable " + config_.api_key_env +
                            " (api key) is not set");
    api_key_ = key;
  }
}

GatewayStats HttpChatModel::stats() const {
  std::lock_guard lock(mu_);
  GatewayStats s = stats_;
  s.peak_in_flight = limiter_.peak();
  return s;
}

namespace {

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::vector<std::string> HttpChatModel::request_once(const ChatRequest& request,
                                                     int n) {
  const double temperature = request.temperature.value_or(config_.temperature);
  const int max_tokens = request.max_new_tokens.value_or(config_.max_new_tokens);
  const std::string body = build_chat_body(config_.model_name, request.messages,
                                           temperature, max_tokens, n);
  const std::string path = path_prefix_ + "/v1/chat/completions";

  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::chrono::duration<double> delay;
      {
        std::lock_guard lock(mu_);
        ++stats_.backoffs;
        delay = backoff_delay(attempt - 1, config_.backoff_base, jitter_rng_);
      }
      sleeper_(delay);
    }

    httplib::Result res;
    const auto started = std::chrono::steady_clock::now();
    {
      InFlightLimiter::Slot slot(limiter_);
      {
        std::lock_guard lock(mu_);
        ++stats_.requests;
      }
      httplib::Client client(scheme_host_port_);
      const auto t = std::chrono::duration<double>(config_.timeout);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      httplib::Headers headers;
      if (!api_key_.empty())
        headers.emplace("Authorization", "Bearer " + api_key_);
      res = client.Post(path, headers, body, "application/json");
    }
    const double latency =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();

    ChatExchange exchange{request.messages, std::nullopt, latency, std::nullopt};
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      if (observer_) observer_(exchange);
      continue;
    }
    last_status = res->status;
    if (res->status >= 200 && res->status < 300) {
      auto texts = parse_chat_response(res->body, &exchange.token_usage);
      if (observer_) {
        exchange.response_text = texts.empty() ? std::string() : texts.front();
        observer_(exchange);
      }
      return texts;
    }
    if (observer_) observer_(exchange);
    last_error = res->body.substr(0, 200);
    if (!retryable_status(res->status))
      throw GatewayError("endpoint " + config_.base_url + " returned HTTP " +
                             std::to_string(res->status) + ": " + last_error,
                         res->status);
  }
  throw RetriesExhaustedError(
      "endpoint " + config_.base_url + " failed after " +
          std::to_string(config_.max_retries + 1) + " attempts (last status " +
          std::to_string(last_status) + (last_error.empty() ? "" : ": " + last_error) + ")",
      last_status);
}

std::vector<std::string> HttpChatModel::complete(const ChatRequest& request) {
  if (request.n < 1) throw ValidationError("n must be >= 1");
  if (request.messages.empty()) throw ValidationError("messages must not be empty");

  std::vector<std::string> out;
  if (config_.supports_n) {
    out = request_once(request, request.n);
    // Servers that ignore n return a single choice; top up one at a time.
    for (int extra = 0; static_cast<int>(out.size()) < request.n && extra < request.n;
         ++extra) {
      auto more = request_once(request, request.n - static_cast<int>(out.size()));
      if (more.empty()) break;
      out.insert(out.end(), more.begin(), more.end());
    }
  } else {
    std::vector<std::future<std::vector<std::string>>> pending;
    for (int i = 0; i < request.n; ++i)
      pending.push_back(std::async(std::launch::async,
                                   [this, &request] { return request_once(request, 1); }));
    for (auto& f : pending) {
      auto texts = f.get();
      if (!texts.empty()) out.push_back(std::move(texts.front()));
    }
  }
  if (static_cast<int>(out.size()) < request.n)
    throw MalformedResponseError("endpoint returned " + std::to_string(out.size()) +
                                 " choices, expected " + std::to_string(request.n));
  out.resize(static_cast<std::size_t>(request.n));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  });
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count && i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

const ChatMessage* last_user_message(const Messages& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it)
    if (it->role == Role::user) return &*it;
  return nullptr;
}

}  // namespace

void SimulatedVictimSpec::validate() const {
  for (const auto& rule : trigger_rules) {
    if (rule.emit == EmitKind::partial && !(rule.fraction > 0.0 && rule.fraction <= 1.0))
      throw ValidationError("partial emit fraction must be in (0, 1]");
    if (rule.kind == PatternKind::token_set && rule.tokens.empty())
      throw ValidationError("token-set trigger rule needs at least one token");
  }
}

bool rule_matches(const TriggerRule& rule, std::string_view prompt) {
  if (rule.kind == PatternKind::substring)
    return lower(prompt).find(lower(rule.substring)) != std::string::npos;
  const auto toks = tokenize(prompt, TokenizerMode::whitespace_lowercased);
  return std::all_of(rule.tokens.begin(), rule.tokens.end(), [&](const std::string& t) {
    return std::find(toks.tokens.begin(), toks.tokens.end(), lower(t)) !=
           toks.tokens.end();
  });
}

std::string simulate(const SimulatedVictimSpec& spec, const std::string& sample_id,
                     std::string_view prompt) {
  auto mem = spec.memory.find(sample_id);
  if (mem == spec.memory.end())
    throw ValidationError("simulated victim has no memory of sample '" + sample_id + "'");

  const std::string lowered = lower(prompt);
  for (const auto& pattern : spec.refusal_patterns)
    if (!pattern.empty() && lowered.find(lower(pattern)) != std::string::npos)
      return std::string(kSimulatedRefusal);

  for (const auto& rule : spec.trigger_rules) {
    if (!rule_matches(rule, prompt)) continue;
    switch (rule.emit) {
      case EmitKind::suffix:
        return mem->second;
      case EmitKind::partial: {
        const auto toks = tokenize(mem->second, TokenizerMode::whitespace);
        const auto keep = static_cast<std::size_t>(
            std::ceil(rule.fraction * static_cast<double>(toks.size())));
        return join(toks.tokens, keep);
      }
      case EmitKind::filler:
        return rule.filler.value_or(spec.default_output);
    }
  }
  return spec.default_output;
}

SimulatedVictim::SimulatedVictim(SimulatedVictimSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

std::vector<std::string> SimulatedVictim::complete(const ChatRequest& request) {
  const ChatMessage* msg = last_user_message(request.messages);
  if (msg == nullptr) throw ValidationError("victim request has no user message");
  return std::vector<std::string>(static_cast<std::size_t>(std::max(request.n, 1)),
                                  simulate(spec_, request.context.sample_id, msg->content));
}

SimulatedAttacker::SimulatedAttacker(SimulatedAttackerSpec spec) : spec_(std::move(spec)) {
  if (spec_.vocabulary.empty())
    spec_.vocabulary = {"please", "kindly", "exactly", "carefully", "original",
                        "full",   "text",   "passage", "recall",    "describe"};
}

std::string SimulatedAttacker::paraphrase(const SimulatedAttackerSpec& spec,
                                          const RequestContext& ctx, int candidate_index) {
  std::uint64_t h = fnv1a(ctx.sample_id);
  h = mix_seed(h, spec.seed);
  h = mix_seed(h, static_cast<std::uint64_t>(ctx.iteration));
  h = mix_seed(h, static_cast<std::uint64_t>(candidate_index));
  Rng rng(h);

  auto toks = tokenize(ctx.previous_prompt, TokenizerMode::whitespace).tokens;
  const auto op = uniform_index(rng, 3);
  if (op == 0 && toks.size() > 3) {
    toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, toks.size())));
  } else if (op == 1 && toks.size() > 1) {
    const auto i = uniform_index(rng, toks.size() - 1);
    std::swap(toks[i], toks[i + 1]);
  } else if (!spec.vocabulary.empty()) {
    const auto pos = uniform_index(rng, toks.size() + 1);
    const auto& word = spec.vocabulary[uniform_index(rng, spec.vocabulary.size())];
    toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(pos), word);
  }

  std::string text = join(toks, toks.size());
  for (const auto& inj : spec.injections)
    if (inj.iteration == ctx.iteration && inj.candidate_index == candidate_index)
      text = inj.text + (text.empty() ? "" : " " + text);
  return text;
}

std::vector<std::string> SimulatedAttacker::complete(const ChatRequest& request) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.n));
  for (int k = 0; k < request.n; ++k) out.push_back(paraphrase(spec_, request.context, k));
  return out;
}

SimulatedInitializer::SimulatedInitializer(SimulatedInitializerSpec spec)
    : spec_(std::move(spec)) {}

std::vector<std::string> SimulatedInitializer::complete(const ChatRequest& request) {
  const ChatMessage* msg = last_user_message(request.messages);
  if (msg == nullptr) throw ValidationError("initializer request has no user message");

  std::string_view text = msg->content;
  if (!spec_.marker.empty()) {
    const auto at = text.rfind(spec_.marker);
    if (at != std::string_view::npos) text.remove_prefix(at + spec_.marker.size());
  }
  const auto toks = tokenize(text, TokenizerMode::whitespace);
  std::string q = spec_.question_template;
  auto replace = [&q](std::string_view key, const std::string& value) {
    for (auto at = q.find(key); at != std::string::npos; at = q.find(key, at + value.size()))
      q.replace(at, key.size(), value);
  };
  replace("{HEAD}", join(toks.tokens, spec_.head_tokens));
  replace("{WORDS}", std::to_string(toks.size()));
  return std::vector<std::string>(static_cast<std::size_t>(std::max(request.n, 1)), q);
}

}  // namespace memaudit
