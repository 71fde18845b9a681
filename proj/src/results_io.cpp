#include "memaudit/results_io.hpp"

#include <fstream>

#include "memaudit/error.hpp"

namespace memaudit {

using nlohmann::json;

namespace {

json to_json(const Prompt& p) {
  return {{"text", p.text},
          {"origin", to_string(p.origin)},
          {"iteration", p.iteration},
          {"candidate_index", p.candidate_index}};
}

Prompt prompt_from_json(const json& j) {
  return {j.at("text").get<std::string>(),
          prompt_origin_from_string(j.at("origin").get<std::string>()),
          j.at("iteration").get<int>(), j.at("candidate_index").get<int>()};
}

json to_json(const CandidateScore& s) {
  return {{"mem", s.mem ? json(*s.mem) : json(nullptr)},
          {"lcs_p", s.lcs_p ? json(*s.lcs_p) : json(nullptr)},
          {"objective", s.objective}};
}

CandidateScore score_from_json(const json& j) {
  CandidateScore s;
  if (!j.at("mem").is_null()) s.mem = j["mem"].get<double>();
  if (!j.at("lcs_p").is_null()) s.lcs_p = j["lcs_p"].get<double>();
  s.objective = j.at("objective").get<double>();
  return s;
}

}  // namespace

json to_json(const AttackResult& r) {
  json trace = json::array();
  for (const auto& it : r.trace) {
    json cands = json::array();
    for (std::size_t i = 0; i < it.candidates.size(); ++i)
      cands.push_back({{"prompt", to_json(it.candidates[i])},
                       {"output", it.outputs.at(i)},
                       {"score", to_json(it.scores.at(i))}});
    trace.push_back({{"iteration", it.iteration},
                     {"selected_index", it.selected_index},
                     {"candidates", std::move(cands)}});
  }
  return {{"sample_id", r.sample_id},
          {"domain", r.domain},
          {"seq_len", r.seq_len},
          {"method", to_string(r.method)},
          {"scorer", to_string(r.scorer)},
          {"alpha", r.alpha},
          {"init_prompt", to_json(r.init_prompt)},
          {"init_output", r.init_output},
          {"init_score", to_json(r.init_score)},
          {"best_prompt", to_json(r.best_prompt)},
          {"best_output", r.best_output},
          {"best_score", to_json(r.best_score)},
          {"trace", std::move(trace)}};
}

AttackResult attack_result_from_json(const json& j) {
  AttackResult r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.domain = j.at("domain").get<std::string>();
  r.seq_len = j.at("seq_len").get<int>();
  r.method = method_from_string(j.at("method").get<std::string>());
  r.scorer = scorer_kind_from_string(j.at("scorer").get<std::string>());
  r.alpha = j.at("alpha").get<double>();
  r.init_prompt = prompt_from_json(j.at("init_prompt"));
  r.init_output = j.at("init_output").get<std::string>();
  r.init_score = score_from_json(j.at("init_score"));
  r.best_prompt = prompt_from_json(j.at("best_prompt"));
  r.best_output = j.at("best_output").get<std::string>();
  r.best_score = score_from_json(j.at("best_score"));
  for (const auto& jt : j.at("trace")) {
    IterationTrace it;
    it.iteration = jt.at("iteration").get<int>();
    it.selected_index = jt.at("selected_index").get<int>();
    for (const auto& c : jt.at("candidates")) {
      it.candidates.push_back(prompt_from_json(c.at("prompt")));
      it.outputs.push_back(c.at("output").get<std::string>());
      it.scores.push_back(score_from_json(c.at("score")));
    }
    r.trace.push_back(std::move(it));
  }
  return r;
}

RunSummary summarize(std::string command, std::span<const SampleOutcome> outcomes) {
  RunSummary s;
  s.command = std::move(command);
  s.samples = outcomes.size();
  double mem = 0, lcs = 0, obj = 0;
  for (const auto& o : outcomes) {
    if (!o.result) {
      ++s.failed;
      continue;
    }
    ++s.succeeded;
    mem += o.result->best_score.mem.value_or(0.0);
    lcs += o.result->best_score.lcs_p.value_or(0.0);
    obj += o.result->best_score.objective;
  }
  if (s.succeeded > 0) {
    const auto n = static_cast<double>(s.succeeded);
    s.mean_mem = mem / n;
    s.mean_lcs_p = lcs / n;
    s.mean_objective = obj / n;
  }
  return s;
}

void write_results(const std::filesystem::path& path,
                   std::span<const SampleOutcome> outcomes, const RunSummary& summary) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write results file " + path.string());
  for (const auto& o : outcomes) {
    json rec;
    if (o.result) {
      rec = to_json(*o.result);
      rec["record"] = "result";
    } else {
      rec = {{"record", "error"}, {"sample_id", o.sample_id}, {"error", o.error}};
    }
    out << rec.dump() << '\n';
  }
  const json rec = {{"record", "summary"},
                    {"command", summary.command},
                    {"samples", summary.samples},
                    {"succeeded", summary.succeeded},
                    {"failed", summary.failed},
                    {"mean_mem", summary.mean_mem},
                    {"mean_lcs_p", summary.mean_lcs_p},
                    {"mean_objective", summary.mean_objective}};
  out << rec.dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file " + path.string());
  ResultsFile file;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      const auto kind = rec.value("record", std::string("result"));
      if (kind == "result") {
        file.results.push_back(attack_result_from_json(rec));
      } else if (kind == "error") {
        file.errors.push_back({rec.at("sample_id").get<std::string>(), std::nullopt,
                               rec.at("error").get<std::string>()});
      } else if (kind == "summary") {
        RunSummary s;
        s.command = rec.at("command").get<std::string>();
        s.samples = rec.at("samples").get<std::size_t>();
        s.succeeded = rec.at("succeeded").get<std::size_t>();
        s.failed = rec.at("failed").get<std::size_t>();
        s.mean_mem = rec.at("mean_mem").get<double>();
        s.mean_lcs_p = rec.at("mean_lcs_p").get<double>();
        s.mean_objective = rec.at("mean_objective").get<double>();
        file.summary = s;
      } else {
        throw DataError("unknown record kind '" + kind + "'", lineno);
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("bad results record: ") + e.what(), lineno);
    } catch (const ValidationError& e) {
      throw DataError(e.what(), lineno);
    }
  }
  return file;
}

}  // namespace memaudit
