#include "memaudit/templates.hpp"

#include <fstream>

#include <json.hpp>

#include "memaudit/error.hpp"

namespace memaudit {

namespace {

bool placeholder_char(char c) { return (c >= 'A' && c <= 'Z') || c == '_'; }

}  // namespace

std::string expand_template(std::string_view text,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && placeholder_char(text[j])) ++j;
      if (j > i + 1 && j < text.size() && text[j] == '}') {
        const std::string name(text.substr(i + 1, j - i - 1));
        auto it = values.find(name);
        if (it == values.end())
          throw ValidationError("unresolved template placeholder {" + name + "}");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

TemplateLibrary TemplateLibrary::with_defaults() {
  TemplateLibrary lib;
  lib.add_meta_prompt(
      {"default",
       "You rewrite passages into instructions for a language model.",
       "Turn the following text into a question-style instruction that would "
       "lead a language model to produce this text as its answer. Reply with "
       "the instruction only.\n\nText:\n{TEXT}"});
  lib.add_meta_prompt(
      {"concise", "",
       "Write one short question whose ideal answer is the text below. Reply "
       "with the question only.\n\nText:\n{TEXT}"});
  lib.add_paraphrase(
      {"default",
       "You improve instructions given to a language model.",
       "Paraphrase the following instruction and improve it so that a "
       "language model answering it reproduces the original passage as "
       "faithfully as possible. Reply with the new instruction only.\n\n"
       "Instruction:\n{PROMPT}"});
  lib.add_paraphrase(
      {"concise", "",
       "Rephrase this instruction. Reply with the rephrased instruction "
       "only.\n\n{PROMPT}"});
  return lib;
}

void TemplateLibrary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open template file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("template file " + path.string() + ": " + e.what());
  }
  auto read_group = [&](const char* key, auto sink) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_object())
      throw DataError(std::string("template group '") + key + "' must be an object");
    for (auto& [id, t] : doc[key].items()) {
      if (!t.is_object() || !t.contains("user") || !t["user"].is_string())
        throw DataError("template '" + id + "' needs a string 'user' field");
      PromptTemplate tmpl;
      tmpl.id = id;
      tmpl.system = t.value("system", std::string());
      tmpl.user = t["user"].template get<std::string>();
      sink(std::move(tmpl));
    }
  };
  read_group("meta_prompt", [this](PromptTemplate t) { add_meta_prompt(std::move(t)); });
  read_group("paraphrase", [this](PromptTemplate t) { add_paraphrase(std::move(t)); });
}

void TemplateLibrary::add_meta_prompt(PromptTemplate t) {
  auto id = t.id;
  meta_[id] = std::move(t);
}

void TemplateLibrary::add_paraphrase(PromptTemplate t) {
  auto id = t.id;
  paraphrase_[id] = std::move(t);
}

const PromptTemplate& TemplateLibrary::meta_prompt(const std::string& id) const {
  auto it = meta_.find(id);
  if (it == meta_.end()) throw ValidationError("unknown meta-prompt template '" + id + "'");
  return it->second;
}

const PromptTemplate& TemplateLibrary::paraphrase(const std::string& id) const {
  auto it = paraphrase_.find(id);
  if (it == paraphrase_.end())
    throw ValidationError("unknown paraphrase template '" + id + "'");
  return it->second;
}

}  // namespace memaudit
