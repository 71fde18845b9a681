#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace memaudit {

// A chat template: optional system text plus a user text with {NAME}
// placeholders (NAME is upper-case letters and underscores).
struct PromptTemplate {
  std::string id;
  std::string system;
  std::string user;
};

// Appended to the initializer's system message for every meta-prompt, so
// initial prompts stay abstract and short whatever template is in use.
inline constexpr std::string_view kRegularizationClause =
    "Keep the instruction abstract and not overly lengthy. Do not quote the "
    "text; describe what should be written instead.";

// Replaces every {NAME} in `text` from `values`. Throws ValidationError naming
// the first placeholder without a value.
std::string expand_template(std::string_view text,
                            const std::map<std::string, std::string>& values);

class TemplateLibrary {
 public:
  // Library holding the built-in "default" and "concise" templates for both
  // kinds.
  static TemplateLibrary with_defaults();

  // Reads {"meta_prompt": {id: {"system", "user"}}, "paraphrase": {...}},
  // overriding templates with the same id.
  void load(const std::filesystem::path& path);

  void add_meta_prompt(PromptTemplate t);
  void add_paraphrase(PromptTemplate t);

  // Throw ValidationError for unknown ids.
  const PromptTemplate& meta_prompt(const std::string& id) const;
  const PromptTemplate& paraphrase(const std::string& id) const;

 private:
  std::map<std::string, PromptTemplate> meta_;
  std::map<std::string, PromptTemplate> paraphrase_;
};

}  // namespace memaudit
