#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcg/errors.hpp"

namespace rcg::prompt {

// The five configurable prompt slots. Slots carry all whitespace; assembly
// inserts no separators of its own.
struct PromptSet {
  std::string ai_prefix;
  std::string retriever_prefix;
  std::string retriever_suffix;
  std::string model_prefix;
  std::string model_suffix;

  bool operator==(const PromptSet&) const = default;
};

// ai_prefix + retriever_prefix + knowledge + retriever_suffix
//   + model_prefix + query + model_suffix
std::string assemble(const PromptSet& ps, std::string_view knowledge,
                     std::string_view query);

class PromptCatalog {
 public:
  // rcg, rag and rog plus the sample retrieval-centric variants.
  static PromptCatalog builtin_defaults();
  static bool is_builtin(std::string_view name);

  const PromptSet* find(std::string_view name) const;
  // Throws RequestError for an unknown name.
  const PromptSet& at(std::string_view name) const;

  // Throws RequestError for names that are empty or contain ']' or control
  // characters (they could not be written to a catalog file).
  void set(const std::string& name, PromptSet ps);
  // Built-ins are reset instead of removed.
  void erase(std::string_view name);
  // Restores a built-in to its default slots. Returns false for non-builtins.
  bool reset(std::string_view name);
  void reset_all();

  std::vector<std::string> names() const;
  const std::map<std::string, PromptSet, std::less<>>& sets() const { return sets_; }

  bool operator==(const PromptCatalog&) const = default;

 private:
  std::map<std::string, PromptSet, std::less<>> sets_;
};

class CatalogParseError : public Error {
 public:
  CatalogParseError(std::size_t line, const std::string& msg)
      : Error("prompt catalog line " + std::to_string(line) + ": " + msg),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Catalog text format, one section per prompt set:
//
//   [rcg]
//   ai_prefix = ""
//   retriever_prefix = "\""
//   retriever_suffix = "\"\nanswer the following question with the provided knowledge.\n"
//   model_prefix = ""
//   model_suffix = "\nAI:"
//
// Values are double-quoted with escapes \\ \" \n \r \t \uXXXX. Lines starting
// with '#' are comments. Missing slots are empty; unknown keys, duplicate
// sections or keys, and malformed values are errors. Built-ins absent from
// the file are filled from the defaults.
std::string serialize_catalog(const PromptCatalog& catalog);
PromptCatalog parse_catalog(std::string_view text);

PromptCatalog load_catalog(const std::filesystem::path& path);
// Atomic replace (temp file + rename).
void save_catalog(const PromptCatalog& catalog, const std::filesystem::path& path);

nlohmann::json to_json(const PromptSet& ps);
PromptSet prompt_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PromptCatalog& catalog);
// {"sets": {name: {...}}}; throws RequestError on unknown fields.
PromptCatalog catalog_from_json(const nlohmann::json& j);

}  // namespace rcg::prompt
