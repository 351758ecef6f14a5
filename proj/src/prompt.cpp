#include "rcg/prompt.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace rcg::prompt {

std::string assemble(const PromptSet& ps, std::string_view knowledge,
                     std::string_view query) {
  std::string out;
  out.reserve(ps.ai_prefix.size() + ps.retriever_prefix.size() + knowledge.size() +
              ps.retriever_suffix.size() + ps.model_prefix.size() + query.size() +
              ps.model_suffix.size());
  out += ps.ai_prefix;
  out += ps.retriever_prefix;
  out += knowledge;
  out += ps.retriever_suffix;
  out += ps.model_prefix;
  out += query;
  out += ps.model_suffix;
  return out;
}

namespace {

constexpr std::string_view kRcgInstruction =
    "answer the following question with the provided knowledge.";
constexpr std::string_view kRagInstruction =
    "answer the following question. You may use the provided knowledge.";
constexpr std::string_view kStrictInstruction =
    "only use the provided knowledge to answer the following question.";
constexpr std::string_view kPersona =
    "you are a Retrieval-Centric AI. Knowledge below are provided.\n";

PromptSet quoted(std::string_view ai_prefix, std::string_view instruction,
                 std::string_view model_suffix) {
  PromptSet ps;
  ps.ai_prefix = ai_prefix;
  ps.retriever_prefix = "\"";
  ps.retriever_suffix = "\"\n" + std::string(instruction) + "\n";
  ps.model_suffix = model_suffix;
  return ps;
}

const std::map<std::string, PromptSet, std::less<>>& builtins() {
  static const auto* sets = [] {
    auto* m = new std::map<std::string, PromptSet, std::less<>>;
    (*m)["rcg"] = quoted("", kRcgInstruction, "\nAI:");
    (*m)["rag"] = quoted("", kRagInstruction, "\nAI:");
    PromptSet rog;
    rog.model_suffix = "\nAI:";
    (*m)["rog"] = rog;
    (*m)["rcg-persona-response"] = quoted(kPersona, kStrictInstruction, "\nResponse:");
    (*m)["rcg-strict"] = quoted("", kStrictInstruction, "\nAI:");
    (*m)["rcg-persona"] = quoted(kPersona, kStrictInstruction, "\nAI:");
    return m;
  }();
  return *sets;
}

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  for (char c : name) {
    if (c == ']' || c == '[' || static_cast<unsigned char>(c) < 0x20) return false;
  }
  return name.front() != ' ' && name.back() != ' ';
}

}  // namespace

PromptCatalog PromptCatalog::builtin_defaults() {
  PromptCatalog c;
  for (const auto& [name, ps] : builtins()) c.sets_.emplace(name, ps);
  return c;
}

bool PromptCatalog::is_builtin(std::string_view name) {
  return builtins().find(name) != builtins().end();
}

const PromptSet* PromptCatalog::find(std::string_view name) const {
  auto it = sets_.find(name);
  return it == sets_.end() ? nullptr : &it->second;
}

const PromptSet& PromptCatalog::at(std::string_view name) const {
  if (const auto* ps = find(name)) return *ps;
  throw RequestError("unknown prompt set: " + std::string(name));
}

void PromptCatalog::set(const std::string& name, PromptSet ps) {
  if (!valid_name(name)) throw RequestError("invalid prompt set name: '" + name + "'");
  sets_[name] = std::move(ps);
}

void PromptCatalog::erase(std::string_view name) {
  if (reset(name)) return;
  auto it = sets_.find(name);
  if (it != sets_.end()) sets_.erase(it);
}

bool PromptCatalog::reset(std::string_view name) {
  auto it = builtins().find(name);
  if (it == builtins().end()) return false;
  sets_[it->first] = it->second;
  return true;
}

void PromptCatalog::reset_all() {
  for (const auto& [name, ps] : builtins()) sets_[name] = ps;
}

std::vector<std::string> PromptCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sets_) out.push_back(name);
  return out;
}

namespace {

using Slot = std::string PromptSet::*;
constexpr std::array<std::pair<std::string_view, Slot>, 5> kSlots = {{
    {"ai_prefix", &PromptSet::ai_prefix},
    {"retriever_prefix", &PromptSet::retriever_prefix},
    {"retriever_suffix", &PromptSet::retriever_suffix},
    {"model_prefix", &PromptSet::model_prefix},
    {"model_suffix", &PromptSet::model_suffix},
}};

std::string escape(std::string_view s) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20 || c == 0x7f) {
          auto u = static_cast<unsigned char>(c);
          out += "\\u00";
          out += kHex[u >> 4];
          out += kHex[u & 0xF];
        } else {
          out += c;
        }
    }
  }
  out += '"';
  return out;
}

void append_utf8(std::string& out, unsigned cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Parses a quoted value occupying the rest of the line.
std::string unescape(std::string_view v, std::size_t line) {
  if (v.size() < 2 || v.front() != '"') {
    throw CatalogParseError(line, "value must be a double-quoted string");
  }
  std::string out;
  std::size_t i = 1;
  for (; i < v.size(); ++i) {
    char c = v[i];
    if (c == '"') break;
    if (c != '\\') {
      out += c;
      continue;
    }
    if (++i >= v.size()) throw CatalogParseError(line, "dangling escape");
    switch (v[i]) {
      case '\\': out += '\\'; break;
      case '"': out += '"'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case 'u': {
        if (i + 4 >= v.size()) throw CatalogParseError(line, "short \\u escape");
        unsigned cp = 0;
        for (int k = 1; k <= 4; ++k) {
          char h = v[i + k];
          cp <<= 4;
          if (h >= '0' && h <= '9') cp |= h - '0';
          else if (h >= 'a' && h <= 'f') cp |= h - 'a' + 10;
          else if (h >= 'A' && h <= 'F') cp |= h - 'A' + 10;
          else throw CatalogParseError(line, "bad \\u escape");
        }
        if (cp >= 0xD800 && cp <= 0xDFFF) {
          throw CatalogParseError(line, "surrogate \\u escape");
        }
        append_utf8(out, cp);
        i += 4;
        break;
      }
      default:
        throw CatalogParseError(line, std::string("unknown escape \\") + v[i]);
    }
  }
  if (i >= v.size()) throw CatalogParseError(line, "unterminated string");
  auto rest = v.substr(i + 1);
  for (char c : rest) {
    if (c != ' ' && c != '\t') throw CatalogParseError(line, "trailing characters after value");
  }
  return out;
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

std::string serialize_catalog(const PromptCatalog& catalog) {
  std::string out = "# prompt catalog\n";
  for (const auto& [name, ps] : catalog.sets()) {
    out += "\n[" + name + "]\n";
    for (const auto& [key, slot] : kSlots) {
      out += key;
      out += " = ";
      out += escape(ps.*slot);
      out += '\n';
    }
  }
  return out;
}

PromptCatalog parse_catalog(std::string_view text) {
  PromptCatalog catalog;
  std::map<std::string, PromptSet, std::less<>> parsed;
  PromptSet* current = nullptr;
  std::array<bool, kSlots.size()> seen{};

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    auto line = strip(raw);
    if (line.empty() || line.front() == '#') continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw CatalogParseError(line_no, "unterminated section header");
      std::string name(line.substr(1, line.size() - 2));
      if (!valid_name(name)) throw CatalogParseError(line_no, "invalid section name");
      auto [it, fresh] = parsed.try_emplace(name);
      if (!fresh) throw CatalogParseError(line_no, "duplicate section [" + name + "]");
      current = &it->second;
      seen.fill(false);
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CatalogParseError(line_no, "expected key = \"value\"");
    if (!current) throw CatalogParseError(line_no, "key outside of a [section]");
    auto key = strip(line.substr(0, eq));
    auto value = strip(line.substr(eq + 1));
    bool known = false;
    for (std::size_t s = 0; s < kSlots.size(); ++s) {
      if (kSlots[s].first != key) continue;
      if (seen[s]) throw CatalogParseError(line_no, "duplicate key " + std::string(key));
      seen[s] = true;
      (*current).*(kSlots[s].second) = unescape(value, line_no);
      known = true;
      break;
    }
    if (!known) throw CatalogParseError(line_no, "unknown key '" + std::string(key) + "'");
  }

  catalog = PromptCatalog::builtin_defaults();
  for (auto& [name, ps] : parsed) catalog.set(name, std::move(ps));
  return catalog;
}

PromptCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open prompt catalog " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_catalog(buf.str());
}

void save_catalog(const PromptCatalog& catalog, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write prompt catalog " + tmp.string());
    out << serialize_catalog(catalog);
    out.close();
    if (!out) throw ConfigError("cannot write prompt catalog " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("cannot replace prompt catalog " + path.string());
}

nlohmann::json to_json(const PromptSet& ps) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, slot] : kSlots) j[std::string(key)] = ps.*slot;
  return j;
}

PromptSet prompt_set_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw RequestError("prompt set must be an object");
  PromptSet ps;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& [name, slot] : kSlots) {
      if (name != key) continue;
      if (!value.is_string()) throw RequestError("prompt slot " + key + " must be a string");
      ps.*slot = value.get<std::string>();
      known = true;
    }
    if (!known) throw RequestError("unknown prompt slot: " + key);
  }
  return ps;
}

nlohmann::json to_json(const PromptCatalog& catalog) {
  nlohmann::json sets = nlohmann::json::object();
  for (const auto& [name, ps] : catalog.sets()) sets[name] = to_json(ps);
  return {{"sets", sets}};
}

PromptCatalog catalog_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw RequestError("prompt catalog must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "sets") throw RequestError("unknown catalog field: " + key);
  }
  if (!j.contains("sets") || !j["sets"].is_object()) {
    throw RequestError("prompt catalog needs a 'sets' object");
  }
  auto catalog = PromptCatalog::builtin_defaults();
  for (const auto& [name, ps] : j["sets"].items()) {
    catalog.set(name, prompt_set_from_json(ps));
  }
  return catalog;
}

}  // namespace rcg::prompt
