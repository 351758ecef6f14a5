#include "rcg/config.hpp"

#include <set>
#include <type_traits>

#include "rcg/errors.hpp"
#include "rcg/file_util.hpp"

namespace rcg::config {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      // json would silently truncate 2.5 or wrap -3 into a size_t.
      if (!it->is_number_integer() ||
          (std::is_unsigned_v<T> && !it->is_number_unsigned() && it->get<long long>() < 0)) {
        throw ConfigError(where_ + "." + key + ": expected " +
                          (std::is_unsigned_v<T> ? "a non-negative integer" : "an integer"));
      }
    }
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Parse>
auto parse_enum(Fields& f, const char* key, Parse parse, decltype(parse("")) fallback) {
  std::optional<std::string> s;
  f.get(key, s);
  if (!s) return fallback;
  try {
    return parse(*s);
  } catch (const Error& e) {
    throw ConfigError(f.path(key) + ": " + e.what());
  }
}

embed::EmbedderSpec embedder_from(const json& j, const std::string& where) {
  embed::EmbedderSpec s;
  Fields f(j, where);
  s.kind = parse_enum(f, "kind", embed::embedder_kind_from_string, s.kind);
  f.get("endpoint_url", s.endpoint_url);
  f.get("model_name", s.model_name);
  f.get("dim", s.dim);
  f.get("normalize", s.normalize);
  f.get("batch_size", s.batch_size);
  f.get("max_attempts", s.max_attempts);
  f.get("retry_backoff_ms", s.retry_backoff_ms);
  f.get("timeout_ms", s.timeout_ms);
  f.get("max_in_flight", s.max_in_flight);
  f.get("auth_env", s.auth_env);
  f.finish();
  return s;
}

llm::LlmSpec llm_from(const json& j, const std::string& where) {
  llm::LlmSpec s;
  Fields f(j, where);
  s.kind = parse_enum(f, "kind", llm::llm_kind_from_string, s.kind);
  f.get("endpoint_url", s.endpoint_url);
  f.get("model_name", s.model_name);
  f.get("temperature", s.temperature);
  f.get("max_new_tokens", s.max_new_tokens);
  f.get("request_timeout_ms", s.request_timeout_ms);
  f.get("context_budget", s.context_budget);
  f.get("stop", s.stop);
  f.get("max_attempts", s.max_attempts);
  f.get("retry_backoff_ms", s.retry_backoff_ms);
  f.get("auth_env", s.auth_env);
  f.finish();
  return s;
}

}  // namespace

std::filesystem::path ToolConfig::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

const KbConfig* ToolConfig::find_kb(std::string_view id) const {
  for (const auto& kb : knowledge_bases) {
    if (kb.id == id) return &kb;
  }
  return nullptr;
}

void ToolConfig::validate() const {
  auto wrap = [](const std::string& where, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  };
  wrap("embedder", [&] { embedder.validate(); });
  wrap("llm", [&] { llm.validate(); });
  wrap("splitter", [&] { splitter.validate(); });
  if (index.kind == index::IndexKind::hnsw) wrap("index.hnsw", [&] { index.hnsw.validate(); });
  if (index.kind == index::IndexKind::ivfpq_hnsw) {
    throw ConfigError("index.kind: ivfpq_hnsw is not supported");
  }
  if (extensions.empty()) throw ConfigError("extensions: at least one extension is required");
  if (server.port < 0 || server.port > 65535) throw ConfigError("server.port out of range");
  if (server.queue_capacity < 1) throw ConfigError("server.queue_capacity must be >= 1");
  if (server.max_concurrent_generations < 1) {
    throw ConfigError("server.max_concurrent_generations must be >= 1");
  }
  if (prompt_catalog.empty()) throw ConfigError("prompt_catalog must be set");

  std::set<std::string> ids;
  for (const auto& kb : knowledge_bases) {
    std::string where = "knowledge_bases[" + kb.id + "]";
    if (kb.id.empty()) throw ConfigError("knowledge_bases: entry without id");
    if (!ids.insert(kb.id).second) throw ConfigError(where + ": duplicate id");
    if (kb.dir.empty()) throw ConfigError(where + ": dir must be set");
    if (kb.embedder) wrap(where + ".embedder", [&] { kb.embedder->validate(); });
  }

  retrieval::RetrievalConfig rc;
  rc.mode = defaults.mode;
  rc.selected_kb = defaults.kb_id;
  rc.k = defaults.k;
  rc.epw_weight = defaults.epw_weight;
  rc.ef_search = defaults.ef_search;
  try {
    rc.validate();
  } catch (const RequestError& e) {
    throw ConfigError(std::string("defaults: ") + e.what());
  }
  if (defaults.mode == retrieval::RetrievalMode::manual && !find_kb(defaults.kb_id)) {
    throw ConfigError("defaults.kb_id: unknown knowledge base '" + defaults.kb_id + "'");
  }
}

ToolConfig config_from_json(const json& j, std::filesystem::path base_dir) {
  ToolConfig c;
  c.base_dir = std::move(base_dir);
  Fields f(j, "config");
  if (auto* e = f.sub("embedder")) c.embedder = embedder_from(*e, "embedder");
  if (auto* l = f.sub("llm")) c.llm = llm_from(*l, "llm");
  if (auto* kbs = f.sub("knowledge_bases")) {
    if (!kbs->is_array()) throw ConfigError("knowledge_bases: expected an array");
    for (std::size_t i = 0; i < kbs->size(); ++i) {
      std::string where = "knowledge_bases[" + std::to_string(i) + "]";
      Fields kf((*kbs)[i], where);
      KbConfig kb;
      kf.get("id", kb.id);
      kf.get("name", kb.name);
      kf.get("description", kb.description);
      kf.get("dir", kb.dir);
      kf.get("sources", kb.sources);
      if (auto* e = kf.sub("embedder")) kb.embedder = embedder_from(*e, where + ".embedder");
      kf.finish();
      if (kb.name.empty()) kb.name = kb.id;
      c.knowledge_bases.push_back(std::move(kb));
    }
  }
  f.get("prompt_catalog", c.prompt_catalog);
  f.get("analysis_log", c.analysis_log);
  if (auto* s = f.sub("server")) {
    Fields sf(*s, "server");
    sf.get("host", c.server.host);
    sf.get("port", c.server.port);
    sf.get("queue_capacity", c.server.queue_capacity);
    sf.get("max_concurrent_generations", c.server.max_concurrent_generations);
    sf.finish();
  }
  if (auto* d = f.sub("defaults")) {
    Fields df(*d, "defaults");
    c.defaults.mode = parse_enum(df, "mode", retrieval::retrieval_mode_from_string, c.defaults.mode);
    df.get("approach", c.defaults.approach);
    df.get("kb_id", c.defaults.kb_id);
    df.get("k", c.defaults.k);
    df.get("epw_weight", c.defaults.epw_weight);
    df.get("ef_search", c.defaults.ef_search);
    df.finish();
  }
  if (auto* s = f.sub("splitter")) {
    Fields sf(*s, "splitter");
    sf.get("chunk_len", c.splitter.chunk_len);
    sf.get("overlap", c.splitter.overlap);
    c.splitter.unit = parse_enum(sf, "unit", ingest::split_unit_from_string, c.splitter.unit);
    sf.finish();
  }
  f.get("extensions", c.extensions);
  if (auto* x = f.sub("index")) {
    Fields xf(*x, "index");
    c.index.kind = parse_enum(xf, "kind", index::index_kind_from_string, c.index.kind);
    if (auto* h = xf.sub("hnsw")) {
      Fields hf(*h, "index.hnsw");
      hf.get("M", c.index.hnsw.M);
      hf.get("ef_construction", c.index.hnsw.ef_construction);
      hf.get("ef_search", c.index.hnsw.ef_search);
      hf.get("seed", c.index.hnsw.seed);
      hf.finish();
    }
    xf.finish();
  }
  f.finish();
  c.validate();
  return c;
}

ordered_json to_json(const embed::EmbedderSpec& s) {
  ordered_json j;
  j["kind"] = embed::to_string(s.kind);
  j["endpoint_url"] = s.endpoint_url;
  j["model_name"] = s.model_name;
  j["dim"] = s.dim;
  j["normalize"] = s.normalize;
  j["batch_size"] = s.batch_size;
  j["max_attempts"] = s.max_attempts;
  j["retry_backoff_ms"] = s.retry_backoff_ms;
  j["timeout_ms"] = s.timeout_ms;
  j["max_in_flight"] = s.max_in_flight;
  j["auth_env"] = s.auth_env;
  return j;
}

embed::EmbedderSpec embedder_spec_from_json(const json& j) {
  auto s = embedder_from(j, "embedder");
  s.validate();
  return s;
}

ordered_json to_json(const llm::LlmSpec& s) {
  ordered_json j;
  j["kind"] = llm::to_string(s.kind);
  j["endpoint_url"] = s.endpoint_url;
  j["model_name"] = s.model_name;
  j["temperature"] = s.temperature;
  j["max_new_tokens"] = s.max_new_tokens;
  j["request_timeout_ms"] = s.request_timeout_ms;
  j["context_budget"] = s.context_budget;
  j["stop"] = s.stop;
  j["max_attempts"] = s.max_attempts;
  j["retry_backoff_ms"] = s.retry_backoff_ms;
  j["auth_env"] = s.auth_env;
  return j;
}

llm::LlmSpec llm_spec_from_json(const json& j) {
  auto s = llm_from(j, "llm");
  s.validate();
  return s;
}

ordered_json to_json(const ToolConfig& c) {
  ordered_json j;
  j["embedder"] = to_json(c.embedder);
  j["llm"] = to_json(c.llm);
  j["knowledge_bases"] = ordered_json::array();
  for (const auto& kb : c.knowledge_bases) {
    ordered_json k;
    k["id"] = kb.id;
    k["name"] = kb.name;
    k["description"] = kb.description;
    k["dir"] = kb.dir;
    k["sources"] = kb.sources;
    if (kb.embedder) k["embedder"] = to_json(*kb.embedder);
    j["knowledge_bases"].push_back(std::move(k));
  }
  j["prompt_catalog"] = c.prompt_catalog;
  j["analysis_log"] = c.analysis_log;
  j["server"] = {{"host", c.server.host},
                 {"port", c.server.port},
                 {"queue_capacity", c.server.queue_capacity},
                 {"max_concurrent_generations", c.server.max_concurrent_generations}};
  j["defaults"] = {{"mode", retrieval::to_string(c.defaults.mode)},
                   {"approach", c.defaults.approach},
                   {"kb_id", c.defaults.kb_id},
                   {"k", c.defaults.k},
                   {"epw_weight", c.defaults.epw_weight},
                   {"ef_search", c.defaults.ef_search}};
  j["splitter"] = {{"chunk_len", c.splitter.chunk_len},
                   {"overlap", c.splitter.overlap},
                   {"unit", ingest::to_string(c.splitter.unit)}};
  j["extensions"] = c.extensions;
  j["index"] = {{"kind", index::to_string(c.index.kind)},
                {"hnsw",
                 {{"M", c.index.hnsw.M},
                  {"ef_construction", c.index.hnsw.ef_construction},
                  {"ef_search", c.index.hnsw.ef_search},
                  {"seed", c.index.hnsw.seed}}}};
  return j;
}

ToolConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = fsutil::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return config_from_json(j, std::filesystem::absolute(base));
}

void save_config(const ToolConfig& cfg, const std::filesystem::path& path) {
  cfg.validate();
  try {
    fsutil::write_file_atomic(path, to_json(cfg).dump(2) + "\n");
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace rcg::config
