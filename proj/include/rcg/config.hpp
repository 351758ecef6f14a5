#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcg/embed.hpp"
#include "rcg/index.hpp"
#include "rcg/ingest.hpp"
#include "rcg/llm.hpp"
#include "rcg/retrieval.hpp"

namespace rcg::config {

// A knowledge base lives in `dir`: passages.jsonl, index.rcgx, manifest.json.
struct KbConfig {
  std::string id;
  std::string name;
  std::string description;  // functional description used by MoKB routing
  std::string dir;
  std::vector<std::string> sources;  // inputs for prepare/reindex
  std::optional<embed::EmbedderSpec> embedder;  // overrides the global one

  bool operator==(const KbConfig&) const = default;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 7860;
  std::size_t queue_capacity = 32;
  std::size_t max_concurrent_generations = 1;

  bool operator==(const ServerConfig&) const = default;
};

struct Defaults {
  retrieval::RetrievalMode mode = retrieval::RetrievalMode::mokb;
  std::string approach = "rcg";
  std::string kb_id;
  std::size_t k = 5;
  int epw_weight = 100;
  std::size_t ef_search = 128;

  bool operator==(const Defaults&) const = default;
};

struct IndexConfig {
  index::IndexKind kind = index::IndexKind::hnsw;
  index::HnswParams hnsw;

  bool operator==(const IndexConfig& o) const {
    return kind == o.kind && hnsw.M == o.hnsw.M &&
           hnsw.ef_construction == o.hnsw.ef_construction &&
           hnsw.ef_search == o.hnsw.ef_search && hnsw.seed == o.hnsw.seed;
  }
};

// Paths are stored as written and resolved against base_dir on use, so a
// config round-trips through JSON unchanged.
struct ToolConfig {
  embed::EmbedderSpec embedder;
  llm::LlmSpec llm;
  std::vector<KbConfig> knowledge_bases;
  std::string prompt_catalog = "prompts.catalog";
  std::string analysis_log = "analysis.jsonl";
  ServerConfig server;
  Defaults defaults;
  ingest::SplitterConfig splitter;
  std::vector<std::string> extensions = {"txt", "md", "markdown", "csv", "html", "htm"};
  IndexConfig index;

  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path resolve(const std::string& p) const;
  const KbConfig* find_kb(std::string_view id) const;
  const embed::EmbedderSpec& embedder_for(const KbConfig& kb) const {
    return kb.embedder ? *kb.embedder : embedder;
  }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Unknown keys are errors; missing keys take defaults.
ToolConfig config_from_json(const nlohmann::json& j, std::filesystem::path base_dir);
nlohmann::ordered_json to_json(const ToolConfig& cfg);

// JSON with // and /* */ comments allowed.
ToolConfig load_config(const std::filesystem::path& path);
// Atomic replace. Comments in the previous file are not preserved.
void save_config(const ToolConfig& cfg, const std::filesystem::path& path);

nlohmann::ordered_json to_json(const embed::EmbedderSpec& spec);
embed::EmbedderSpec embedder_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const llm::LlmSpec& spec);
llm::LlmSpec llm_spec_from_json(const nlohmann::json& j);

}  // namespace rcg::config
