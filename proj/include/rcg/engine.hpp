#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcg/analysis.hpp"
#include "rcg/config.hpp"
#include "rcg/embed.hpp"
#include "rcg/llm.hpp"
#include "rcg/prompt.hpp"
#include "rcg/retrieval.hpp"

// Wires the modules into the chat pipeline shared by the CLI and the server.
namespace rcg::engine {

inline constexpr const char* kPassageFile = "passages.jsonl";
inline constexpr const char* kIndexFile = "index.rcgx";
inline constexpr const char* kManifestFile = "manifest.json";

struct PrepareReport {
  std::size_t documents = 0;
  std::size_t passages = 0;
  std::size_t dim = 0;
  index::IndexKind kind = index::IndexKind::flat;
  std::string model_name;
  std::vector<ingest::LoadFailure> failures;
  std::size_t replaced_bytes = 0;
};

// ingest -> embed -> index into dir. Output files depend only on the inputs
// and the config, so repeated runs are byte-identical.
PrepareReport prepare_kb(const std::vector<std::filesystem::path>& inputs,
                         const std::filesystem::path& dir,
                         const embed::Embedder& embedder,
                         const config::ToolConfig& cfg);

// Reads passages and index from dir; the index must have been built with
// the embedder's model.
std::shared_ptr<const retrieval::KnowledgeBase> load_kb(
    const config::KbConfig& kb, const std::filesystem::path& dir,
    std::shared_ptr<const embed::Embedder> embedder);

// Immutable snapshot of everything a turn needs. Swapped wholesale on
// config changes so a turn never sees a half-applied config.
struct State {
  config::ToolConfig config;
  std::shared_ptr<const embed::Embedder> embedder;
  std::shared_ptr<const llm::Generator> generator;
  std::vector<std::shared_ptr<const retrieval::KnowledgeBase>> kbs;
};

// Builds embedders, the generator and every configured KB. Throws without
// side effects when anything fails.
std::shared_ptr<const State> build_state(config::ToolConfig cfg);

struct ChatRequest {
  std::string query;
  retrieval::RetrievalMode mode = retrieval::RetrievalMode::mokb;
  std::string approach = "rcg";
  std::string kb_id;
  std::size_t k = 5;
  int epw_weight = 100;
  std::size_t ef_search = 128;
  bool stream = true;
};

// Missing fields take the config defaults. Throws RequestError.
ChatRequest parse_chat_request(const nlohmann::json& j, const config::Defaults& defaults);
ChatRequest default_chat_request(std::string query, const config::Defaults& defaults);

// Everything decided before generation starts.
struct TurnPlan {
  ChatRequest request;
  std::shared_ptr<const State> state;
  analysis::Approach approach;
  prompt::PromptSet prompts;
  bool retrieval_used = false;
  std::optional<retrieval::RetrievalResult> retrieved;
  std::shared_ptr<const retrieval::KnowledgeBase> kb;
  std::string prompt;
  std::size_t prompt_tokens_est = 0;
  double retrieve_ms = 0.0;
};

// Retrieval metadata reported ahead of the answer.
nlohmann::ordered_json retrieval_summary(const TurnPlan& plan);

struct TurnResult {
  analysis::AnalysisRecord record;
  std::optional<llm::GenerationError> error;
  std::optional<llm::Done> done;
};

class Engine {
 public:
  // config_path, when set, is where config changes are persisted.
  Engine(config::ToolConfig cfg, std::optional<std::filesystem::path> config_path);

  std::shared_ptr<const State> state() const;
  prompt::PromptCatalog catalog() const;
  analysis::AnalysisLog& log() { return *log_; }

  // Throws RequestError (bad request), UpstreamError (embedder) or
  // BudgetError (prompt over the LLM context budget).
  TurnPlan plan(const ChatRequest& req) const;

  // Streams generation events to sink and appends the turn to the log when
  // log_turn is set.
  TurnResult execute(const TurnPlan& plan, const llm::EventSink& sink, bool log_turn = true);

  TurnResult chat(const ChatRequest& req, const llm::EventSink& sink);

  // One eval turn; not logged.
  analysis::TurnOutcome eval_turn(const analysis::EvalPair& pair,
                                  const analysis::Approach& approach) const;

  // Validates, persists and swaps. On any failure the previous catalog
  // stays in effect and nothing is written.
  void replace_catalog(prompt::PromptCatalog catalog);
  void set_prompt(const std::string& name, prompt::PromptSet ps);
  // Resets one built-in, or every built-in when name is empty. Custom sets
  // are kept.
  void reset_prompts(const std::string& name);

  // Builds a complete new state first; persists and swaps only on success.
  void replace_config(config::ToolConfig cfg);

  // Rebuilds a KB from its configured sources and swaps it in.
  PrepareReport reindex(const std::string& kb_id);

 private:
  mutable std::mutex state_mu_;
  std::shared_ptr<const State> state_;

  mutable std::shared_mutex catalog_mu_;
  prompt::PromptCatalog catalog_;
  std::filesystem::path catalog_path_;

  std::mutex writer_mu_;  // serializes config, catalog and KB rebuilds
  std::optional<std::filesystem::path> config_path_;
  std::unique_ptr<analysis::AnalysisLog> log_;
};

}  // namespace rcg::engine
