#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcg/embed.hpp"
#include "rcg/retrieval.hpp"

namespace rcg::analysis {

struct Latency {
  double retrieve_ms = 0.0;
  double generate_ms = 0.0;
  double total_ms = 0.0;
};

// One chat turn. sentence_sim and token_sim are aligned with retrieved.
struct AnalysisRecord {
  std::string timestamp;  // ISO-8601 UTC
  std::string mode;
  std::string approach;
  std::string kb_id;
  std::string query;
  std::vector<retrieval::RetrievedPassage> retrieved;
  int epw_weight = 100;
  std::size_t tokens_injected = 0;
  std::size_t prompt_chars = 0;
  std::string response;
  std::vector<double> sentence_sim;
  std::vector<double> token_sim;
  Latency latency;
  std::string error;  // empty for a completed turn
};

nlohmann::ordered_json to_json(const AnalysisRecord& r);
AnalysisRecord record_from_json(const nlohmann::json& j);

std::string utc_timestamp();

// cosine(embed(query), embed(passage)). An empty text embeds like any other
// text (the test embedder maps it to e0).
double sentence_sim(std::string_view query, std::string_view passage,
                    const embed::Embedder& embedder);

// Mean over query tokens of the best cosine against any passage token.
// 0 when either side has no tokens.
double token_sim(std::string_view query, std::string_view passage,
                 const embed::Embedder& embedder);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Whitespace tokens, lowercased, with punctuation stripped at the edges.
// A token made only of punctuation is kept as is.
std::vector<std::string> rouge_tokens(std::string_view text);

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b);

RougeScore rouge_l(std::string_view candidate, std::string_view reference);

struct EvalPair {
  std::string query;
  std::string label;
};

// One JSON object {"query", "label"} per line; blank lines are skipped.
// Throws ConfigError on malformed lines, empty fields or an empty dataset.
std::vector<EvalPair> load_eval_dataset(const std::filesystem::path& path);

struct Approach {
  std::string tag;         // ROG, RAG, RCG, RCG-EPW-50, or a prompt set name
  std::string prompt_set;  // catalog entry used for assembly
  bool retrieval = true;
  int epw_weight = 100;
};

// "rog", "rag", "rcg", "rcg-epw-<w>" or any other catalog name (retrieval on).
Approach parse_approach(std::string_view name);

struct Sweep {
  int start = 10;
  int end = 90;
  int step = 10;
};

// "start:end:step" with 0 <= start <= end <= 100 and step > 0.
Sweep parse_sweep(std::string_view s);

// Requested approaches in order. Sweep approaches are inserted before the
// first RCG entry when there is one, otherwise appended.
std::vector<Approach> expand_approaches(const std::vector<std::string>& names,
                                        const std::optional<Sweep>& sweep);

struct EvalRow {
  std::string query;
  std::string label;
  std::string response;
  double rouge_l = 0.0;  // f1
  double time_s = 0.0;
  std::string error;
};

struct EvalReport {
  std::string approach;
  std::vector<EvalRow> rows;
  double mean_rouge_l = 0.0;
  double mean_time_s = 0.0;
};

struct TurnOutcome {
  std::string response;
  std::string error;  // non-empty marks a failed turn
};

// Runs one query through retrieve -> assemble -> generate.
using EvalRunner = std::function<TurnOutcome(const EvalPair&, const Approach&)>;

// Queries run sequentially; time_s is wall-clock around the runner call.
// A runner exception is recorded as an error row with rouge 0.
std::vector<EvalReport> run_eval(const std::vector<EvalPair>& dataset,
                                 const std::vector<Approach>& approaches,
                                 const EvalRunner& runner);

struct RenderOptions {
  bool timing = true;  // false renders every time as 0 (reproducible output)
  bool rows = false;   // include per-pair rows after the summary
};

// Aligned columns: Approach, Rouge-L, time/query(s).
std::string render_reports(const std::vector<EvalReport>& reports,
                           const RenderOptions& opts = {});
nlohmann::ordered_json reports_to_json(const std::vector<EvalReport>& reports,
                                       const RenderOptions& opts = {});

// Append-only JSONL log with an in-memory tail for the API. Appends are
// serialized; a disk failure is recorded and never thrown.
class AnalysisLog {
 public:
  explicit AnalysisLog(std::optional<std::filesystem::path> file = std::nullopt,
                       std::size_t memory_cap = 10000);

  // False when the record could not be written to disk (it is still kept
  // in memory).
  bool append(const AnalysisRecord& record);

  std::size_t size() const;
  // Oldest first.
  std::vector<AnalysisRecord> page(std::size_t offset, std::size_t limit) const;
  std::string last_error() const;

  // Atomically writes the whole log to path. Throws Error on failure.
  void export_to(const std::filesystem::path& path) const;

  const std::optional<std::filesystem::path>& file() const { return file_; }

 private:
  std::optional<std::filesystem::path> file_;
  std::size_t memory_cap_;
  mutable std::mutex mu_;
  std::deque<AnalysisRecord> records_;
  std::size_t dropped_ = 0;  // records evicted from memory
  std::string last_error_;
};

}  // namespace rcg::analysis
