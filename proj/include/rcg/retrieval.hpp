#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcg/embed.hpp"
#include "rcg/index.hpp"
#include "rcg/ingest.hpp"

namespace rcg::retrieval {

enum class RetrievalMode { off, manual, mokb };

std::string_view to_string(RetrievalMode mode);
RetrievalMode retrieval_mode_from_string(std::string_view s);

struct RetrievalConfig {
  RetrievalMode mode = RetrievalMode::mokb;
  std::string selected_kb;  // required in manual mode
  std::size_t k = 5;
  int epw_weight = 100;  // percent of retrieved tokens injected, 0..100
  std::size_t ef_search = 128;

  // Throws RequestError when the invariants do not hold.
  void validate() const;
};

struct KnowledgeBase {
  std::string kb_id;
  std::string name;
  std::string description;
  std::vector<ingest::Passage> passages;  // row order of the index
  std::shared_ptr<const index::VectorIndex> index;
  std::shared_ptr<const embed::Embedder> embedder;
  std::vector<float> description_vec;
};

// Checks index rows == passages and embedder dim == index dim, then embeds
// the description (an empty description gets an empty description_vec).
std::shared_ptr<const KnowledgeBase> make_knowledge_base(
    std::string kb_id, std::string name, std::string description,
    std::vector<ingest::Passage> passages,
    std::shared_ptr<const index::VectorIndex> index,
    std::shared_ptr<const embed::Embedder> embedder);

// Many readers, exclusive writers. Snapshots keep registration order.
class KnowledgeBaseRegistry {
 public:
  // Replaces a KB with the same id in place, otherwise appends.
  void put(std::shared_ptr<const KnowledgeBase> kb);
  bool remove(std::string_view kb_id);
  std::shared_ptr<const KnowledgeBase> find(std::string_view kb_id) const;
  std::vector<std::shared_ptr<const KnowledgeBase>> snapshot() const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::vector<std::shared_ptr<const KnowledgeBase>> kbs_;
};

using KbList = std::span<const std::shared_ptr<const KnowledgeBase>>;

// Index of the first maximum of cosine(query_vec, description_vecs[i]).
std::size_t argmax_description(std::span<const float> query_vec,
                               std::span<const std::vector<float>> description_vecs);

// manual -> cfg.selected_kb (must be registered); mokb -> KB whose
// description is most similar to the query; off -> nullopt.
// Throws RequestError for an unknown manual KB, an empty registry, or a
// mokb registry containing a KB without description.
std::optional<std::string> select_kb(std::string_view query, KbList kbs,
                                     const RetrievalConfig& cfg);

struct RetrievedPassage {
  std::string passage_id;
  float score = 0.0f;
  std::size_t rank = 0;
  std::string text;

  bool operator==(const RetrievedPassage&) const = default;
};

struct RetrievalResult {
  std::string kb_id;
  std::vector<RetrievedPassage> hits;
  std::string knowledge_text;
  std::size_t tokens_retrieved = 0;
  std::size_t tokens_injected = 0;

  bool operator==(const RetrievalResult&) const = default;
};

struct EpwResult {
  std::string text;
  std::size_t tokens_total = 0;
  std::size_t tokens_kept = 0;
};

// Joins the ranked passages with "\n" and keeps the first
// ceil(N * weight / 100) whitespace tokens. Kept tokens are re-joined with a
// single space, or "\n" where the original gap contained a line break.
// weight 100 returns the joined text unchanged; weight 0 returns "".
EpwResult apply_epw(std::span<const std::string> passages, int weight_percent);

RetrievalResult retrieve(std::string_view query, const KnowledgeBase& kb,
                         const RetrievalConfig& cfg);

}  // namespace rcg::retrieval
