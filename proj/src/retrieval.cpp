#include "rcg/retrieval.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include "rcg/errors.hpp"
#include "rcg/text.hpp"

namespace rcg::retrieval {

std::string_view to_string(RetrievalMode mode) {
  switch (mode) {
    case RetrievalMode::off:
      return "off";
    case RetrievalMode::manual:
      return "manual";
    case RetrievalMode::mokb:
      return "mokb";
  }
  return "off";
}

RetrievalMode retrieval_mode_from_string(std::string_view s) {
  if (s == "off") return RetrievalMode::off;
  if (s == "manual") return RetrievalMode::manual;
  if (s == "mokb") return RetrievalMode::mokb;
  throw RequestError("unknown retrieval mode: " + std::string(s));
}

void RetrievalConfig::validate() const {
  if (mode == RetrievalMode::manual && selected_kb.empty()) {
    throw RequestError("manual retrieval mode requires a kb_id");
  }
  if (epw_weight < 0 || epw_weight > 100) {
    throw RequestError("epw_weight must be within [0, 100], got " +
                       std::to_string(epw_weight));
  }
  if (k == 0) throw RequestError("k must be positive");
  if (ef_search == 0) throw RequestError("ef_search must be positive");
}

std::shared_ptr<const KnowledgeBase> make_knowledge_base(
    std::string kb_id, std::string name, std::string description,
    std::vector<ingest::Passage> passages,
    std::shared_ptr<const index::VectorIndex> index,
    std::shared_ptr<const embed::Embedder> embedder) {
  if (kb_id.empty()) throw ConfigError("knowledge base id is empty");
  if (!index || !embedder) throw ConfigError("knowledge base " + kb_id + " is incomplete");
  if (index->size() != passages.size()) {
    throw ConfigError("knowledge base " + kb_id + ": index has " +
                      std::to_string(index->size()) + " rows but passage store has " +
                      std::to_string(passages.size()) + " records");
  }
  if (index->size() > 0 && index->dim() != embedder->dim()) {
    throw ConfigError("knowledge base " + kb_id + ": index dim " +
                      std::to_string(index->dim()) + " != embedder dim " +
                      std::to_string(embedder->dim()));
  }
  auto kb = std::make_shared<KnowledgeBase>();
  kb->kb_id = std::move(kb_id);
  kb->name = std::move(name);
  kb->description = std::move(description);
  kb->passages = std::move(passages);
  kb->index = std::move(index);
  kb->embedder = std::move(embedder);
  if (!kb->description.empty()) {
    kb->description_vec = embed::embed_one(*kb->embedder, kb->description);
  }
  return kb;
}

void KnowledgeBaseRegistry::put(std::shared_ptr<const KnowledgeBase> kb) {
  std::unique_lock lock(mu_);
  for (auto& existing : kbs_) {
    if (existing->kb_id == kb->kb_id) {
      existing = std::move(kb);
      return;
    }
  }
  kbs_.push_back(std::move(kb));
}

bool KnowledgeBaseRegistry::remove(std::string_view kb_id) {
  std::unique_lock lock(mu_);
  auto it = std::find_if(kbs_.begin(), kbs_.end(),
                         [&](const auto& kb) { return kb->kb_id == kb_id; });
  if (it == kbs_.end()) return false;
  kbs_.erase(it);
  return true;
}

std::shared_ptr<const KnowledgeBase> KnowledgeBaseRegistry::find(
    std::string_view kb_id) const {
  std::shared_lock lock(mu_);
  for (const auto& kb : kbs_) {
    if (kb->kb_id == kb_id) return kb;
  }
  return nullptr;
}

std::vector<std::shared_ptr<const KnowledgeBase>> KnowledgeBaseRegistry::snapshot() const {
  std::shared_lock lock(mu_);
  return kbs_;
}

std::size_t KnowledgeBaseRegistry::size() const {
  std::shared_lock lock(mu_);
  return kbs_.size();
}

std::size_t argmax_description(std::span<const float> query_vec,
                               std::span<const std::vector<float>> description_vecs) {
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < description_vecs.size(); ++i) {
    double s = embed::cosine(query_vec, description_vecs[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

std::optional<std::string> select_kb(std::string_view query, KbList kbs,
                                     const RetrievalConfig& cfg) {
  if (cfg.mode == RetrievalMode::off) return std::nullopt;
  if (kbs.empty()) throw RequestError("no knowledge base is registered");

  if (cfg.mode == RetrievalMode::manual) {
    for (const auto& kb : kbs) {
      if (kb->kb_id == cfg.selected_kb) return kb->kb_id;
    }
    throw RequestError("unknown knowledge base: " + cfg.selected_kb);
  }

  for (const auto& kb : kbs) {
    if (kb->description.empty()) {
      throw RequestError("mokb mode requires a description for knowledge base " +
                         kb->kb_id);
    }
  }
  // KBs may use different embedders; embed the query once per embedder.
  std::map<const embed::Embedder*, std::vector<float>> query_vecs;
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < kbs.size(); ++i) {
    const auto& kb = *kbs[i];
    auto [it, fresh] = query_vecs.try_emplace(kb.embedder.get());
    if (fresh) it->second = embed::embed_one(*kb.embedder, query);
    double s = embed::cosine(it->second, kb.description_vec);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return kbs[best]->kb_id;
}

EpwResult apply_epw(std::span<const std::string> passages, int weight_percent) {
  const int weight = std::clamp(weight_percent, 0, 100);
  std::string joined;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i) joined += '\n';
    joined += passages[i];
  }

  EpwResult out;
  if (weight == 100) {
    out.tokens_total = out.tokens_kept = text::count_whitespace_tokens(joined);
    out.text = std::move(joined);
    return out;
  }

  // Tokens with a flag telling whether the gap before them held a newline.
  struct Token {
    std::string_view text;
    bool after_newline;
  };
  std::vector<Token> tokens;
  std::string_view s = joined;
  std::size_t i = 0;
  while (i < s.size()) {
    bool newline = false;
    while (i < s.size() && text::is_space(s[i])) {
      if (s[i] == '\n') newline = true;
      ++i;
    }
    std::size_t start = i;
    while (i < s.size() && !text::is_space(s[i])) ++i;
    if (i > start) tokens.push_back({s.substr(start, i - start), newline});
  }

  const std::size_t n = tokens.size();
  const std::size_t keep = (n * static_cast<std::size_t>(weight) + 99) / 100;
  out.tokens_total = n;
  out.tokens_kept = keep;
  for (std::size_t t = 0; t < keep; ++t) {
    if (t) out.text += tokens[t].after_newline ? '\n' : ' ';
    out.text += tokens[t].text;
  }
  return out;
}

RetrievalResult retrieve(std::string_view query, const KnowledgeBase& kb,
                         const RetrievalConfig& cfg) {
  if (cfg.mode == RetrievalMode::off) {
    throw RequestError("retrieve called with retrieval mode off");
  }
  cfg.validate();
  RetrievalResult result;
  result.kb_id = kb.kb_id;
  if (kb.index->size() == 0) return result;

  auto query_vec = embed::embed_one(*kb.embedder, query);
  auto hits = kb.index->search(query_vec, cfg.k, cfg.ef_search);
  std::vector<std::string> texts;
  texts.reserve(hits.size());
  for (const auto& h : hits) {
    const auto& passage = kb.passages[h.row];
    result.hits.push_back({passage.passage_id, h.score, h.rank, passage.text});
    texts.push_back(passage.text);
  }
  auto epw = apply_epw(texts, cfg.epw_weight);
  result.knowledge_text = std::move(epw.text);
  result.tokens_retrieved = epw.tokens_total;
  result.tokens_injected = epw.tokens_kept;
  return result;
}

}  // namespace rcg::retrieval
