#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "rcg/index.hpp"

namespace rcg::index {

void HnswParams::validate() const {
  if (M < 2) throw ConfigError("hnsw M must be >= 2");
  if (ef_construction < M) throw ConfigError("hnsw ef_construction must be >= M");
  if (ef_search == 0) throw ConfigError("hnsw ef_search must be positive");
}

namespace {

// Uniform double in (0, 1) from the top 53 bits; independent of the
// standard library's distribution implementations.
double uniform_open(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

HnswIndex::HnswIndex(embed::EmbeddingMatrix matrix, HnswParams params,
                     std::string model_name)
    : VectorIndex(std::move(matrix), std::move(model_name)), params_(params) {
  params_.validate();
  m0_ = 2 * params_.M;
  level_mult_ = 1.0 / std::log(static_cast<double>(params_.M));
  links_.resize(size());
  std::mt19937_64 rng(params_.seed);
  for (std::size_t i = 0; i < size(); ++i) {
    int level = static_cast<int>(std::floor(-std::log(uniform_open(rng)) * level_mult_));
    insert(static_cast<std::uint32_t>(i), level);
  }
}

HnswIndex::HnswIndex(embed::EmbeddingMatrix matrix, HnswParams params,
                     std::string model_name, Graph graph)
    : VectorIndex(std::move(matrix), std::move(model_name)), params_(params) {
  params_.validate();
  m0_ = 2 * params_.M;
  level_mult_ = 1.0 / std::log(static_cast<double>(params_.M));
  links_ = std::move(graph.links);
  max_level_ = graph.max_level;
  entry_ = graph.entry;
}

double HnswIndex::sim_rows(std::uint32_t a, std::uint32_t b) const {
  auto ra = matrix().row(a);
  auto rb = matrix().row(b);
  double dot = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) dot += static_cast<double>(ra[i]) * rb[i];
  return dot * inv_norm(a) * inv_norm(b);
}

double HnswIndex::sim_query(std::span<const float> q, std::uint32_t row) const {
  return score_row(q, row);
}

namespace {

struct Closer {
  template <typename C>
  bool operator()(const C& a, const C& b) const {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.id < b.id;
  }
};

}  // namespace

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(
    std::span<const float> q, std::vector<Candidate> entry, std::size_t ef,
    int level) const {
  // to_visit: best first. found: worst on top, capped at ef.
  auto worse = [](const Candidate& a, const Candidate& b) { return Closer{}(b, a); };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> to_visit(worse);
  std::priority_queue<Candidate, std::vector<Candidate>, Closer> found;
  std::vector<char> visited(size(), 0);

  for (const auto& e : entry) {
    if (visited[e.id]) continue;
    visited[e.id] = 1;
    to_visit.push(e);
    found.push(e);
    if (found.size() > ef) found.pop();
  }

  while (!to_visit.empty()) {
    Candidate c = to_visit.top();
    if (found.size() >= ef && Closer{}(found.top(), c)) break;
    to_visit.pop();
    for (std::uint32_t nb : links_[c.id][static_cast<std::size_t>(level)]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      Candidate cand{sim_query(q, nb), nb};
      if (found.size() < ef || Closer{}(cand, found.top())) {
        to_visit.push(cand);
        found.push(cand);
        if (found.size() > ef) found.pop();
      }
    }
  }

  std::vector<Candidate> out;
  out.reserve(found.size());
  while (!found.empty()) {
    out.push_back(found.top());
    found.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Heuristic selection: a candidate is kept only if it is closer to the base
// element than to every neighbor already kept. Input sorted best first.
std::vector<HnswIndex::Candidate> HnswIndex::select_neighbors(
    std::vector<Candidate> candidates, std::size_t m) const {
  if (candidates.size() <= m) return candidates;
  std::vector<Candidate> kept;
  kept.reserve(m);
  for (const auto& c : candidates) {
    if (kept.size() >= m) break;
    bool diverse = true;
    for (const auto& k : kept) {
      if (sim_rows(c.id, k.id) > c.sim) {
        diverse = false;
        break;
      }
    }
    if (diverse) kept.push_back(c);
  }
  return kept;
}

void HnswIndex::insert(std::uint32_t node, int level) {
  links_[node].resize(static_cast<std::size_t>(level) + 1);
  if (max_level_ < 0) {
    entry_ = node;
    max_level_ = level;
    return;
  }

  std::vector<float> q(matrix().row(node).begin(), matrix().row(node).end());
  embed::normalize(q);

  Candidate cur{sim_query(q, entry_), entry_};
  for (int l = max_level_; l > level; --l) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (std::uint32_t nb : links_[cur.id][static_cast<std::size_t>(l)]) {
        Candidate c{sim_query(q, nb), nb};
        if (Closer{}(c, cur)) {
          cur = c;
          moved = true;
        }
      }
    }
  }

  std::vector<Candidate> entry{cur};
  for (int l = std::min(level, max_level_); l >= 0; --l) {
    auto found = search_layer(q, entry, params_.ef_construction, l);
    auto chosen = select_neighbors(found, params_.M);
    auto& mine = links_[node][static_cast<std::size_t>(l)];
    mine.clear();
    for (const auto& c : chosen) mine.push_back(c.id);

    const std::size_t cap = max_degree(l);
    for (const auto& c : chosen) {
      auto& theirs = links_[c.id][static_cast<std::size_t>(l)];
      if (theirs.size() < cap) {
        theirs.push_back(node);
        continue;
      }
      std::vector<Candidate> pool;
      pool.reserve(theirs.size() + 1);
      pool.push_back({c.sim, node});
      for (std::uint32_t t : theirs) pool.push_back({sim_rows(c.id, t), t});
      std::sort(pool.begin(), pool.end(), Closer{});
      auto pruned = select_neighbors(std::move(pool), cap);
      theirs.clear();
      for (const auto& p : pruned) theirs.push_back(p.id);
    }
    entry = std::move(found);
  }

  if (level > max_level_) {
    max_level_ = level;
    entry_ = node;
  }
}

std::vector<SearchHit> HnswIndex::search(std::span<const float> query,
                                         std::size_t k,
                                         std::size_t ef_search) const {
  auto q = prepare_query(query);
  k = std::min(k, size());
  if (k == 0 || max_level_ < 0) return {};
  std::size_t ef = std::max<std::size_t>(ef_search ? ef_search : params_.ef_search, k);

  Candidate cur{sim_query(q, entry_), entry_};
  for (int l = max_level_; l > 0; --l) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (std::uint32_t nb : links_[cur.id][static_cast<std::size_t>(l)]) {
        Candidate c{sim_query(q, nb), nb};
        if (Closer{}(c, cur)) {
          cur = c;
          moved = true;
        }
      }
    }
  }
  auto found = search_layer(q, {cur}, ef, 0);
  std::vector<SearchHit> hits;
  hits.reserve(k);
  for (std::size_t r = 0; r < k && r < found.size(); ++r) {
    hits.push_back(make_hit(found[r].id, found[r].sim, r + 1));
  }
  return hits;
}

}  // namespace rcg::index
