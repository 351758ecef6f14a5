#include "rcg/index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rcg::index {

std::string_view to_string(IndexKind kind) {
  switch (kind) {
    case IndexKind::flat:
      return "flat";
    case IndexKind::hnsw:
      return "hnsw";
    case IndexKind::ivfpq_hnsw:
      return "ivfpq_hnsw";
  }
  return "unknown";
}

IndexKind index_kind_from_string(std::string_view s) {
  if (s == "flat") return IndexKind::flat;
  if (s == "hnsw") return IndexKind::hnsw;
  if (s == "ivfpq_hnsw") {
    throw ConfigError("index kind ivfpq_hnsw is reserved but not supported");
  }
  throw ConfigError("unknown index kind: " + std::string(s));
}

std::string_view to_string(IndexErrc code) {
  switch (code) {
    case IndexErrc::io:
      return "io";
    case IndexErrc::format:
      return "format";
    case IndexErrc::version:
      return "version";
    case IndexErrc::truncated:
      return "truncated";
    case IndexErrc::fingerprint:
      return "fingerprint";
  }
  return "unknown";
}

VectorIndex::VectorIndex(embed::EmbeddingMatrix matrix, std::string model_name)
    : matrix_(std::move(matrix)), model_name_(std::move(model_name)) {
  inv_norms_.resize(matrix_.size());
  for (std::size_t i = 0; i < matrix_.size(); ++i) {
    double sq = 0.0;
    for (float x : matrix_.row(i)) sq += static_cast<double>(x) * x;
    inv_norms_[i] = sq == 0.0 ? 0.0 : 1.0 / std::sqrt(sq);
  }
}

std::vector<float> VectorIndex::prepare_query(std::span<const float> query) const {
  if (query.size() != dim()) {
    throw ConfigError("query has dimension " + std::to_string(query.size()) +
                      ", index expects " + std::to_string(dim()));
  }
  std::vector<float> q(query.begin(), query.end());
  embed::normalize(q);
  return q;
}

double VectorIndex::score_row(std::span<const float> unit_query,
                              std::size_t row) const {
  auto r = matrix_.row(row);
  double dot = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    dot += static_cast<double>(unit_query[i]) * r[i];
  }
  return std::clamp(dot * inv_norms_[row], -1.0, 1.0);
}

SearchHit VectorIndex::make_hit(std::size_t row, double score,
                                std::size_t rank) const {
  return SearchHit{row, matrix_.id(row), static_cast<float>(score), rank};
}

FlatIndex::FlatIndex(embed::EmbeddingMatrix matrix, std::string model_name)
    : VectorIndex(std::move(matrix), std::move(model_name)) {}

std::vector<SearchHit> FlatIndex::search(std::span<const float> query,
                                         std::size_t k, std::size_t) const {
  auto q = prepare_query(query);
  const std::size_t n = size();
  k = std::min(k, n);
  if (k == 0) return {};

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = score_row(q, i);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<SearchHit> hits;
  hits.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    hits.push_back(make_hit(order[r], scores[order[r]], r + 1));
  }
  return hits;
}

std::unique_ptr<FlatIndex> build_flat(embed::EmbeddingMatrix matrix,
                                      std::string model_name) {
  return std::make_unique<FlatIndex>(std::move(matrix), std::move(model_name));
}

std::unique_ptr<HnswIndex> build_hnsw(embed::EmbeddingMatrix matrix,
                                      const HnswParams& params,
                                      std::string model_name) {
  return std::make_unique<HnswIndex>(std::move(matrix), params,
                                     std::move(model_name));
}

}  // namespace rcg::index
