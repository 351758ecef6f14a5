#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcg/embed.hpp"
#include "rcg/errors.hpp"

// Vector indexes over an EmbeddingMatrix. Similarity is cosine; rows are
// expected to be unit norm (as produced by the embedders) and scoring is an
// inner product scaled by the row's inverse norm. Indexes are immutable after
// construction and safe to search concurrently.
namespace rcg::index {

enum class IndexKind : std::uint8_t {
  flat = 0,
  hnsw = 1,
  ivfpq_hnsw = 2,  // reserved in the file format, not implemented
};

std::string_view to_string(IndexKind kind);
IndexKind index_kind_from_string(std::string_view s);

struct SearchHit {
  std::size_t row = 0;
  std::string passage_id;  // empty when the matrix carries no ids
  float score = 0.0f;
  std::size_t rank = 0;  // 1-based

  bool operator==(const SearchHit&) const = default;
};

class VectorIndex {
 public:
  virtual ~VectorIndex() = default;

  virtual IndexKind kind() const = 0;

  // Top-k by cosine, sorted descending with ties broken by ascending row.
  // k is clamped to size(). ef_search is ignored by exact indexes.
  // Throws ConfigError on a query of the wrong dimension.
  virtual std::vector<SearchHit> search(std::span<const float> query,
                                        std::size_t k,
                                        std::size_t ef_search) const = 0;

  std::size_t dim() const { return matrix_.dim(); }
  std::size_t size() const { return matrix_.size(); }
  const embed::EmbeddingMatrix& matrix() const { return matrix_; }
  const std::string& model_name() const { return model_name_; }

  // Attaches passage ids (row order). Used after loading from disk, where
  // ids live in the passage store rather than the index file.
  void attach_ids(std::vector<std::string> ids) { matrix_.set_ids(std::move(ids)); }

 protected:
  VectorIndex(embed::EmbeddingMatrix matrix, std::string model_name);

  // Exact cosine between a normalized query and row i.
  double score_row(std::span<const float> unit_query, std::size_t row) const;
  std::vector<float> prepare_query(std::span<const float> query) const;
  SearchHit make_hit(std::size_t row, double score, std::size_t rank) const;
  double inv_norm(std::size_t row) const { return inv_norms_[row]; }

 private:
  embed::EmbeddingMatrix matrix_;
  std::string model_name_;
  std::vector<double> inv_norms_;
};

class FlatIndex final : public VectorIndex {
 public:
  explicit FlatIndex(embed::EmbeddingMatrix matrix, std::string model_name = {});

  IndexKind kind() const override { return IndexKind::flat; }
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                std::size_t ef_search = 0) const override;
};

struct HnswParams {
  std::uint32_t M = 16;
  std::uint32_t ef_construction = 200;
  std::uint32_t ef_search = 128;  // default used when a caller passes 0
  std::uint64_t seed = 42;

  // Throws ConfigError unless M >= 2 and ef_construction >= M.
  void validate() const;
};

class HnswIndex final : public VectorIndex {
 public:
  // Inserts rows in order. Level assignment draws from a generator seeded
  // with params.seed, so equal inputs give identical graphs.
  HnswIndex(embed::EmbeddingMatrix matrix, HnswParams params,
            std::string model_name = {});

  IndexKind kind() const override { return IndexKind::hnsw; }
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                std::size_t ef_search) const override;

  const HnswParams& params() const { return params_; }
  std::uint32_t max_degree(int level) const { return level == 0 ? m0_ : params_.M; }
  double level_mult() const { return level_mult_; }
  int max_level() const { return max_level_; }
  std::uint32_t entry_point() const { return entry_; }
  // Top level of a node; its adjacency exists for levels [0, node_level].
  int node_level(std::uint32_t node) const {
    return static_cast<int>(links_[node].size()) - 1;
  }
  const std::vector<std::uint32_t>& neighbors(std::uint32_t node, int level) const {
    return links_[node][static_cast<std::size_t>(level)];
  }

  // Graph restored verbatim from an index file.
  struct Graph {
    int max_level = -1;
    std::uint32_t entry = 0;
    std::vector<std::vector<std::vector<std::uint32_t>>> links;
  };
  HnswIndex(embed::EmbeddingMatrix matrix, HnswParams params,
            std::string model_name, Graph graph);

 private:
  struct Candidate {
    double sim;
    std::uint32_t id;
  };

  void insert(std::uint32_t node, int level);
  std::vector<Candidate> search_layer(std::span<const float> q,
                                      std::vector<Candidate> entry,
                                      std::size_t ef, int level) const;
  std::vector<Candidate> select_neighbors(std::vector<Candidate> candidates,
                                          std::size_t m) const;
  double sim_rows(std::uint32_t a, std::uint32_t b) const;
  double sim_query(std::span<const float> q, std::uint32_t row) const;

  HnswParams params_;
  std::uint32_t m0_;
  double level_mult_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  int max_level_ = -1;
  std::uint32_t entry_ = 0;
};

std::unique_ptr<FlatIndex> build_flat(embed::EmbeddingMatrix matrix,
                                      std::string model_name = {});
std::unique_ptr<HnswIndex> build_hnsw(embed::EmbeddingMatrix matrix,
                                      const HnswParams& params,
                                      std::string model_name = {});

// Index file errors. Codes are stable for scripts and tests.
enum class IndexErrc {
  io = 1,           // cannot open / write
  format = 2,       // bad magic, unknown kind, inconsistent payload
  version = 3,      // unsupported format version
  truncated = 4,    // file ends before the declared payload
  fingerprint = 5,  // index built with a different embedder model
};

std::string_view to_string(IndexErrc code);

class IndexFileError : public Error {
 public:
  IndexFileError(IndexErrc code, const std::string& what)
      : Error(what), code_(code) {}
  IndexErrc code() const { return code_; }

 private:
  IndexErrc code_;
};

inline constexpr std::uint32_t kIndexFormatVersion = 1;

// Little-endian layout:
//   "RCGX" | version u32 | kind u8 | dim u32 | count u64
//   | params_len u32 | params bytes | model_name_len u32 | model_name bytes
//   | count*dim float32
//   | (hnsw) per node: level_count u32, then per level: len u64, len*u64 ids
void write_index(const VectorIndex& index, std::ostream& out);
std::unique_ptr<VectorIndex> read_index(
    std::istream& in, std::optional<std::string_view> expected_model = {});

void save_index(const VectorIndex& index, const std::filesystem::path& path);
std::unique_ptr<VectorIndex> load_index(
    const std::filesystem::path& path,
    std::optional<std::string_view> expected_model = {});

}  // namespace rcg::index
