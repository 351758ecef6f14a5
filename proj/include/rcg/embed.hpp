#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rcg::embed {

enum class EmbedderKind { remote, test };

std::string_view to_string(EmbedderKind kind);
EmbedderKind embedder_kind_from_string(std::string_view s);

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::test;
  std::string endpoint_url;  // remote only
  std::string model_name = "test-hash-64";
  std::size_t dim = 64;
  bool normalize = true;
  std::size_t batch_size = 32;
  int max_attempts = 3;
  int retry_backoff_ms = 200;  // doubled after every failed attempt
  int timeout_ms = 30000;
  std::size_t max_in_flight = 4;
  std::string auth_env = "RCG_EMBED_TOKEN";

  // Throws ConfigError on dim == 0, batch_size == 0, max_attempts < 1, or a
  // remote spec without a parseable endpoint_url.
  void validate() const;

  bool operator==(const EmbedderSpec&) const = default;
};

// Row-major count x dim float32 matrix with one passage id per row.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(std::size_t dim) : dim_(dim) {}

  // Throws ConfigError when v.size() != dim().
  void append(std::span<const float> v, std::string id = {});

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const { return size() == 0; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const std::vector<float>& data() const { return data_; }
  const std::vector<std::string>& ids() const { return ids_; }
  // Empty string when the row has no id attached.
  const std::string& id(std::size_t i) const;

  void set_ids(std::vector<std::string> ids);
  void reserve(std::size_t rows) { data_.reserve(rows * dim_); }

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
};

class Embedder {
 public:
  virtual ~Embedder() = default;

  const EmbedderSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.dim; }

  // One vector per text, in order. Implementations may issue the batch as a
  // single upstream call; callers split long lists (see embed_texts).
  virtual std::vector<std::vector<float>> embed_batch(
      std::span<const std::string> texts) const = 0;

 protected:
  explicit Embedder(EmbedderSpec spec) : spec_(std::move(spec)) {}

 private:
  EmbedderSpec spec_;
};

// Deterministic hashing embedder used as a test oracle and offline default.
class TestEmbedder final : public Embedder {
 public:
  explicit TestEmbedder(EmbedderSpec spec);
  std::vector<std::vector<float>> embed_batch(
      std::span<const std::string> texts) const override;
};

// Talks the embeddings wire protocol:
//   POST {model, input: [..]} -> {data: [{index, embedding: [..]}]}
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(EmbedderSpec spec);
  ~RemoteEmbedder() override;

  // Throws UpstreamError (retryable) after max_attempts transport failures,
  // UpstreamError (not retryable) on 4xx, ConfigError on a dimension
  // mismatch with the spec.
  std::vector<std::vector<float>> embed_batch(
      std::span<const std::string> texts) const override;

 private:
  struct InFlight;
  std::unique_ptr<InFlight> in_flight_;
};

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

// Token buckets plus a small character-trigram signal, L2-normalized.
// The empty text (no tokens) maps to the unit vector e0.
std::vector<float> test_embed(std::string_view text, std::size_t dim = 64);

// Embeds texts in batches of spec().batch_size. ids, when given, must be
// aligned with texts.
EmbeddingMatrix embed_texts(const Embedder& embedder,
                            std::span<const std::string> texts,
                            std::span<const std::string> ids = {});

std::vector<float> embed_one(const Embedder& embedder, std::string_view text);

// dot(a,b)/(|a||b|) clamped to [-1,1]; 0 when either vector is all-zero.
// Throws ConfigError on dimension mismatch.
double cosine(std::span<const float> a, std::span<const float> b);

// In-place L2 normalization; all-zero vectors are left untouched.
void normalize(std::span<float> v);

}  // namespace rcg::embed
