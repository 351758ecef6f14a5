#include "rcg/embed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcg/errors.hpp"
#include "rcg/http_util.hpp"
#include "rcg/text.hpp"

namespace rcg::embed {

std::string_view to_string(EmbedderKind kind) {
  return kind == EmbedderKind::remote ? "remote" : "test";
}

EmbedderKind embedder_kind_from_string(std::string_view s) {
  if (s == "remote") return EmbedderKind::remote;
  if (s == "test") return EmbedderKind::test;
  throw ConfigError("unknown embedder kind: " + std::string(s));
}

void EmbedderSpec::validate() const {
  if (dim == 0) throw ConfigError("embedder dim must be positive");
  if (batch_size == 0) throw ConfigError("embedder batch_size must be positive");
  if (max_attempts < 1) throw ConfigError("embedder max_attempts must be >= 1");
  if (max_in_flight == 0) throw ConfigError("embedder max_in_flight must be >= 1");
  if (model_name.empty()) throw ConfigError("embedder model_name is empty");
  if (kind == EmbedderKind::remote) http::parse_endpoint(endpoint_url);
}

void EmbeddingMatrix::append(std::span<const float> v, std::string id) {
  if (v.size() != dim_) {
    throw ConfigError("embedding has dimension " + std::to_string(v.size()) +
                      ", matrix expects " + std::to_string(dim_));
  }
  if (!id.empty() && ids_.size() < size()) ids_.resize(size());
  data_.insert(data_.end(), v.begin(), v.end());
  if (!id.empty() || !ids_.empty()) ids_.push_back(std::move(id));
}

const std::string& EmbeddingMatrix::id(std::size_t i) const {
  static const std::string kEmpty;
  return i < ids_.size() ? ids_[i] : kEmpty;
}

void EmbeddingMatrix::set_ids(std::vector<std::string> ids) {
  if (!ids.empty() && ids.size() != size()) {
    throw ConfigError("id count " + std::to_string(ids.size()) +
                      " does not match row count " + std::to_string(size()));
  }
  ids_ = std::move(ids);
}

void normalize(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq == 0.0) return;
  double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine: dimension mismatch " + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {
constexpr double kTrigramWeight = 0.05;
constexpr std::uint64_t kTrigramBasis = 0x84222325cbf29ce4ULL;
}  // namespace

std::vector<float> test_embed(std::string_view text, std::size_t dim) {
  std::vector<double> acc(dim, 0.0);
  auto tokens = text::split_whitespace(text);
  for (auto raw : tokens) {
    std::string tok = text::normalize_token(raw);
    if (tok.empty()) tok = std::string(raw);
    acc[text::fnv1a(tok) % dim] += 1.0;
    std::string padded = "<" + tok + ">";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      auto tri = std::string_view(padded).substr(i, 3);
      acc[text::fnv1a(tri, kTrigramBasis) % dim] += kTrigramWeight;
    }
  }
  std::vector<float> v(dim, 0.0f);
  double sq = 0.0;
  for (double x : acc) sq += x * x;
  if (sq == 0.0) {
    v[0] = 1.0f;
    return v;
  }
  double inv = 1.0 / std::sqrt(sq);
  for (std::size_t i = 0; i < dim; ++i) v[i] = static_cast<float>(acc[i] * inv);
  return v;
}

TestEmbedder::TestEmbedder(EmbedderSpec spec) : Embedder(std::move(spec)) {
  this->spec().validate();
}

std::vector<std::vector<float>> TestEmbedder::embed_batch(
    std::span<const std::string> texts) const {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  // Always unit norm, regardless of spec().normalize.
  for (const auto& t : texts) out.push_back(test_embed(t, dim()));
  return out;
}

struct RemoteEmbedder::InFlight {
  explicit InFlight(std::size_t n) : slots(static_cast<std::ptrdiff_t>(n)) {}
  std::counting_semaphore<1024> slots;
};

RemoteEmbedder::RemoteEmbedder(EmbedderSpec spec)
    : Embedder(std::move(spec)),
      in_flight_(std::make_unique<InFlight>(
          std::min<std::size_t>(this->spec().max_in_flight, 1024))) {
  this->spec().validate();
}

RemoteEmbedder::~RemoteEmbedder() = default;

std::vector<std::vector<float>> RemoteEmbedder::embed_batch(
    std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  const auto& s = spec();
  auto ep = http::parse_endpoint(s.endpoint_url);

  nlohmann::json body;
  body["model"] = s.model_name;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (auto token = http::token_from_env(s.auth_env); !token.empty()) {
    headers.emplace("Authorization", "Bearer " + token);
  }

  std::string last_error;
  int last_status = 0;
  for (int attempt = 1; attempt <= s.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(s.retry_backoff_ms << (attempt - 2)));
    }
    httplib::Result res;
    {
      in_flight_->slots.acquire();
      httplib::Client cli(ep.origin);
      auto secs = s.timeout_ms / 1000;
      auto usecs = (s.timeout_ms % 1000) * 1000;
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      res = cli.Post(ep.path, headers, payload, "application/json");
      in_flight_->slots.release();
    }
    if (!res) {
      last_error = "embedding endpoint unreachable: " + httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "embedding endpoint returned HTTP " + std::to_string(res->status);
      last_status = res->status;
      continue;
    }
    if (res->status != 200) {
      throw UpstreamError("embedding endpoint returned HTTP " +
                              std::to_string(res->status) + ": " + res->body,
                          false, attempt, res->status);
    }

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(std::string("malformed embeddings response: ") + e.what(),
                          false, attempt, res->status);
    }
    std::vector<std::vector<float>> out(texts.size());
    std::vector<bool> seen(texts.size(), false);
    try {
      const auto& data = reply.at("data");
      if (data.size() != texts.size()) {
        throw UpstreamError("embeddings response has " + std::to_string(data.size()) +
                                " items for " + std::to_string(texts.size()) + " inputs",
                            false, attempt, res->status);
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& item = data[i];
        std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : i;
        if (idx >= texts.size() || seen[idx]) {
          throw UpstreamError("embeddings response has bad index " + std::to_string(idx),
                              false, attempt, res->status);
        }
        seen[idx] = true;
        out[idx] = item.at("embedding").get<std::vector<float>>();
        if (out[idx].size() != s.dim) {
          throw ConfigError("embedding endpoint returned dimension " +
                            std::to_string(out[idx].size()) + ", configured dim is " +
                            std::to_string(s.dim));
        }
        if (s.normalize) normalize(out[idx]);
      }
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(std::string("malformed embeddings response: ") + e.what(),
                          false, attempt, res->status);
    }
    return out;
  }
  throw UpstreamError(last_error + " (after " + std::to_string(s.max_attempts) +
                          " attempts)",
                      true, s.max_attempts, last_status);
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == EmbedderKind::remote) {
    return std::make_unique<RemoteEmbedder>(spec);
  }
  return std::make_unique<TestEmbedder>(spec);
}

EmbeddingMatrix embed_texts(const Embedder& embedder,
                            std::span<const std::string> texts,
                            std::span<const std::string> ids) {
  if (!ids.empty() && ids.size() != texts.size()) {
    throw ConfigError("embed_texts: ids not aligned with texts");
  }
  EmbeddingMatrix m(embedder.dim());
  m.reserve(texts.size());
  const std::size_t batch = embedder.spec().batch_size;
  for (std::size_t start = 0; start < texts.size(); start += batch) {
    std::size_t n = std::min(batch, texts.size() - start);
    auto rows = embedder.embed_batch(texts.subspan(start, n));
    if (rows.size() != n) {
      throw ConfigError("embedder returned " + std::to_string(rows.size()) +
                        " vectors for " + std::to_string(n) + " texts");
    }
    for (std::size_t i = 0; i < n; ++i) {
      m.append(rows[i], ids.empty() ? std::string() : ids[start + i]);
    }
  }
  return m;
}

std::vector<float> embed_one(const Embedder& embedder, std::string_view text) {
  std::string t(text);
  auto rows = embedder.embed_batch(std::span<const std::string>(&t, 1));
  if (rows.size() != 1 || rows[0].size() != embedder.dim()) {
    throw ConfigError("embedder returned a malformed vector");
  }
  return std::move(rows[0]);
}

}  // namespace rcg::embed
