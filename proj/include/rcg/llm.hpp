#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rcg/prompt.hpp"

namespace rcg::llm {

enum class LlmKind { remote, stub };

std::string_view to_string(LlmKind kind);
LlmKind llm_kind_from_string(std::string_view s);

struct LlmSpec {
  LlmKind kind = LlmKind::stub;
  std::string endpoint_url;  // completion-style endpoint, remote only
  std::string model_name = "stub";
  double temperature = 0.0;
  std::size_t max_new_tokens = 512;
  int request_timeout_ms = 60000;
  std::size_t context_budget = 4096;  // estimated prompt tokens
  std::vector<std::string> stop = {"\n\n"};
  int max_attempts = 3;
  int retry_backoff_ms = 200;
  std::string auth_env = "RCG_LLM_TOKEN";

  void validate() const;

  bool operator==(const LlmSpec&) const = default;
};

struct TokenChunk {
  std::string text;
};

struct Usage {
  std::size_t prompt_tokens_est = 0;
  std::size_t completion_tokens = 0;
};

struct Done {
  std::string finish_reason;  // "stop" or "length"
  Usage usage;
};

// Error codes: budget_exceeded, timeout, connection, upstream_http,
// protocol, cancelled.
struct GenerationError {
  std::string code;
  std::string message;
  int upstream_status = 0;
};

// A stream is zero or more TokenChunk followed by exactly one Done or
// GenerationError.
using GenerationEvent = std::variant<TokenChunk, Done, GenerationError>;

// Returning false cancels the generation.
using EventSink = std::function<bool(const GenerationEvent&)>;

struct GenerationRequest {
  std::string prompt;
  // Active prompt set; only the stub reads it (to locate the knowledge).
  prompt::PromptSet prompts;
};

// ceil(whitespace tokens * 1.3)
std::size_t estimate_tokens(std::string_view prompt);

class Generator {
 public:
  virtual ~Generator() = default;

  const LlmSpec& spec() const { return spec_; }

  // Enforces the context budget before any upstream call, then streams.
  void generate_stream(const GenerationRequest& req, const EventSink& sink) const;

 protected:
  explicit Generator(LlmSpec spec) : spec_(std::move(spec)) {}
  virtual void do_generate(const GenerationRequest& req, std::size_t prompt_tokens,
                           const EventSink& sink) const = 0;

 private:
  LlmSpec spec_;
};

// Deterministic offline generator. See stub_generate.
class StubGenerator final : public Generator {
 public:
  explicit StubGenerator(LlmSpec spec);

 protected:
  void do_generate(const GenerationRequest& req, std::size_t prompt_tokens,
                   const EventSink& sink) const override;
};

// Completion endpoint client:
//   POST {model, prompt, temperature, max_tokens, stop, stream: true}
// answered by server-sent events "data: {choices:[{text}]}" ending with
// "data: [DONE]". A plain JSON (non-streamed) reply is accepted too.
class RemoteGenerator final : public Generator {
 public:
  explicit RemoteGenerator(LlmSpec spec);

 protected:
  void do_generate(const GenerationRequest& req, std::size_t prompt_tokens,
                   const EventSink& sink) const override;
};

std::unique_ptr<Generator> make_generator(const LlmSpec& spec);

// Stub contract:
//  1. A trailing model_suffix is removed from the prompt.
//  2. If retriever_prefix and retriever_suffix are both non-empty and occur
//     in order, the text between them is the knowledge and the text after
//     the suffix is the question; otherwise the whole prompt is the
//     question.
//  3. With non-blank knowledge the answer is its first sentence. When the
//     retriever suffix permits outside knowledge (contains "may use"), the
//     answer is followed by " NO-KNOWLEDGE: " and the first 8 tokens of the
//     question, mimicking a blended answer.
//  4. Without knowledge the answer is "NO-KNOWLEDGE: " followed by the first
//     8 whitespace tokens of the question.
std::string stub_generate(std::string_view prompt, const prompt::PromptSet& active);

struct Completion {
  std::string text;
  std::vector<std::string> chunks;
  std::optional<Done> done;
  std::optional<GenerationError> error;
};

// Collects a stream into a Completion.
Completion generate(const Generator& gen, const GenerationRequest& req);

// First sentence of text, trimmed: up to and including the first '.', '!'
// or '?' followed by whitespace or end, and never past a line break.
std::string first_sentence(std::string_view text);

}  // namespace rcg::llm
