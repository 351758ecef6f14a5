#include "rcg/llm.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcg/errors.hpp"
#include "rcg/http_util.hpp"
#include "rcg/text.hpp"

namespace rcg::llm {

std::string_view to_string(LlmKind kind) {
  return kind == LlmKind::remote ? "remote" : "stub";
}

LlmKind llm_kind_from_string(std::string_view s) {
  if (s == "remote") return LlmKind::remote;
  if (s == "stub") return LlmKind::stub;
  throw ConfigError("unknown llm kind: " + std::string(s));
}

void LlmSpec::validate() const {
  if (temperature < 0.0) throw ConfigError("llm temperature must be >= 0");
  if (max_new_tokens < 1) throw ConfigError("llm max_new_tokens must be >= 1");
  if (context_budget < 1) throw ConfigError("llm context_budget must be >= 1");
  if (request_timeout_ms < 1) throw ConfigError("llm request_timeout_ms must be >= 1");
  if (max_attempts < 1) throw ConfigError("llm max_attempts must be >= 1");
  for (const auto& s : stop) {
    if (s.empty()) throw ConfigError("llm stop strings must be non-empty");
  }
  if (kind == LlmKind::remote) http::parse_endpoint(endpoint_url);
}

std::size_t estimate_tokens(std::string_view prompt) {
  std::size_t words = text::count_whitespace_tokens(prompt);
  return (words * 13 + 9) / 10;
}

void Generator::generate_stream(const GenerationRequest& req,
                                const EventSink& sink) const {
  std::size_t est = estimate_tokens(req.prompt);
  if (est > spec_.context_budget) {
    BudgetError e(est, spec_.context_budget);
    sink(GenerationError{"budget_exceeded", e.what(), 0});
    return;
  }
  do_generate(req, est, sink);
}

std::string first_sentence(std::string_view s) {
  s = text::trim(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\n') return std::string(text::trim(s.substr(0, i)));
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == s.size() || text::is_space(s[i + 1]))) {
      return std::string(s.substr(0, i + 1));
    }
  }
  return std::string(s);
}

namespace {

std::string first_tokens(std::string_view s, std::size_t n) {
  auto toks = text::split_whitespace(s);
  std::string out;
  for (std::size_t i = 0; i < toks.size() && i < n; ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

bool permits_outside_knowledge(std::string_view suffix) {
  return text::to_lower_ascii(suffix).find("may use") != std::string::npos;
}

// Splits text into chunks that each start at a token boundary; leading
// whitespace stays with the first chunk. Concatenation equals the input.
std::vector<std::string> chunk_by_token(std::string_view s) {
  std::vector<std::string> chunks;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < s.size() && text::is_space(s[i])) ++i;
  while (i < s.size()) {
    while (i < s.size() && !text::is_space(s[i])) ++i;
    while (i < s.size() && text::is_space(s[i])) ++i;
    chunks.emplace_back(s.substr(start, i - start));
    start = i;
  }
  if (start < s.size()) chunks.emplace_back(s.substr(start));
  return chunks;
}

}  // namespace

std::string stub_generate(std::string_view prompt, const prompt::PromptSet& active) {
  std::string_view body = prompt;
  const auto& ms = active.model_suffix;
  if (!ms.empty() && body.size() >= ms.size() &&
      body.substr(body.size() - ms.size()) == ms) {
    body.remove_suffix(ms.size());
  }

  std::string_view question = body;
  std::optional<std::string_view> knowledge;
  const auto& rp = active.retriever_prefix;
  const auto& rs = active.retriever_suffix;
  if (!rp.empty() && !rs.empty()) {
    std::size_t from = 0;
    if (!active.ai_prefix.empty() && body.starts_with(active.ai_prefix)) {
      from = active.ai_prefix.size();
    }
    auto p = body.find(rp, from);
    if (p != std::string_view::npos) {
      auto k_begin = p + rp.size();
      auto q = body.find(rs, k_begin);
      if (q != std::string_view::npos) {
        knowledge = body.substr(k_begin, q - k_begin);
        question = body.substr(q + rs.size());
      }
    }
  }

  if (knowledge) {
    std::string answer = first_sentence(*knowledge);
    if (!answer.empty()) {
      if (permits_outside_knowledge(rs)) {
        answer += " NO-KNOWLEDGE: " + first_tokens(question, 8);
      }
      return answer;
    }
  }
  return "NO-KNOWLEDGE: " + first_tokens(question, 8);
}

StubGenerator::StubGenerator(LlmSpec spec) : Generator(std::move(spec)) {
  this->spec().validate();
}

void StubGenerator::do_generate(const GenerationRequest& req,
                                std::size_t prompt_tokens,
                                const EventSink& sink) const {
  std::string completion = stub_generate(req.prompt, req.prompts);
  std::string finish = "stop";
  for (const auto& stop : spec().stop) {
    auto at = completion.find(stop);
    if (at != std::string::npos) completion.resize(at);
  }
  auto chunks = chunk_by_token(completion);
  if (chunks.size() > spec().max_new_tokens) {
    chunks.resize(spec().max_new_tokens);
    finish = "length";
  }
  for (const auto& c : chunks) {
    if (!sink(TokenChunk{c})) {
      sink(GenerationError{"cancelled", "generation cancelled by caller", 0});
      return;
    }
  }
  sink(Done{finish, Usage{prompt_tokens, chunks.size()}});
}

RemoteGenerator::RemoteGenerator(LlmSpec spec) : Generator(std::move(spec)) {
  this->spec().validate();
}

namespace {

// Incremental server-sent-events parser for completion chunks.
class SseParser {
 public:
  // Returns false to stop reading (sink cancelled or stream finished).
  bool feed(std::string_view data) {
    buf_.append(data);
    for (;;) {
      auto end = find_event_end();
      if (end.first == std::string::npos) return true;
      std::string event = buf_.substr(0, end.first);
      buf_.erase(0, end.first + end.second);
      if (!handle_event(event)) return false;
    }
  }

  std::function<bool(std::string_view text, std::optional<std::string> finish)> on_text;
  bool done = false;
  std::optional<std::string> error;

 private:
  std::pair<std::size_t, std::size_t> find_event_end() const {
    auto a = buf_.find("\n\n");
    auto b = buf_.find("\r\n\r\n");
    if (b != std::string::npos && (a == std::string::npos || b < a)) return {b, 4};
    return {a, 2};
  }

  bool handle_event(const std::string& event) {
    std::string data;
    std::size_t pos = 0;
    while (pos < event.size()) {
      auto nl = event.find('\n', pos);
      std::string line = event.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
      pos = nl == std::string::npos ? event.size() : nl + 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("data:", 0) == 0) {
        std::string_view v(line);
        v.remove_prefix(5);
        if (!v.empty() && v.front() == ' ') v.remove_prefix(1);
        if (!data.empty()) data += '\n';
        data += v;
      }
    }
    if (data.empty()) return true;
    if (data == "[DONE]") {
      done = true;
      return false;
    }
    try {
      auto j = nlohmann::json::parse(data);
      if (j.contains("error")) {
        error = j["error"].dump();
        return false;
      }
      const auto& choice = j.at("choices").at(0);
      std::string text;
      if (choice.contains("text") && choice["text"].is_string()) {
        text = choice["text"].get<std::string>();
      } else if (choice.contains("delta") && choice["delta"].contains("content") &&
                 choice["delta"]["content"].is_string()) {
        text = choice["delta"]["content"].get<std::string>();
      }
      std::optional<std::string> finish;
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
        finish = choice["finish_reason"].get<std::string>();
      }
      return on_text(text, finish);
    } catch (const nlohmann::json::exception& e) {
      error = std::string("malformed stream event: ") + e.what();
      return false;
    }
  }

  std::string buf_;
};

}  // namespace

void RemoteGenerator::do_generate(const GenerationRequest& req,
                                  std::size_t prompt_tokens,
                                  const EventSink& sink) const {
  const auto& s = spec();
  auto ep = http::parse_endpoint(s.endpoint_url);

  nlohmann::json body;
  body["model"] = s.model_name;
  body["prompt"] = req.prompt;
  body["temperature"] = s.temperature;
  body["max_tokens"] = s.max_new_tokens;
  body["stop"] = s.stop;
  body["stream"] = true;
  const std::string payload = body.dump();

  GenerationError last{"connection", "no attempt made", 0};
  for (int attempt = 1; attempt <= s.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(s.retry_backoff_ms << (attempt - 2)));
    }
    httplib::Client cli(ep.origin);
    auto secs = s.request_timeout_ms / 1000;
    auto usecs = (s.request_timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    int status = 0;
    bool streaming = false;
    bool emitted = false;
    bool cancelled = false;
    std::string raw;  // error bodies and non-streamed replies
    std::size_t completion_tokens = 0;
    std::string finish = "stop";

    SseParser sse;
    sse.on_text = [&](std::string_view text, std::optional<std::string> fin) {
      if (fin) finish = *fin;
      if (text.empty()) return true;
      emitted = true;
      ++completion_tokens;
      if (!sink(TokenChunk{std::string(text)})) {
        cancelled = true;
        return false;
      }
      return true;
    };

    httplib::Request hreq;
    hreq.method = "POST";
    hreq.path = ep.path;
    hreq.body = payload;
    hreq.headers.emplace("Content-Type", "application/json");
    hreq.headers.emplace("Accept", "text/event-stream");
    if (auto token = http::token_from_env(s.auth_env); !token.empty()) {
      hreq.headers.emplace("Authorization", "Bearer " + token);
    }
    hreq.response_handler = [&](const httplib::Response& r) {
      status = r.status;
      streaming = r.get_header_value("Content-Type").find("text/event-stream") !=
                  std::string::npos;
      return true;
    };
    hreq.content_receiver = [&](const char* data, size_t n, uint64_t, uint64_t) {
      if (status == 200 && streaming) return sse.feed(std::string_view(data, n));
      if (raw.size() < (1u << 20)) raw.append(data, n);
      return true;
    };

    auto res = cli.send(hreq);
    if (cancelled) {
      sink(GenerationError{"cancelled", "generation cancelled by caller", 0});
      return;
    }
    if (sse.error) {
      sink(GenerationError{"protocol", *sse.error, status});
      return;
    }
    if (sse.done || (res && status == 200 && streaming)) {
      sink(Done{finish, Usage{prompt_tokens, completion_tokens}});
      return;
    }
    if (!res) {
      auto err = res.error();
      bool timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                     err == httplib::Error::ConnectionTimeout;
      last = {timeout ? "timeout" : "connection",
              "llm endpoint " + s.endpoint_url + ": " + httplib::to_string(err), 0};
      if (emitted) break;
      continue;
    }
    if (status != 200) {
      last = {"upstream_http", "llm endpoint returned HTTP " + std::to_string(status) +
                                   (raw.empty() ? "" : ": " + raw.substr(0, 512)),
              status};
      if (status >= 500 || status == 429) continue;
      break;
    }
    // Non-streamed JSON reply.
    try {
      auto j = nlohmann::json::parse(raw);
      const auto& choice = j.at("choices").at(0);
      std::string text = choice.at("text").get<std::string>();
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
        finish = choice["finish_reason"].get<std::string>();
      }
      std::size_t n = 0;
      for (const auto& c : chunk_by_token(text)) {
        ++n;
        if (!sink(TokenChunk{c})) {
          sink(GenerationError{"cancelled", "generation cancelled by caller", 0});
          return;
        }
      }
      sink(Done{finish, Usage{prompt_tokens, n}});
    } catch (const nlohmann::json::exception& e) {
      sink(GenerationError{"protocol", std::string("malformed completion response: ") + e.what(),
                           status});
    }
    return;
  }
  sink(last);
}

std::unique_ptr<Generator> make_generator(const LlmSpec& spec) {
  if (spec.kind == LlmKind::remote) return std::make_unique<RemoteGenerator>(spec);
  return std::make_unique<StubGenerator>(spec);
}

Completion generate(const Generator& gen, const GenerationRequest& req) {
  Completion c;
  gen.generate_stream(req, [&](const GenerationEvent& ev) {
    if (const auto* t = std::get_if<TokenChunk>(&ev)) {
      c.text += t->text;
      c.chunks.push_back(t->text);
    } else if (const auto* d = std::get_if<Done>(&ev)) {
      c.done = *d;
    } else {
      c.error = std::get<GenerationError>(ev);
    }
    return true;
  });
  return c;
}

}  // namespace rcg::llm
