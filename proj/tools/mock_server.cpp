#include "mock_server.hpp"

#include <chrono>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcg/embed.hpp"
#include "rcg/llm.hpp"
#include "rcg/prompt.hpp"
#include "rcg/text.hpp"

namespace rcg::mock {

using nlohmann::json;

namespace {

std::string event(const std::string& text, const char* finish) {
  json j;
  j["choices"] = json::array({{{"index", 0}, {"text", text},
                               {"finish_reason", finish ? json(finish) : json(nullptr)}}});
  return "data: " + j.dump() + "\n\n";
}

std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t start = i;
    while (i < s.size() && !text::is_space(s[i])) ++i;
    while (i < s.size() && text::is_space(s[i])) ++i;
    out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

MockServer::MockServer(MockOptions opts) : opts_(std::move(opts)) {}

MockServer::~MockServer() { stop(); }

MockOptions MockServer::options() const {
  std::lock_guard lock(mu_);
  return opts_;
}

void MockServer::set_options(MockOptions opts) {
  std::lock_guard lock(mu_);
  opts_ = std::move(opts);
}

std::string MockServer::last_prompt() const {
  std::lock_guard lock(mu_);
  return last_prompt_;
}

std::string MockServer::base_url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

bool MockServer::sleep_unless_stopped(int ms) const {
  auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(ms);
  while (std::chrono::steady_clock::now() < until) {
    if (stopping_) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return !stopping_;
}

int MockServer::start(const std::string& host, int port) {
  http_ = std::make_unique<httplib::Server>();
  http_->new_task_queue = [] { return new httplib::ThreadPool(64); };

  http_->Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
    int call = ++embedding_calls_;
    auto opts = options();
    if (call <= opts.embed_fail_first) {
      res.status = opts.embed_fail_status;
      res.set_content(R"({"error":"scripted failure"})", "application/json");
      return;
    }
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("input")) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    std::vector<std::string> inputs;
    if (body["input"].is_string()) {
      inputs.push_back(body["input"].get<std::string>());
    } else {
      inputs = body["input"].get<std::vector<std::string>>();
    }
    json out;
    out["model"] = body.value("model", "mock");
    out["data"] = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      out["data"].push_back({{"index", i}, {"embedding", embed::test_embed(inputs[i], opts.embed_dim)}});
    }
    res.set_content(out.dump(), "application/json");
  });

  http_->Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
    int call = ++completion_calls_;
    auto opts = options();
    json body = json::parse(req.body, nullptr, false);
    std::string prompt = body.is_discarded() ? "" : body.value("prompt", "");
    {
      std::lock_guard lock(mu_);
      last_prompt_ = prompt;
    }
    if (opts.stall_ms > 0 && !sleep_unless_stopped(opts.stall_ms)) return;
    if (call <= opts.fail_first) {
      res.status = opts.fail_status;
      res.set_content(R"({"error":"scripted failure"})", "application/json");
      return;
    }
    std::vector<std::string> chunks = opts.chunks;
    if (chunks.empty()) {
      auto rcg = prompt::PromptCatalog::builtin_defaults().at("rcg");
      chunks = words_of(llm::stub_generate(prompt, rcg));
    }
    bool stream = !body.is_discarded() && body.value("stream", false);
    if (!stream || !opts.sse) {
      std::string text;
      for (const auto& c : chunks) text += c;
      json out;
      out["choices"] = json::array({{{"index", 0}, {"text", text}, {"finish_reason", "stop"}}});
      res.set_content(out.dump(), "application/json");
      return;
    }
    res.set_chunked_content_provider(
        "text/event-stream", [this, opts, chunks](size_t, httplib::DataSink& sink) {
          auto write = [&](const std::string& s) { return sink.write(s.data(), s.size()); };
          if (opts.first_chunk_delay_ms > 0 && !sleep_unless_stopped(opts.first_chunk_delay_ms)) {
            return false;
          }
          for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (i > 0 && opts.chunk_delay_ms > 0 && !sleep_unless_stopped(opts.chunk_delay_ms)) {
              return false;
            }
            if (!write(event(chunks[i], nullptr))) return false;
          }
          if (opts.malformed) {
            write("data: {not json\n\n");
          } else {
            write(event("", "stop"));
            write("data: [DONE]\n\n");
          }
          sink.done();
          return true;
        });
  });

  host_ = host;
  port_ = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw std::runtime_error("mock server cannot bind " + host);
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port_;
}

void MockServer::stop() {
  stopping_ = true;
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace rcg::mock
