#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

// Scriptable stand-in for the embedding and completion endpoints:
//   POST /v1/embeddings   {model, input:[..]} -> test-embedder vectors
//   POST /v1/completions  {prompt, stream}    -> scripted chunks or the stub
// Used by the test suite and by the rcg-mock binary.
namespace rcg::mock {

struct MockOptions {
  std::vector<std::string> chunks;  // empty: answer with the stub generator
  int first_chunk_delay_ms = 0;
  int chunk_delay_ms = 0;
  int stall_ms = 0;            // sleep before answering at all
  int fail_first = 0;          // this many completion calls fail with fail_status
  int fail_status = 500;
  bool malformed = false;      // emit an event that is not JSON
  bool sse = true;             // false: plain JSON reply even when stream is asked
  std::size_t embed_dim = 64;
  int embed_fail_first = 0;    // this many embedding calls fail with embed_fail_status
  int embed_fail_status = 500;
};

class MockServer {
 public:
  explicit MockServer(MockOptions opts);
  ~MockServer();

  // Binds host:port (0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  std::string base_url() const;
  int completion_calls() const { return completion_calls_; }
  int embedding_calls() const { return embedding_calls_; }
  std::string last_prompt() const;

  void set_options(MockOptions opts);

 private:
  MockOptions options() const;
  bool sleep_unless_stopped(int ms) const;

  mutable std::mutex mu_;
  MockOptions opts_;
  std::string last_prompt_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> completion_calls_{0};
  std::atomic<int> embedding_calls_{0};
};

}  // namespace rcg::mock
