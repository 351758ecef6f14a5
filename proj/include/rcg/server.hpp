#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "rcg/engine.hpp"

namespace httplib {
class Server;
}

namespace rcg::server {

// Bounded FIFO admission in front of a fixed number of generation slots.
// Up to `capacity` requests may wait; admission beyond that is refused.
class AdmissionQueue {
 public:
  AdmissionQueue(std::size_t capacity, std::size_t slots);

  // Holds a place in the queue, then a slot. Releasing the ticket (by
  // destruction) frees whichever it holds.
  class Ticket {
   public:
    ~Ticket();
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;

   private:
    friend class AdmissionQueue;
    Ticket(AdmissionQueue& q, std::uint64_t id) : q_(q), id_(id) {}
    AdmissionQueue& q_;
    std::uint64_t id_;
    bool running_ = false;
  };

  // nullptr when `capacity` requests are already waiting. Takes a slot
  // immediately when one is free and nobody is waiting.
  std::unique_ptr<Ticket> try_enqueue();

  // Blocks until the ticket is at the head and a slot is free. Returns
  // false when the queue was shut down.
  bool acquire(Ticket& t);

  std::size_t waiting() const;
  std::size_t running() const;
  void shutdown();

 private:
  void release(Ticket& t);

  const std::size_t capacity_;
  const std::size_t slots_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::uint64_t> waiting_;
  std::size_t running_ = 0;
  std::uint64_t next_id_ = 0;
  bool shutdown_ = false;
};

struct ServerOptions {
  bool read_only = false;
  std::optional<std::filesystem::path> ui_dir;
};

// HTTP API. Routes:
//   GET  /health, /capabilities
//   POST /chat                       (SSE unless "stream": false)
//   GET  /prompts   PUT /prompts   PUT /prompts/{name}   POST /prompts/reset
//   GET  /config    PUT /config
//   GET  /kb        POST /kb/reindex
//   GET  /analysis/log   GET /analysis/log/export
//   POST /analysis/eval  GET /analysis/eval/{job}
// Read-only mode answers 403 to every mutating route.
class Server {
 public:
  Server(engine::Engine& engine, ServerOptions opts);
  ~Server();

  // Returns the bound port (an ephemeral one when port is 0). Throws
  // ConfigError when the address cannot be bound.
  int bind(const std::string& host, int port);
  // Serves until stop(). Call bind first.
  void run();
  void stop();

  AdmissionQueue& queue() { return *queue_; }

 private:
  struct EvalJob;

  void routes();

  engine::Engine& engine_;
  ServerOptions opts_;
  std::unique_ptr<AdmissionQueue> queue_;
  std::unique_ptr<httplib::Server> http_;

  std::mutex jobs_mu_;
  std::map<std::string, std::shared_ptr<EvalJob>> jobs_;
  std::uint64_t next_job_ = 1;
  std::thread eval_thread_;
};

}  // namespace rcg::server
