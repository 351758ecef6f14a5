#include "rcg/server.hpp"

#include <algorithm>
#include <atomic>

#include <httplib.h>

#include "rcg/errors.hpp"
#include "rcg/index.hpp"

namespace rcg::server {

using nlohmann::json;
using nlohmann::ordered_json;

AdmissionQueue::AdmissionQueue(std::size_t capacity, std::size_t slots)
    : capacity_(capacity), slots_(std::max<std::size_t>(slots, 1)) {}

AdmissionQueue::Ticket::~Ticket() { q_.release(*this); }

std::unique_ptr<AdmissionQueue::Ticket> AdmissionQueue::try_enqueue() {
  std::lock_guard lock(mu_);
  if (shutdown_) return nullptr;
  // A refused ticket must never be constructed: its destructor takes mu_.
  if (waiting_.empty() && running_ < slots_) {
    std::unique_ptr<Ticket> t(new Ticket(*this, next_id_++));
    ++running_;
    t->running_ = true;
    return t;
  }
  if (waiting_.size() >= capacity_) return nullptr;
  std::unique_ptr<Ticket> t(new Ticket(*this, next_id_++));
  waiting_.push_back(t->id_);
  return t;
}

bool AdmissionQueue::acquire(Ticket& t) {
  std::unique_lock lock(mu_);
  if (t.running_) return true;
  cv_.wait(lock, [&] {
    return shutdown_ || (waiting_.front() == t.id_ && running_ < slots_);
  });
  if (shutdown_) return false;
  waiting_.pop_front();
  ++running_;
  t.running_ = true;
  cv_.notify_all();
  return true;
}

void AdmissionQueue::release(Ticket& t) {
  std::lock_guard lock(mu_);
  if (t.running_) {
    --running_;
  } else {
    auto it = std::find(waiting_.begin(), waiting_.end(), t.id_);
    if (it != waiting_.end()) waiting_.erase(it);
  }
  cv_.notify_all();
}

std::size_t AdmissionQueue::waiting() const {
  std::lock_guard lock(mu_);
  return waiting_.size();
}

std::size_t AdmissionQueue::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

void AdmissionQueue::shutdown() {
  std::lock_guard lock(mu_);
  shutdown_ = true;
  cv_.notify_all();
}

struct Server::EvalJob {
  std::string id;
  std::atomic<bool> finished{false};
  std::mutex mu;
  std::string status = "running";
  std::string error;
  std::size_t done = 0;
  std::size_t total = 0;
  ordered_json reports;
};

namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace) + "\n", kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& code,
                 const std::string& message, ordered_json extra = ordered_json::object()) {
  ordered_json body;
  body["error"] = code;
  body["message"] = message;
  for (auto& [k, v] : extra.items()) body[k] = v;
  reply(res, status, body);
}

// Maps the exception in flight to a status code.
void reply_exception(httplib::Response& res) {
  try {
    throw;
  } catch (const BudgetError& e) {
    reply_error(res, 422, "budget_exceeded", e.what(),
                {{"estimate", e.estimate()}, {"budget", e.budget()}});
  } catch (const UpstreamError& e) {
    reply_error(res, 502, "upstream", e.what(),
                {{"upstream_status", e.status()}, {"attempts", e.attempts()}});
  } catch (const RequestError& e) {
    reply_error(res, 400, "invalid_request", e.what());
  } catch (const ConfigError& e) {
    reply_error(res, 400, "invalid_config", e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, "invalid_json", e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

std::string sse(std::string_view event, const ordered_json& data) {
  std::string out = "event: ";
  out += event;
  out += "\ndata: ";
  out += data.dump(-1, ' ', false, json::error_handler_t::replace);
  out += "\n\n";
  return out;
}

ordered_json event_json(const llm::GenerationError& e) {
  ordered_json j;
  j["code"] = e.code;
  j["message"] = e.message;
  j["upstream_status"] = e.upstream_status;
  // Status the request would have had if the failure were known up front.
  j["status"] = e.code == "budget_exceeded" ? 422 : 502;
  return j;
}

ordered_json done_json(const engine::TurnResult& r) {
  ordered_json j;
  j["finish_reason"] = r.done ? r.done->finish_reason : "";
  j["usage"] = {{"prompt_tokens_est", r.done ? r.done->usage.prompt_tokens_est : 0},
                {"completion_tokens", r.done ? r.done->usage.completion_tokens : 0}};
  j["response"] = r.record.response;
  j["latency_ms"] = {{"retrieve", r.record.latency.retrieve_ms},
                     {"generate", r.record.latency.generate_ms},
                     {"total", r.record.latency.total_ms}};
  return j;
}

bool is_mutating(const httplib::Request& req) {
  if (req.method != "PUT" && req.method != "POST" && req.method != "DELETE" &&
      req.method != "PATCH") {
    return false;
  }
  return req.path != "/chat" && req.path != "/analysis/eval";
}

}  // namespace

Server::Server(engine::Engine& engine, ServerOptions opts)
    : engine_(engine), opts_(std::move(opts)) {
  const auto& sc = engine_.state()->config.server;
  queue_ = std::make_unique<AdmissionQueue>(sc.queue_capacity, sc.max_concurrent_generations);
  http_ = std::make_unique<httplib::Server>();
  // Queued requests each hold a worker while they wait.
  const std::size_t workers = sc.queue_capacity + sc.max_concurrent_generations + 16;
  http_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  routes();
}

Server::~Server() {
  stop();
  if (eval_thread_.joinable()) eval_thread_.join();
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    int p = http_->bind_to_any_port(host);
    if (p <= 0) throw ConfigError("cannot bind " + host);
    return p;
  }
  if (!http_->bind_to_port(host, port)) {
    throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Server::run() { http_->listen_after_bind(); }

void Server::stop() {
  queue_->shutdown();
  http_->stop();
}

void Server::routes() {
  auto& s = *http_;

  s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (opts_.read_only && is_mutating(req)) {
      reply_error(res, 403, "read_only", "server is running in read-only mode");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  if (opts_.ui_dir) {
    if (!s.set_mount_point("/", opts_.ui_dir->string())) {
      throw ConfigError("ui dir does not exist: " + opts_.ui_dir->string());
    }
  }

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  });

  s.Get("/capabilities", [this](const httplib::Request&, httplib::Response& res) {
    auto st = engine_.state();
    ordered_json j;
    j["read_only"] = opts_.read_only;
    j["modes"] = {"off", "manual", "mokb"};
    j["approaches"] = engine_.catalog().names();
    j["knowledge_bases"] = ordered_json::array();
    for (const auto& kb : st->kbs) j["knowledge_bases"].push_back(kb->kb_id);
    j["defaults"] = config::to_json(st->config)["defaults"];
    j["queue_capacity"] = st->config.server.queue_capacity;
    j["max_concurrent_generations"] = st->config.server.max_concurrent_generations;
    reply(res, 200, j);
  });

  s.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<engine::TurnPlan> plan;
    try {
      auto creq = engine::parse_chat_request(parse_body(req), engine_.state()->config.defaults);
      plan = std::make_shared<engine::TurnPlan>(engine_.plan(creq));
    } catch (...) {
      reply_exception(res);
      return;
    }
    std::shared_ptr<AdmissionQueue::Ticket> ticket = queue_->try_enqueue();
    if (!ticket) {
      reply_error(res, 429, "queue_full", "generation queue is full, retry later");
      return;
    }

    if (!plan->request.stream) {
      if (!queue_->acquire(*ticket)) {
        reply_error(res, 503, "shutting_down", "server is stopping");
        return;
      }
      auto result = engine_.execute(*plan, [](const llm::GenerationEvent&) { return true; });
      ticket.reset();
      ordered_json body;
      body["retrieval"] = engine::retrieval_summary(*plan);
      body["response"] = result.record.response;
      if (result.error) {
        body["error"] = event_json(*result.error);
        int status = result.error->code == "budget_exceeded" ? 422 : 502;
        reply(res, status, body);
      } else {
        body["done"] = done_json(result);
        reply(res, 200, body);
      }
      return;
    }

    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, plan, ticket](size_t, httplib::DataSink& sink) mutable {
          auto write = [&](const std::string& s) { return sink.write(s.data(), s.size()); };
          write(sse("retrieval", engine::retrieval_summary(*plan)));
          if (!queue_->acquire(*ticket)) {
            write(sse("error", {{"code", "shutting_down"}, {"message", "server is stopping"}}));
            sink.done();
            return true;
          }
          auto result = engine_.execute(*plan, [&](const llm::GenerationEvent& ev) {
            if (const auto* t = std::get_if<llm::TokenChunk>(&ev)) {
              return write(sse("token", {{"text", t->text}}));
            }
            return true;
          });
          if (result.error) {
            write(sse("error", event_json(*result.error)));
          } else {
            write(sse("done", done_json(result)));
          }
          ticket.reset();
          sink.done();
          return true;
        });
  });

  s.Get("/prompts", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, prompt::to_json(engine_.catalog()));
  });

  s.Put("/prompts", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      engine_.replace_catalog(prompt::catalog_from_json(parse_body(req)));
      reply(res, 200, prompt::to_json(engine_.catalog()));
    } catch (...) {
      reply_exception(res);
    }
  });

  s.Put(R"(/prompts/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      engine_.set_prompt(req.matches[1], prompt::prompt_set_from_json(parse_body(req)));
      reply(res, 200, prompt::to_json(engine_.catalog()));
    } catch (...) {
      reply_exception(res);
    }
  });

  s.Post("/prompts/reset", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto body = parse_body(req);
      engine_.reset_prompts(body.value("name", std::string()));
      reply(res, 200, prompt::to_json(engine_.catalog()));
    } catch (...) {
      reply_exception(res);
    }
  });

  s.Get("/config", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, config::to_json(engine_.state()->config));
  });

  s.Put("/config", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto cfg = config::config_from_json(parse_body(req), engine_.state()->config.base_dir);
      engine_.replace_config(std::move(cfg));
      reply(res, 200, config::to_json(engine_.state()->config));
    } catch (...) {
      reply_exception(res);
    }
  });

  s.Get("/kb", [this](const httplib::Request&, httplib::Response& res) {
    ordered_json list = ordered_json::array();
    for (const auto& kb : engine_.state()->kbs) {
      list.push_back({{"kb_id", kb->kb_id},
                      {"name", kb->name},
                      {"description", kb->description},
                      {"passages", kb->passages.size()},
                      {"dim", kb->index->dim()},
                      {"index_kind", index::to_string(kb->index->kind())},
                      {"model_name", kb->index->model_name()}});
    }
    reply(res, 200, {{"knowledge_bases", list}});
  });

  s.Post("/kb/reindex", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto body = parse_body(req);
      auto id = body.value("kb_id", std::string());
      if (id.empty()) throw RequestError("kb_id is required");
      auto r = engine_.reindex(id);
      reply(res, 200, {{"kb_id", id},
                       {"documents", r.documents},
                       {"passages", r.passages},
                       {"dim", r.dim},
                       {"index_kind", index::to_string(r.kind)},
                       {"skipped_files", r.failures.size()}});
    } catch (...) {
      reply_exception(res);
    }
  });

  s.Get("/analysis/log", [this](const httplib::Request& req, httplib::Response& res) {
    auto num = [&](const char* key, std::size_t fallback) -> std::size_t {
      if (!req.has_param(key)) return fallback;
      try {
        return static_cast<std::size_t>(std::stoull(req.get_param_value(key)));
      } catch (const std::exception&) {
        return fallback;
      }
    };
    auto& log = engine_.log();
    ordered_json records = ordered_json::array();
    for (const auto& r : log.page(num("offset", 0), num("limit", 100))) {
      records.push_back(analysis::to_json(r));
    }
    ordered_json body;
    body["total"] = log.size();
    body["records"] = std::move(records);
    if (auto err = log.last_error(); !err.empty()) body["log_error"] = err;
    reply(res, 200, body);
  });

  s.Get("/analysis/log/export", [this](const httplib::Request&, httplib::Response& res) {
    std::string out;
    auto& log = engine_.log();
    for (const auto& r : log.page(0, log.size())) {
      out += analysis::to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
      out += '\n';
    }
    res.set_header("Content-Disposition", "attachment; filename=\"analysis.jsonl\"");
    res.set_content(out, "application/x-ndjson");
  });

  s.Post("/analysis/eval", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<analysis::EvalPair> pairs;
    std::vector<analysis::Approach> approaches;
    try {
      auto body = parse_body(req);
      if (!body.contains("pairs") || !body["pairs"].is_array()) {
        throw RequestError("'pairs' must be an array of {query, label}");
      }
      for (const auto& p : body["pairs"]) {
        analysis::EvalPair pair{p.at("query").get<std::string>(), p.at("label").get<std::string>()};
        if (pair.query.empty() || pair.label.empty()) {
          throw RequestError("eval pairs need a non-empty query and label");
        }
        pairs.push_back(std::move(pair));
      }
      if (pairs.empty()) throw RequestError("'pairs' is empty");
      auto names = body.value("approaches", std::vector<std::string>{"rog", "rag", "rcg"});
      std::optional<analysis::Sweep> sweep;
      if (body.contains("epw_sweep")) sweep = analysis::parse_sweep(body["epw_sweep"].get<std::string>());
      approaches = analysis::expand_approaches(names, sweep);
      auto catalog = engine_.catalog();
      for (const auto& a : approaches) {
        if (!catalog.find(a.prompt_set)) throw RequestError("unknown prompt set: " + a.prompt_set);
      }
    } catch (const ConfigError& e) {
      reply_error(res, 400, "invalid_request", e.what());
      return;
    } catch (...) {
      reply_exception(res);
      return;
    }

    std::lock_guard lock(jobs_mu_);
    for (const auto& [id, job] : jobs_) {
      if (!job->finished) {
        reply_error(res, 409, "eval_running", "eval job " + id + " is still running");
        return;
      }
    }
    if (eval_thread_.joinable()) eval_thread_.join();
    auto job = std::make_shared<EvalJob>();
    job->id = "eval-" + std::to_string(next_job_++);
    job->total = pairs.size() * approaches.size();
    jobs_[job->id] = job;
    eval_thread_ = std::thread([this, job, pairs = std::move(pairs),
                                approaches = std::move(approaches)] {
      try {
        auto reports = analysis::run_eval(
            pairs, approaches, [&](const analysis::EvalPair& p, const analysis::Approach& a) {
              auto out = engine_.eval_turn(p, a);
              std::lock_guard l(job->mu);
              ++job->done;
              return out;
            });
        std::lock_guard l(job->mu);
        job->reports = analysis::reports_to_json(reports);
        job->status = "done";
      } catch (const std::exception& e) {
        std::lock_guard l(job->mu);
        job->status = "failed";
        job->error = e.what();
      }
      job->finished = true;
    });
    reply(res, 202, {{"job_id", job->id}, {"status", "running"}});
  });

  s.Get(R"(/analysis/eval/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<EvalJob> job;
    {
      std::lock_guard lock(jobs_mu_);
      auto it = jobs_.find(req.matches[1]);
      if (it != jobs_.end()) job = it->second;
    }
    if (!job) {
      reply_error(res, 404, "not_found", "no eval job " + std::string(req.matches[1]));
      return;
    }
    std::lock_guard l(job->mu);
    ordered_json body;
    body["job_id"] = job->id;
    body["status"] = job->status;
    body["progress"] = {{"done", job->done}, {"total", job->total}};
    if (!job->error.empty()) body["error"] = job->error;
    if (job->status == "done") body["reports"] = job->reports;
    reply(res, 200, body);
  });
}

}  // namespace rcg::server
