// rcg: build knowledge bases, serve the API, run one-off queries and the
// evaluation harness.
//
// Exit codes: 0 success, 1 usage error, 2 config error, 3 upstream error.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcg/analysis.hpp"
#include "rcg/config.hpp"
#include "rcg/engine.hpp"
#include "rcg/errors.hpp"
#include "rcg/file_util.hpp"
#include "rcg/http_util.hpp"
#include "rcg/server.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kUpstream = 3 };

// Thrown for failed generations so they map onto the exit-code contract.
struct GenerationFailure : std::runtime_error {
  GenerationFailure(const std::string& code, const std::string& msg)
      : std::runtime_error(code + ": " + msg), code(code) {}
  std::string code;
};

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_trace(const json& r, std::ostream& os) {
  os << "# approach: " << r.value("approach", "") << "  mode: " << r.value("mode", "");
  if (r.contains("kb_id") && r["kb_id"].is_string()) os << "  kb: " << r["kb_id"].get<std::string>();
  os << "\n";
  for (const auto& h : r.value("hits", json::array())) {
    os << "# hit " << h.value("rank", 0) << ": " << h.value("passage_id", "")
       << "  score=" << fmt4(h.value("score", 0.0)) << "\n";
  }
  if (r.value("mode", "") != "off") {
    os << "# tokens injected: " << r.value("tokens_injected", 0) << "/"
       << r.value("tokens_retrieved", 0) << " (epw " << r.value("epw_weight", 100) << ")\n";
  }
  os.flush();
}

struct QueryArgs {
  fs::path config;
  std::string approach;
  std::string q;
  std::optional<int> epw;
  std::optional<std::size_t> k;
  std::string mode;
  std::string kb;
  std::string server;
  bool trace = true;
};

json chat_body(const QueryArgs& a) {
  json body;
  body["query"] = a.q;
  if (!a.approach.empty()) body["approach"] = a.approach;
  if (a.epw) body["epw_weight"] = *a.epw;
  if (a.k) body["k"] = *a.k;
  if (!a.mode.empty()) body["mode"] = a.mode;
  if (!a.kb.empty()) body["kb_id"] = a.kb;
  return body;
}

int query_local(const QueryArgs& a) {
  auto cfg = rcg::config::load_config(a.config);
  rcg::engine::Engine engine(std::move(cfg), a.config);
  auto req = rcg::engine::parse_chat_request(chat_body(a), engine.state()->config.defaults);
  auto plan = engine.plan(req);
  if (a.trace) print_trace(rcg::engine::retrieval_summary(plan), std::cout);
  auto result = engine.execute(plan, [](const rcg::llm::GenerationEvent& ev) {
    if (const auto* t = std::get_if<rcg::llm::TokenChunk>(&ev)) std::cout << t->text << std::flush;
    return true;
  });
  std::cout << "\n";
  if (result.error) throw GenerationFailure(result.error->code, result.error->message);
  return kOk;
}

int query_remote(const QueryArgs& a) {
  auto ep = rcg::http::parse_endpoint(a.server);
  httplib::Client cli(ep.origin);
  cli.set_read_timeout(600, 0);
  std::string buf;
  std::optional<GenerationFailure> failure;
  int status = 0;
  std::string error_body;

  httplib::Request req;
  req.method = "POST";
  req.path = "/chat";
  req.body = chat_body(a).dump();
  req.headers.emplace("Content-Type", "application/json");
  req.response_handler = [&](const httplib::Response& r) {
    status = r.status;
    return true;
  };
  req.content_receiver = [&](const char* data, size_t n, uint64_t, uint64_t) {
    if (status != 200) {
      error_body.append(data, n);
      return true;
    }
    buf.append(data, n);
    std::size_t end;
    while ((end = buf.find("\n\n")) != std::string::npos) {
      std::string ev = buf.substr(0, end);
      buf.erase(0, end + 2);
      std::string name, payload;
      std::size_t pos = 0;
      while (pos < ev.size()) {
        auto nl = ev.find('\n', pos);
        auto line = ev.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? ev.size() : nl + 1;
        if (line.rfind("event: ", 0) == 0) name = line.substr(7);
        if (line.rfind("data: ", 0) == 0) payload += line.substr(6);
      }
      auto j = json::parse(payload, nullptr, false);
      if (j.is_discarded()) continue;
      if (name == "retrieval" && a.trace) print_trace(j, std::cout);
      if (name == "token") std::cout << j.value("text", "") << std::flush;
      if (name == "error") failure.emplace(j.value("code", "error"), j.value("message", ""));
    }
    return true;
  };
  auto res = cli.send(req);
  if (!res) {
    throw rcg::UpstreamError("cannot reach server " + a.server + ": " +
                                 httplib::to_string(res.error()),
                             true, 1);
  }
  if (status != 200) {
    auto j = json::parse(error_body, nullptr, false);
    std::string msg = j.is_discarded() ? error_body : j.value("message", error_body);
    if (status == 400 || status == 422) throw rcg::RequestError(msg);
    throw rcg::UpstreamError("server returned HTTP " + std::to_string(status) + ": " + msg,
                             false, 1, status);
  }
  std::cout << "\n";
  if (failure) throw *failure;
  return kOk;
}

std::atomic<rcg::server::Server*> g_server{nullptr};

void on_signal(int) {
  // Stopping from the handler is not async-signal-safe; a watcher thread
  // polls this flag instead.
  g_server.store(nullptr);
}

int run(int argc, char** argv) {
  CLI::App app{"Localized retrieval-centric generation engine"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Build a knowledge base: ingest, embed, index");
  std::vector<std::string> inputs;
  fs::path out_dir, prep_config;
  std::string prep_kb;
  prepare->add_option("--input", inputs, "Files or directories to ingest");
  prepare->add_option("--out", out_dir, "Knowledge base directory");
  prepare->add_option("--config", prep_config, "Config file")->required();
  prepare->add_option("--kb", prep_kb, "Take sources, dir and embedder from this config entry");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  fs::path serve_config;
  bool read_only = false;
  std::string ui_dir, host;
  int port = -1;
  serve->add_option("--config", serve_config, "Config file")->required();
  serve->add_flag("--read-only", read_only, "Reject every mutating route with 403");
  serve->add_option("--ui-dir", ui_dir, "Static web UI bundle to serve at /");
  serve->add_option("--host", host, "Override server.host");
  serve->add_option("--port", port, "Override server.port (0 picks a free port)");

  // query
  auto* query = app.add_subcommand("query", "Run one chat turn and print the trace and answer");
  QueryArgs qa;
  query->add_option("--config", qa.config, "Config file");
  query->add_option("--approach", qa.approach, "rog, rag, rcg, rcg-epw-N or a prompt set name");
  query->add_option("--q", qa.q, "Query text")->required();
  query->add_option("--epw", qa.epw, "Explicit prompt-weighting percent (0-100)");
  query->add_option("--k", qa.k, "Passages to retrieve");
  query->add_option("--mode", qa.mode, "off, manual or mokb");
  query->add_option("--kb", qa.kb, "Knowledge base for manual mode");
  query->add_option("--server", qa.server, "Send the query to a running server instead");
  bool no_trace = false;
  query->add_flag("--no-trace", no_trace, "Print only the answer");

  // eval
  auto* eval = app.add_subcommand("eval", "Run the Rouge-L and latency evaluation harness");
  fs::path eval_config, dataset, eval_out;
  std::vector<std::string> approaches{"rog", "rag", "rcg"};
  std::string sweep;
  bool no_timing = false, rows = false;
  eval->add_option("--config", eval_config, "Config file")->required();
  eval->add_option("--dataset", dataset, "JSONL file of {query, label}")->required();
  eval->add_option("--approaches", approaches, "Comma-separated approaches")->delimiter(',');
  eval->add_option("--epw-sweep", sweep, "EPW sweep start:end:step, e.g. 10:90:10");
  eval->add_option("--out", eval_out, "Write the full report as JSON");
  eval->add_flag("--rows", rows, "Print per-pair rows");
  eval->add_flag("--no-timing", no_timing, "Report all times as 0 for reproducible output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*prepare) {
    auto cfg = rcg::config::load_config(prep_config);
    rcg::embed::EmbedderSpec spec = cfg.embedder;
    std::vector<fs::path> in;
    for (const auto& i : inputs) in.emplace_back(i);
    if (!prep_kb.empty()) {
      const auto* kb = cfg.find_kb(prep_kb);
      if (!kb) throw rcg::ConfigError("no knowledge base '" + prep_kb + "' in config");
      spec = cfg.embedder_for(*kb);
      if (out_dir.empty()) out_dir = cfg.resolve(kb->dir);
      if (in.empty()) {
        for (const auto& s : kb->sources) in.push_back(cfg.resolve(s));
      }
    }
    if (in.empty() || out_dir.empty()) {
      std::cerr << "rcg prepare: --input and --out are required (or --kb with sources)\n";
      return kUsage;
    }
    auto embedder = rcg::embed::make_embedder(spec);
    auto r = rcg::engine::prepare_kb(in, out_dir, *embedder, cfg);
    std::cout << "documents: " << r.documents << "\n"
              << "passages: " << r.passages << "\n"
              << "dim: " << r.dim << "\n"
              << "index: " << rcg::index::to_string(r.kind) << "\n"
              << "model: " << r.model_name << "\n";
    for (const auto& f : r.failures) std::cout << "skipped: " << f.path << " (" << f.reason << ")\n";
    if (r.replaced_bytes > 0) {
      std::cout << "replaced invalid utf-8 bytes: " << r.replaced_bytes << "\n";
    }
    return kOk;
  }

  if (*serve) {
    auto cfg = rcg::config::load_config(serve_config);
    if (!host.empty()) cfg.server.host = host;
    if (port >= 0) cfg.server.port = port;
    auto bind_host = cfg.server.host;
    auto bind_port = cfg.server.port;
    rcg::engine::Engine engine(std::move(cfg), serve_config);
    rcg::server::ServerOptions opts;
    opts.read_only = read_only;
    if (!ui_dir.empty()) opts.ui_dir = ui_dir;
    rcg::server::Server server(engine, opts);
    int bound = server.bind(bind_host, bind_port);
    std::cout << "listening on http://" << bind_host << ":" << bound
              << (read_only ? " (read-only)" : "") << std::endl;
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::thread watcher([&server] {
      while (g_server.load() != nullptr) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    });
    server.run();
    g_server = nullptr;
    watcher.join();
    return kOk;
  }

  if (*query) {
    qa.trace = !no_trace;
    if (!qa.server.empty()) return query_remote(qa);
    if (qa.config.empty()) {
      std::cerr << "rcg query: --config is required without --server\n";
      return kUsage;
    }
    return query_local(qa);
  }

  if (*eval) {
    auto cfg = rcg::config::load_config(eval_config);
    rcg::engine::Engine engine(std::move(cfg), eval_config);
    auto pairs = rcg::analysis::load_eval_dataset(dataset);
    std::optional<rcg::analysis::Sweep> sw;
    if (!sweep.empty()) sw = rcg::analysis::parse_sweep(sweep);
    auto list = rcg::analysis::expand_approaches(approaches, sw);
    auto catalog = engine.catalog();
    for (const auto& a : list) {
      if (!catalog.find(a.prompt_set)) throw rcg::ConfigError("unknown prompt set: " + a.prompt_set);
    }
    auto reports = rcg::analysis::run_eval(
        pairs, list, [&](const rcg::analysis::EvalPair& p, const rcg::analysis::Approach& a) {
          return engine.eval_turn(p, a);
        });
    rcg::analysis::RenderOptions ro{!no_timing, rows};
    std::cout << rcg::analysis::render_reports(reports, ro);
    if (!eval_out.empty()) {
      rcg::fsutil::write_file_atomic(eval_out, rcg::analysis::reports_to_json(reports, ro).dump(2) + "\n");
    }
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rcg::UpstreamError& e) {
    std::cerr << "rcg: upstream error: " << e.what() << "\n";
    return kUpstream;
  } catch (const GenerationFailure& e) {
    std::cerr << "rcg: generation failed: " << e.what() << "\n";
    return e.code == "budget_exceeded" ? kUsage : kUpstream;
  } catch (const rcg::ConfigError& e) {
    std::cerr << "rcg: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const rcg::index::IndexFileError& e) {
    std::cerr << "rcg: index error: " << e.what() << "\n";
    return kConfig;
  } catch (const rcg::prompt::CatalogParseError& e) {
    std::cerr << "rcg: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const rcg::RequestError& e) {
    std::cerr << "rcg: " << e.what() << "\n";
    return kUsage;
  } catch (const rcg::BudgetError& e) {
    std::cerr << "rcg: " << e.what() << "\n";
    return kUsage;
  } catch (const rcg::IngestError& e) {
    std::cerr << "rcg: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "rcg: " << e.what() << "\n";
    return kConfig;
  }
}
