#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "mock_server.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mock embedding and completion endpoints for offline testing"};
  rcg::mock::MockOptions opts;
  std::string host = "127.0.0.1";
  int port = 8089;
  app.add_option("--host", host, "Listen address");
  app.add_option("--port", port, "Listen port (0 picks a free one)");
  app.add_option("--chunk", opts.chunks, "Scripted completion chunk (repeatable)");
  app.add_option("--first-chunk-delay-ms", opts.first_chunk_delay_ms);
  app.add_option("--chunk-delay-ms", opts.chunk_delay_ms);
  app.add_option("--stall-ms", opts.stall_ms, "Delay before answering completions");
  app.add_option("--fail-first", opts.fail_first, "Fail this many completion calls");
  app.add_option("--fail-status", opts.fail_status);
  app.add_flag("--malformed", opts.malformed, "Emit a malformed stream event");
  app.add_option("--embed-dim", opts.embed_dim);
  CLI11_PARSE(app, argc, argv);

  rcg::mock::MockServer server(opts);
  try {
    port = server.start(host, port);
  } catch (const std::exception& e) {
    std::cerr << "rcg-mock: " << e.what() << "\n";
    return 2;
  }
  std::cout << server.base_url() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}
