// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails. Oracles here are written independently of the library.

#include <httplib.h>
#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mock_server.hpp"
#include "rcg/analysis.hpp"
#include "rcg/embed.hpp"
#include "rcg/index.hpp"
#include "rcg/prompt.hpp"
#include "rcg/retrieval.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

// Pinned tolerances and budgets.
constexpr double kRougeTol = 1e-9;
constexpr double kMeanTol = 1e-9;
constexpr double kMinRecall = 0.95;
constexpr double kRougeBudgetS = 1.0;
constexpr double kFlatBudgetS = 10.0;
constexpr double kHnswBudgetS = 120.0;
constexpr double kEvalBudgetS = 30.0;

struct Failure {
  std::string why;
};

void check(bool cond, const std::string& why) {
  if (!cond) throw Failure{why};
}

// ---------- process helpers ----------

struct Proc {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& out_file) {
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw Failure{"cannot spawn " + args[0]};
  return pid;
}

Proc run(const std::vector<std::string>& args, const fs::path& scratch) {
  auto out = scratch / "proc.out";
  pid_t pid = spawn(args, out);
  int status = 0;
  waitpid(pid, &status, 0);
  Proc p;
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  p.out = slurp(out);
  return p;
}

// `rcg serve` on an ephemeral port; stopped with SIGTERM.
struct Served {
  pid_t pid = 0;
  int port = 0;
  Served(const fs::path& cfg, const fs::path& scratch, bool read_only = false) {
    std::vector<std::string> args{RCG_BINARY, "serve", "--config", cfg.string(), "--port", "0"};
    if (read_only) args.push_back("--read-only");
    auto log = scratch / ("serve-" + std::to_string(::getpid()) + (read_only ? "-ro" : "") + ".out");
    pid = spawn(args, log);
    for (int i = 0; i < 500 && port == 0; ++i) {
      auto text = slurp(log);
      auto at = text.find("listening on http://");
      if (at != std::string::npos) {
        auto colon = text.find(':', at + 20);
        auto nl = text.find_first_of(" \n", colon);
        if (colon != std::string::npos && nl != std::string::npos)
          port = std::stoi(text.substr(colon + 1, nl - colon - 1));
      }
      if (port == 0) std::this_thread::sleep_for(10ms);
    }
    if (port == 0) {
      stop();
      throw Failure{"server did not start: " + slurp(log)};
    }
  }
  void stop() {
    if (pid > 0) {
      ::kill(pid, SIGTERM);
      int status = 0;
      waitpid(pid, &status, 0);
      pid = 0;
    }
  }
  ~Served() { stop(); }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

// ---------- independent oracles ----------

std::vector<std::string> ws_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::size_t lcs_table(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

double ref_cos(std::span<const float> a, std::span<const float> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return (na == 0 || nb == 0) ? 0.0 : d / std::sqrt(na * nb);
}

std::vector<std::size_t> brute_topk(const rcg::embed::EmbeddingMatrix& m,
                                    std::span<const float> q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> s;
  for (std::size_t i = 0; i < m.size(); ++i) s.emplace_back(ref_cos(m.row(i), q), i);
  std::sort(s.begin(), s.end(), [](auto& a, auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, s.size()); ++i) out.push_back(s[i].second);
  return out;
}

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> nd;
  std::vector<float> v(dim);
  double n = 0;
  for (auto& x : v) x = nd(rng), n += double(x) * x;
  for (auto& x : v) x = float(x / std::sqrt(n));
  return v;
}

rcg::embed::EmbeddingMatrix random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  rcg::embed::EmbeddingMatrix m(dim);
  m.reserve(n);
  for (std::size_t i = 0; i < n; ++i) m.append(random_unit(rng, dim), "p" + std::to_string(i));
  return m;
}

std::vector<std::size_t> hit_rows(const std::vector<rcg::index::SearchHit>& h) {
  std::vector<std::size_t> r;
  for (auto& x : h) r.push_back(x.row);
  return r;
}

// Trimmed text up to the first . ! or ? that ends the text or precedes
// whitespace, never past a line break.
std::string ref_first_sentence(const std::string& text) {
  auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::string s = text.substr(b);
  s = s.substr(0, s.find('\n'));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((s[i] == '.' || s[i] == '!' || s[i] == '?') &&
        (i + 1 == s.size() || std::isspace(static_cast<unsigned char>(s[i + 1])))) {
      s = s.substr(0, i + 1);
      break;
    }
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::string no_knowledge(const std::string& q) {
  auto t = ws_tokens(q);
  std::string out = "NO-KNOWLEDGE:";
  for (std::size_t i = 0; i < std::min<std::size_t>(8, t.size()); ++i) out += " " + t[i];
  return out;
}

// ---------- fixture workspace ----------

json workspace_json() {
  return {
      {"embedder", {{"kind", "test"}, {"model_name", "test-hash-64"}, {"dim", 64}}},
      {"llm", {{"kind", "stub"}}},
      {"knowledge_bases",
       {{{"id", "kioxia"},
         {"name", "KIOXIA notes"},
         {"description", "KIOXIA flash memory company, Yokkaichi plant, environment"},
         {"dir", "kb/kioxia"},
         {"sources", {"corpus"}}}}},
      {"index", {{"kind", "hnsw"}}},
  };
}

struct Workspace {
  fs::path dir;
  fs::path cfg;
  explicit Workspace(const std::string& name, const json& cfg_json = workspace_json()) {
    dir = fs::temp_directory_path() / ("rcg-accept-" + std::to_string(::getpid()) + "-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    fs::copy(fs::path(RCG_SOURCE_DIR) / "fixtures/corpus", dir / "corpus", fs::copy_options::recursive);
    cfg = dir / "config.json";
    std::ofstream(cfg) << cfg_json.dump(2);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  Proc prepare() const {
    return run({RCG_BINARY, "prepare", "--config", cfg.string(), "--kb", "kioxia"}, dir);
  }
};

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "proc.out" &&
        e.path().filename().string().rfind("serve-", 0) != 0)
      m[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return m;
}

// ---------- criteria ----------

std::string rouge_oracle() {
  using rcg::analysis::rouge_l;
  check(rouge_l("the cat", "the dog").f1 == 0.5, "rouge_l(the cat, the dog) != 0.5");
  check(rouge_l("flash memory plant", "flash memory plant").f1 == 1.0, "identity != 1");
  check(rouge_l("", "x").f1 == 0.0 && rouge_l("x", "").f1 == 0.0, "empty != 0");
  std::mt19937 rng(20240501);
  const char* vocab[] = {"kioxia", "flash", "memory", "the", "plant", "in", "of", "fab7"};
  for (int i = 0; i < 20; ++i) {
    std::vector<std::string> a(1 + rng() % 30), b(1 + rng() % 30);
    for (auto& t : a) t = vocab[rng() % 8];
    for (auto& t : b) t = vocab[rng() % 8];
    std::string sa, sb;
    for (auto& t : a) sa += t + " ";
    for (auto& t : b) sb += t + " ";
    double l = double(lcs_table(a, b));
    double p = l / a.size(), r = l / b.size();
    double f = p + r == 0 ? 0 : 2 * p * r / (p + r);
    check(std::abs(rouge_l(sa, sb).f1 - f) <= kRougeTol, "random pair " + std::to_string(i));
  }
  return "20/20 random pairs";
}

std::string flat_exactness() {
  std::mt19937_64 rng(1000);
  auto m = random_matrix(rng, 1000, 64);
  auto idx = rcg::index::build_flat(m);
  int ok = 0;
  for (int q = 0; q < 100; ++q) {
    auto v = random_unit(rng, 64);
    auto hits = idx->search(v, 5);
    bool ids_match = hit_rows(hits) == brute_topk(m, v, 5);
    for (auto& h : hits) ids_match = ids_match && h.passage_id == "p" + std::to_string(h.row);
    ok += ids_match;
  }
  check(ok == 100, std::to_string(ok) + "/100 queries exact");
  return "100/100 queries";
}

std::string hnsw_recall() {
  std::mt19937_64 rng(10000);
  auto m = random_matrix(rng, 10000, 64);
  rcg::index::HnswParams p;
  p.M = 16;
  p.ef_construction = 200;
  p.ef_search = 128;
  auto h = rcg::index::build_hnsw(m, p);
  auto flat = rcg::index::build_flat(m);
  std::size_t found = 0;
  for (int q = 0; q < 100; ++q) {
    auto v = random_unit(rng, 64);
    auto truth = hit_rows(flat->search(v, 5));
    for (auto r : hit_rows(h->search(v, 5, 128))) found += std::count(truth.begin(), truth.end(), r);
  }
  double recall = found / 500.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "recall@5 = %.3f", recall);
  check(recall >= kMinRecall, buf);
  return buf;
}

std::string index_persistence() {
  using namespace rcg::index;
  auto dir = fs::temp_directory_path() / ("rcg-accept-idx-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path d;
    ~Cleanup() { std::error_code ec; fs::remove_all(d, ec); }
  } cleanup{dir};

  std::mt19937_64 rng(77);
  auto m = random_matrix(rng, 2000, 64);
  auto flat = build_flat(m, "model-x");
  auto h = build_hnsw(m, {}, "model-x");
  save_index(*flat, dir / "flat.rcgx");
  save_index(*h, dir / "hnsw.rcgx");
  auto lf = load_index(dir / "flat.rcgx", "model-x");
  auto lh = load_index(dir / "hnsw.rcgx", "model-x");
  int ok = 0;
  for (int q = 0; q < 100; ++q) {
    auto v = random_unit(rng, 64);
    ok += hit_rows(lf->search(v, 5, 0)) == hit_rows(flat->search(v, 5)) &&
          hit_rows(lh->search(v, 5, 128)) == hit_rows(h->search(v, 5, 128));
  }
  check(ok == 100, std::to_string(ok) + "/100 queries equal after reload");

  // Corrupted-header fixtures written by hand from the documented layout.
  const std::string good = slurp(dir / "flat.rcgx");
  auto code = [&](const std::string& bytes) -> int {
    std::ofstream(dir / "bad.rcgx", std::ios::binary) << bytes;
    try {
      load_index(dir / "bad.rcgx");
    } catch (const IndexFileError& e) {
      return static_cast<int>(e.code());
    }
    return 0;
  };
  std::string magic = good;
  magic.replace(0, 4, "NOPE");
  std::string version = good;
  version[4] = char(0x63);
  std::string truncated = good.substr(0, 10);
  int a = code(magic), b = code(version), c = code(truncated);
  check(a != 0 && b != 0 && c != 0, "a corrupted file loaded without error");
  check(a != b && b != c && a != c, "error codes not distinct");
  return "100/100 queries; codes " + std::to_string(a) + "/" + std::to_string(b) + "/" +
         std::to_string(c);
}

std::string epw_properties() {
  using rcg::retrieval::apply_epw;
  std::vector<std::string> ten{"t1 t2 t3 t4 t5 t6 t7 t8 t9 t10"};
  check(ws_tokens(apply_epw(ten, 50).text) ==
            std::vector<std::string>{"t1", "t2", "t3", "t4", "t5"},
        "10 tokens @50% is not the first 5");
  std::vector<std::string> seven{"a b c d e f g"};
  check(ws_tokens(apply_epw(seven, 50).text) == std::vector<std::string>{"a", "b", "c", "d"},
        "7 tokens @50% is not the first 4");
  std::mt19937 rng(4242);
  const char* vocab[] = {"memory", "flash", "Fab7", "2022.", "the", "of", "plant"};
  for (int list = 0; list < 50; ++list) {
    std::vector<std::string> ps(1 + rng() % 6);
    for (auto& p : ps)
      for (int n = rng() % 20; n > 0; --n) p += std::string(vocab[rng() % 7]) + (rng() % 6 ? " " : "\n");
    std::vector<std::string> prev;
    for (int w = 0; w <= 100; w += 10) {
      auto toks = ws_tokens(apply_epw(ps, w).text);
      check(toks.size() >= prev.size() && std::equal(prev.begin(), prev.end(), toks.begin()),
            "prefix property broken on list " + std::to_string(list));
      prev = toks;
    }
    std::string joined;
    for (auto& p : ps) joined += p + "\n";
    check(prev == ws_tokens(joined), "weight 100 drops tokens");
  }
  return "50/50 lists, ceil cases exact";
}

std::string mokb_argmax() {
  using namespace rcg;
  auto embedder = std::make_shared<embed::TestEmbedder>(embed::EmbedderSpec{});
  std::mt19937 rng(31337);
  const char* vocab[] = {"semiconductor", "memory", "plant", "yokkaichi", "ssd", "environment",
                         "water", "finance", "history", "employees", "kitakami", "iwate"};
  auto phrase = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += std::string(vocab[rng() % 12]) + " ";
    return s;
  };
  int ok = 0, dup_ties = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng() % 32;
    std::vector<std::string> descs;
    std::vector<std::shared_ptr<const retrieval::KnowledgeBase>> kbs;
    for (std::size_t i = 0; i < n; ++i) {
      descs.push_back(i > 0 && rng() % 3 == 0 ? descs[rng() % i] : phrase(1 + rng() % 3));
      std::shared_ptr<const index::VectorIndex> idx = index::build_flat(embed::EmbeddingMatrix(64));
      kbs.push_back(retrieval::make_knowledge_base("kb" + std::to_string(i), "", descs.back(), {},
                                                   idx, embedder));
    }
    std::string q = rng() % 3 == 0 ? descs[rng() % n] : phrase(1 + rng() % 4);
    auto qv = embed::test_embed(q, 64);
    std::size_t best = 0;
    double best_s = -2;
    for (std::size_t i = 0; i < n; ++i) {
      double s = ref_cos(qv, embed::test_embed(descs[i], 64));
      if (s > best_s) best_s = s, best = i;
    }
    for (std::size_t i = best + 1; i < n; ++i) dup_ties += descs[i] == descs[best];
    retrieval::RetrievalConfig cfg;
    ok += retrieval::select_kb(q, kbs, cfg) == "kb" + std::to_string(best);
  }
  check(ok == 200, std::to_string(ok) + "/200 registries");
  check(dup_ties > 0, "no duplicated-description tie was exercised");
  return "200/200 registries, " + std::to_string(dup_ties) + " duplicate ties";
}

std::string prompt_assembly() {
  using rcg::prompt::assemble;
  std::mt19937 rng(555);
  const std::vector<std::string> alpha{"a", " ", "\n", "\"", "\\", "AI:", "\xc3\xa9", "\t", "{", "}"};
  auto rnd = [&] {
    std::string s;
    for (int n = rng() % 10; n > 0; --n) s += alpha[rng() % alpha.size()];
    return s;
  };
  for (int i = 0; i < 100; ++i) {
    std::string a = rnd(), b = rnd(), c = rnd(), d = rnd(), e = rnd(), f = rnd(), g = rnd();
    check(assemble({a, b, d, e, g}, c, f) == a + b + c + d + e + f + g,
          "concatenation law broken at tuple " + std::to_string(i));
  }
  rcg::prompt::PromptSet ps{"", "\"",
                            "\"\nanswer the following question with the provided knowledge.\n",
                            "", "\nAI:"};
  const std::string want =
      "\"K\"\nanswer the following question with the provided knowledge.\nQ\nAI:";
  check(assemble(ps, "K", "Q") == want, "worked example differs");
  check(rcg::prompt::PromptCatalog::builtin_defaults().at("rcg") == ps,
        "built-in rcg set differs from the worked example");
  return "100/100 tuples, worked example byte-exact";
}

std::string end_to_end() {
  Workspace ws("e2e");
  auto p1 = ws.prepare();
  check(p1.code == 0, "prepare failed: " + p1.out);
  check(p1.out.find("documents: 3") != std::string::npos, "prepare did not see 3 documents");
  auto kb_dir = ws.dir / "kb/kioxia";
  auto files_before = snapshot(kb_dir);
  check(ws.prepare().code == 0 && snapshot(kb_dir) == files_before, "prepare rerun differs");

  // Brute-force top passage over the prepared passage store.
  std::vector<std::pair<std::string, std::string>> passages;
  {
    std::ifstream in(kb_dir / "passages.jsonl");
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      passages.emplace_back(j["passage_id"], j["text"]);
    }
  }
  const std::string q = "When did Kioxia start operating its new fabrication facility (Fab7)?";
  auto qv = rcg::embed::test_embed(q, 64);
  std::size_t top = 0;
  double top_s = -2;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    double s = ref_cos(qv, rcg::embed::test_embed(passages[i].second, 64));
    if (s > top_s) top_s = s, top = i;
  }

  Served server(ws.cfg, ws.dir);
  auto ask = [&](const std::string& approach) {
    auto r = run({RCG_BINARY, "query", "--server", server.url(), "--approach", approach, "--q", q},
                 ws.dir);
    check(r.code == 0, "query --approach " + approach + " exited " + std::to_string(r.code) + ": " + r.out);
    return r.out;
  };
  auto last_line = [](const std::string& out) {
    auto s = out;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    return s.substr(s.rfind('\n') == std::string::npos ? 0 : s.rfind('\n') + 1);
  };

  auto rcg1 = ask("rcg");
  check(rcg1.find("# hit 1: " + passages[top].first + " ") != std::string::npos,
        "top hit is not the brute-force best passage " + passages[top].first);
  const std::string sentence = ref_first_sentence(passages[top].second);
  check(last_line(rcg1) == sentence, "rcg answer '" + last_line(rcg1) + "' != '" + sentence + "'");
  check(ask("rcg") == rcg1, "rerun is not byte-identical");

  auto rog = last_line(ask("rog"));
  auto rag = last_line(ask("rag"));
  check(rog == no_knowledge(q), "rog answer '" + rog + "'");
  check(rag == sentence + " " + no_knowledge(q), "rag answer '" + rag + "'");
  check(rog != rag && rag != sentence && rog != sentence, "approaches not distinct");
  return "rcg = first sentence of " + passages[top].first + "; rog/rag/rcg distinct";
}

std::string eval_harness() {
  Workspace ws("eval");
  check(ws.prepare().code == 0, "prepare failed");
  auto dataset = fs::path(RCG_SOURCE_DIR) / "fixtures/eval_pairs.jsonl";
  auto out = ws.dir / "report.json";
  auto r = run({RCG_BINARY, "eval", "--config", ws.cfg.string(), "--dataset", dataset.string(),
                "--approaches", "rog,rag,rcg", "--out", out.string()},
               ws.dir);
  check(r.code == 0, "eval exited " + std::to_string(r.code) + ": " + r.out);
  for (const char* col : {"Approach", "Rouge-L", "time/query(s)"})
    check(r.out.find(col) != std::string::npos, std::string("missing column ") + col);

  auto verify = [&](const json& reports) {
    for (const auto& rep : reports) {
      check(rep["rows"].size() == 10, rep["approach"].get<std::string>() + " does not have 10 rows");
      double sum = 0, tsum = 0;
      for (const auto& row : rep["rows"]) {
        // Recompute each row score with the independent LCS.
        auto a = rcg::analysis::rouge_tokens(row["response"].get<std::string>());
        auto b = rcg::analysis::rouge_tokens(row["label"].get<std::string>());
        double l = double(lcs_table(a, b));
        double f = (a.empty() || b.empty() || l == 0) ? 0.0
                                                      : 2 * (l / a.size()) * (l / b.size()) /
                                                            (l / a.size() + l / b.size());
        check(std::abs(row["rouge_l"].get<double>() - f) <= kRougeTol, "row rouge mismatch");
        sum += row["rouge_l"].get<double>();
        tsum += row["time_s"].get<double>();
      }
      check(std::abs(rep["mean_rouge_l"].get<double>() - sum / 10) <= kMeanTol, "mean != row mean");
      check(std::abs(rep["mean_time_per_query_s"].get<double>() - tsum / 10) <= kMeanTol,
            "time mean != row mean");
    }
  };
  auto base = json::parse(slurp(out));
  check(base.size() == 3, "expected 3 reports");
  verify(base);

  auto r2 = run({RCG_BINARY, "eval", "--config", ws.cfg.string(), "--dataset", dataset.string(),
                 "--approaches", "rog,rcg", "--epw-sweep", "10:90:10", "--out", out.string()},
                ws.dir);
  check(r2.code == 0, "sweep eval failed: " + r2.out);
  auto sweep = json::parse(slurp(out));
  verify(sweep);
  // Sweep layout: ROG, RCG-EPW-10 .. RCG-EPW-90, RCG.
  const std::vector<std::string> table{"ROG",        "RCG-EPW-10", "RCG-EPW-20", "RCG-EPW-30",
                                       "RCG-EPW-40", "RCG-EPW-50", "RCG-EPW-60", "RCG-EPW-70",
                                       "RCG-EPW-80", "RCG-EPW-90", "RCG"};
  std::vector<std::string> got;
  int epw = 0;
  for (const auto& rep : sweep) {
    got.push_back(rep["approach"]);
    epw += got.back().rfind("RCG-EPW-", 0) == 0;
  }
  check(epw == 9, std::to_string(epw) + " EPW reports");
  check(got == table, "sweep report order differs from the expected layout");
  return "3 + 11 reports of 10 rows, 9 EPW reports";
}

std::string server_contract() {
  std::vector<std::string> notes;
  // 429 under a stalled LLM endpoint.
  {
    rcg::mock::MockOptions o;
    o.stall_ms = 4000;
    rcg::mock::MockServer llm(o);
    llm.start();
    auto cfg = workspace_json();
    cfg["llm"] = {{"kind", "remote"},
                  {"endpoint_url", llm.base_url() + "/v1/completions"},
                  {"request_timeout_ms", 10000},
                  {"max_attempts", 1}};
    cfg["server"] = {{"queue_capacity", 1}, {"max_concurrent_generations", 1}};
    Workspace ws("queue", cfg);
    check(ws.prepare().code == 0, "prepare failed");
    Served server(ws.cfg, ws.dir);
    auto body = json{{"query", "Q"}, {"mode", "off"}, {"stream", false}}.dump();
    std::vector<std::thread> held;
    for (int i = 0; i < 2; ++i) {
      held.emplace_back([&] {
        httplib::Client c("127.0.0.1", server.port);
        c.set_read_timeout(20, 0);
        c.Post("/chat", body, "application/json");
      });
      // Let the first request take the slot before the second queues.
      std::this_thread::sleep_for(300ms);
    }
    httplib::Client c("127.0.0.1", server.port);
    auto third = c.Post("/chat", body, "application/json");
    int status = third ? third->status : -1;
    llm.stop();
    for (auto& t : held) t.join();
    check(status == 429, "third request got " + std::to_string(status) + " instead of 429");
    notes.push_back("429");
  }
  // Read-only: every mutation is 403 and no file changes.
  {
    Workspace ws("ro");
    check(ws.prepare().code == 0, "prepare failed");
    auto before = snapshot(ws.dir);
    {
      Served server(ws.cfg, ws.dir, true);
      httplib::Client c("127.0.0.1", server.port);
      auto cfg = c.Get("/config");
      auto prompts = c.Get("/prompts");
      check(cfg && prompts, "GET failed in read-only mode");
      std::vector<httplib::Result> rs;
      rs.push_back(c.Put("/config", cfg->body, "application/json"));
      rs.push_back(c.Put("/prompts", prompts->body, "application/json"));
      rs.push_back(c.Put("/prompts/rcg", R"({"ai_prefix":"x"})", "application/json"));
      rs.push_back(c.Post("/prompts/reset", "{}", "application/json"));
      rs.push_back(c.Post("/kb/reindex", R"({"kb_id":"kioxia"})", "application/json"));
      for (auto& r : rs) check(r && r->status == 403, "a mutation was not rejected with 403");
    }
    check(snapshot(ws.dir) == before, "files changed under read-only mode");
    notes.push_back("403 x5, files unchanged");
  }
  // PUT /config with an invalid embedder dim is rolled back.
  {
    Workspace ws("rollback");
    check(ws.prepare().code == 0, "prepare failed");
    Served server(ws.cfg, ws.dir);
    httplib::Client c("127.0.0.1", server.port);
    auto file_before = slurp(ws.cfg);
    auto api_before = c.Get("/config")->body;
    for (int dim : {0, 32}) {
      auto cfg = json::parse(api_before);
      cfg["embedder"]["dim"] = dim;
      auto r = c.Put("/config", cfg.dump(), "application/json");
      check(r && r->status == 400, "invalid dim " + std::to_string(dim) + " was accepted");
    }
    check(slurp(ws.cfg) == file_before, "config file changed");
    check(c.Get("/config")->body == api_before, "live config changed");
    auto chat = c.Post("/chat", R"({"query":"Yokkaichi plant","stream":false})", "application/json");
    check(chat && chat->status == 200, "chat failed after rollback");
    notes.push_back("rollback");
  }
  std::string s;
  for (auto& n : notes) s += (s.empty() ? "" : ", ") + n;
  return s;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<std::string()> fn;
  };
  const std::vector<Criterion> criteria{
      {"rouge-l unit oracle", kRougeBudgetS, rouge_oracle},
      {"flat search exactness", kFlatBudgetS, flat_exactness},
      {"hnsw recall", kHnswBudgetS, hnsw_recall},
      {"index persistence", 0, index_persistence},
      {"epw properties", 0, epw_properties},
      {"mokb argmax", 0, mokb_argmax},
      {"prompt assembly", 0, prompt_assembly},
      {"deterministic end-to-end", 0, end_to_end},
      {"eval harness", kEvalBudgetS, eval_harness},
      {"server contract", 0, server_contract},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = true;
    try {
      detail = c.fn();
    } catch (const Failure& f) {
      pass = false;
      detail = f.why;
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (pass && c.budget_s > 0 && secs > c.budget_s) {
      pass = false;
      detail += " (over the " + std::to_string(int(c.budget_s)) + "s budget)";
    }
    std::printf("%s  %-26s %6.2fs  %s\n", pass ? "PASS" : "FAIL", c.name, secs, detail.c_str());
    std::fflush(stdout);
    failed += !pass;
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
