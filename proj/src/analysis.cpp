#include "rcg/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "rcg/errors.hpp"
#include "rcg/file_util.hpp"
#include "rcg/text.hpp"

namespace rcg::analysis {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string dump_line(const ordered_json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace

ordered_json to_json(const AnalysisRecord& r) {
  ordered_json j;
  j["timestamp"] = r.timestamp;
  j["mode"] = r.mode;
  j["approach"] = r.approach;
  j["kb_id"] = r.kb_id;
  j["query"] = r.query;
  j["retrieved"] = ordered_json::array();
  for (const auto& h : r.retrieved) {
    ordered_json e;
    e["passage_id"] = h.passage_id;
    e["score"] = h.score;
    e["rank"] = h.rank;
    e["text"] = h.text;
    j["retrieved"].push_back(std::move(e));
  }
  j["epw_weight"] = r.epw_weight;
  j["tokens_injected"] = r.tokens_injected;
  j["prompt_chars"] = r.prompt_chars;
  j["response"] = r.response;
  j["sentence_sim"] = r.sentence_sim;
  j["token_sim"] = r.token_sim;
  j["latency_ms"] = {{"retrieve", r.latency.retrieve_ms},
                     {"generate", r.latency.generate_ms},
                     {"total", r.latency.total_ms}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

AnalysisRecord record_from_json(const json& j) {
  AnalysisRecord r;
  r.timestamp = j.value("timestamp", "");
  r.mode = j.value("mode", "");
  r.approach = j.value("approach", "");
  r.kb_id = j.value("kb_id", "");
  r.query = j.value("query", "");
  if (j.contains("retrieved")) {
    for (const auto& e : j.at("retrieved")) {
      retrieval::RetrievedPassage h;
      h.passage_id = e.value("passage_id", "");
      h.score = e.value("score", 0.0f);
      h.rank = e.value("rank", std::size_t{0});
      h.text = e.value("text", "");
      r.retrieved.push_back(std::move(h));
    }
  }
  r.epw_weight = j.value("epw_weight", 100);
  r.tokens_injected = j.value("tokens_injected", std::size_t{0});
  r.prompt_chars = j.value("prompt_chars", std::size_t{0});
  r.response = j.value("response", "");
  r.sentence_sim = j.value("sentence_sim", std::vector<double>{});
  r.token_sim = j.value("token_sim", std::vector<double>{});
  if (j.contains("latency_ms")) {
    const auto& l = j.at("latency_ms");
    r.latency = {l.value("retrieve", 0.0), l.value("generate", 0.0), l.value("total", 0.0)};
  }
  r.error = j.value("error", "");
  return r;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

double sentence_sim(std::string_view query, std::string_view passage,
                    const embed::Embedder& embedder) {
  std::vector<std::string> texts{std::string(query), std::string(passage)};
  auto vecs = embedder.embed_batch(texts);
  return embed::cosine(vecs[0], vecs[1]);
}

double token_sim(std::string_view query, std::string_view passage,
                 const embed::Embedder& embedder) {
  auto q = text::split_whitespace(query);
  auto p = text::split_whitespace(passage);
  if (q.empty() || p.empty()) return 0.0;
  std::vector<std::string> texts;
  texts.reserve(q.size() + p.size());
  for (auto t : q) texts.emplace_back(t);
  for (auto t : p) texts.emplace_back(t);
  auto m = embed::embed_texts(embedder, texts);
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      best = std::max(best, embed::cosine(m.row(i), m.row(q.size() + j)));
    }
    sum += best;
  }
  return sum / static_cast<double>(q.size());
}

std::vector<std::string> rouge_tokens(std::string_view s) {
  std::vector<std::string> out;
  for (auto t : text::split_whitespace(s)) {
    auto n = text::normalize_token(t);
    out.push_back(n.empty() ? std::string(t) : std::move(n));
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  auto c = rouge_tokens(candidate);
  auto r = rouge_tokens(reference);
  RougeScore s;
  if (c.empty() || r.empty()) return s;
  double lcs = static_cast<double>(lcs_length(c, r));
  s.precision = lcs / static_cast<double>(c.size());
  s.recall = lcs / static_cast<double>(r.size());
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

std::vector<EvalPair> load_eval_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read eval dataset " + path.string());
  std::vector<EvalPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto where = path.string() + ":" + std::to_string(line_no);
    try {
      auto j = json::parse(line);
      EvalPair p{j.at("query").get<std::string>(), j.at("label").get<std::string>()};
      if (text::trim(p.query).empty() || text::trim(p.label).empty()) {
        throw ConfigError(where + ": query and label must be non-empty");
      }
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("eval dataset " + path.string() + " is empty");
  return out;
}

namespace {

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError("invalid " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Approach parse_approach(std::string_view name) {
  auto lower = text::to_lower_ascii(name);
  if (lower == "rog") return {"ROG", "rog", false, 100};
  if (lower == "rag") return {"RAG", "rag", true, 100};
  if (lower == "rcg") return {"RCG", "rcg", true, 100};
  constexpr std::string_view epw = "rcg-epw-";
  if (lower.starts_with(epw)) {
    int w = parse_int(std::string_view(lower).substr(epw.size()), "EPW weight");
    if (w < 0 || w > 100) throw ConfigError("EPW weight out of range: " + std::to_string(w));
    return {"RCG-EPW-" + std::to_string(w), "rcg", true, w};
  }
  if (name.empty()) throw ConfigError("empty approach name");
  return {std::string(name), std::string(name), true, 100};
}

Sweep parse_sweep(std::string_view s) {
  auto a = s.find(':');
  auto b = a == std::string_view::npos ? a : s.find(':', a + 1);
  if (b == std::string_view::npos) {
    throw ConfigError("EPW sweep must look like start:end:step, got '" + std::string(s) + "'");
  }
  Sweep w{parse_int(s.substr(0, a), "sweep start"),
          parse_int(s.substr(a + 1, b - a - 1), "sweep end"),
          parse_int(s.substr(b + 1), "sweep step")};
  if (w.start < 0 || w.end > 100 || w.start > w.end || w.step <= 0) {
    throw ConfigError("EPW sweep requires 0 <= start <= end <= 100 and step > 0");
  }
  return w;
}

std::vector<Approach> expand_approaches(const std::vector<std::string>& names,
                                        const std::optional<Sweep>& sweep) {
  std::vector<Approach> out;
  for (const auto& n : names) out.push_back(parse_approach(n));
  if (!sweep) return out;
  std::vector<Approach> swept;
  for (int w = sweep->start; w <= sweep->end; w += sweep->step) {
    swept.push_back(parse_approach("rcg-epw-" + std::to_string(w)));
  }
  auto rcg = std::find_if(out.begin(), out.end(), [](const Approach& a) { return a.tag == "RCG"; });
  out.insert(rcg, swept.begin(), swept.end());
  return out;
}

std::vector<EvalReport> run_eval(const std::vector<EvalPair>& dataset,
                                 const std::vector<Approach>& approaches,
                                 const EvalRunner& runner) {
  if (dataset.empty()) throw ConfigError("eval dataset is empty");
  std::vector<EvalReport> reports;
  for (const auto& approach : approaches) {
    EvalReport report;
    report.approach = approach.tag;
    double rouge_sum = 0.0, time_sum = 0.0;
    for (const auto& pair : dataset) {
      EvalRow row;
      row.query = pair.query;
      row.label = pair.label;
      auto t0 = std::chrono::steady_clock::now();
      try {
        auto outcome = runner(pair, approach);
        row.response = std::move(outcome.response);
        row.error = std::move(outcome.error);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      row.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.rouge_l = row.error.empty() ? rouge_l(row.response, row.label).f1 : 0.0;
      rouge_sum += row.rouge_l;
      time_sum += row.time_s;
      report.rows.push_back(std::move(row));
    }
    auto n = static_cast<double>(report.rows.size());
    report.mean_rouge_l = rouge_sum / n;
    report.mean_time_s = time_sum / n;
    reports.push_back(std::move(report));
  }
  return reports;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string render_reports(const std::vector<EvalReport>& reports,
                           const RenderOptions& opts) {
  std::size_t w = std::string_view("Approach").size();
  for (const auto& r : reports) w = std::max(w, r.approach.size());
  w += 2;
  std::ostringstream os;
  os << pad("Approach", w) << pad("Rouge-L", 9) << "time/query(s)\n";
  for (const auto& r : reports) {
    os << pad(r.approach, w) << pad(fixed(r.mean_rouge_l, 3), 9)
       << fixed(opts.timing ? r.mean_time_s : 0.0, 2) << '\n';
  }
  if (opts.rows) {
    for (const auto& r : reports) {
      os << "\n[" << r.approach << "]\n";
      os << pad("#", 4) << pad("Rouge-L", 9) << pad("time(s)", 9) << "response\n";
      for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        std::string resp = row.error.empty() ? row.response : "ERROR: " + row.error;
        for (char& c : resp) {
          if (c == '\n' || c == '\r' || c == '\t') c = ' ';
        }
        os << pad(std::to_string(i + 1), 4) << pad(fixed(row.rouge_l, 3), 9)
           << pad(fixed(opts.timing ? row.time_s : 0.0, 2), 9) << resp << '\n';
      }
    }
  }
  return os.str();
}

ordered_json reports_to_json(const std::vector<EvalReport>& reports,
                             const RenderOptions& opts) {
  ordered_json out = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json jr;
    jr["approach"] = r.approach;
    jr["mean_rouge_l"] = r.mean_rouge_l;
    jr["mean_time_per_query_s"] = opts.timing ? r.mean_time_s : 0.0;
    jr["rows"] = ordered_json::array();
    for (const auto& row : r.rows) {
      ordered_json jrow;
      jrow["query"] = row.query;
      jrow["label"] = row.label;
      jrow["response"] = row.response;
      jrow["rouge_l"] = row.rouge_l;
      jrow["time_s"] = opts.timing ? row.time_s : 0.0;
      if (!row.error.empty()) jrow["error"] = row.error;
      jr["rows"].push_back(std::move(jrow));
    }
    out.push_back(std::move(jr));
  }
  return out;
}

AnalysisLog::AnalysisLog(std::optional<std::filesystem::path> file, std::size_t memory_cap)
    : file_(std::move(file)), memory_cap_(std::max<std::size_t>(memory_cap, 1)) {
  if (!file_) return;
  std::ifstream in(*file_);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      records_.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception&) {
      continue;  // a torn last line from a crash is not fatal
    }
    if (records_.size() > memory_cap_) {
      records_.pop_front();
      ++dropped_;
    }
  }
}

bool AnalysisLog::append(const AnalysisRecord& record) {
  std::string line = dump_line(to_json(record)) + "\n";
  std::lock_guard lock(mu_);
  records_.push_back(record);
  if (records_.size() > memory_cap_) {
    records_.pop_front();
    ++dropped_;
  }
  if (!file_) return true;
  try {
    std::ofstream out(*file_, std::ios::binary | std::ios::app);
    if (out) out.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (out) out.flush();
    if (!out) {
      last_error_ = "cannot append to analysis log " + file_->string();
      return false;
    }
  } catch (const std::exception& e) {
    last_error_ = e.what();
    return false;
  }
  return true;
}

std::size_t AnalysisLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<AnalysisRecord> AnalysisLog::page(std::size_t offset, std::size_t limit) const {
  std::lock_guard lock(mu_);
  std::vector<AnalysisRecord> out;
  for (std::size_t i = offset; i < records_.size() && out.size() < limit; ++i) {
    out.push_back(records_[i]);
  }
  return out;
}

std::string AnalysisLog::last_error() const {
  std::lock_guard lock(mu_);
  return last_error_;
}

void AnalysisLog::export_to(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  std::string content;
  if (file_ && dropped_ > 0) {
    content = fsutil::read_file(*file_);
  } else {
    for (const auto& r : records_) content += dump_line(to_json(r)) + "\n";
  }
  fsutil::write_file_atomic(path, content);
}

}  // namespace rcg::analysis
