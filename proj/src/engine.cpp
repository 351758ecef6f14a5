#include "rcg/engine.hpp"

#include <chrono>
#include <set>

#include "rcg/errors.hpp"
#include "rcg/file_util.hpp"
#include "rcg/index.hpp"
#include "rcg/ingest.hpp"
#include "rcg/text.hpp"

namespace rcg::engine {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PrepareReport prepare_kb(const std::vector<fs::path>& inputs, const fs::path& dir,
                         const embed::Embedder& embedder, const config::ToolConfig& cfg) {
  cfg.splitter.validate();
  auto files = ingest::discover(inputs, cfg.extensions);
  ingest::DocumentStream docs(std::move(files), ingest::LoaderRegistry::with_builtins());

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IngestError("cannot create " + dir.string() + ": " + ec.message());

  PrepareReport report;
  auto store = dir / kPassageFile;
  auto stats = ingest::build_passage_store(docs, cfg.splitter, store);
  report.documents = stats.documents;
  report.passages = stats.passages;
  report.failures = docs.failures();
  report.replaced_bytes = docs.replaced_bytes();

  // Embed by streaming the store back in batches.
  embed::EmbeddingMatrix matrix(embedder.dim());
  matrix.reserve(stats.passages);
  ingest::PassageReader reader(store);
  std::vector<std::string> texts, ids;
  auto flush = [&] {
    auto m = embed::embed_texts(embedder, texts, ids);
    for (std::size_t i = 0; i < m.size(); ++i) matrix.append(m.row(i), ids[i]);
    texts.clear();
    ids.clear();
  };
  while (auto p = reader.next()) {
    texts.push_back(std::move(p->text));
    ids.push_back(std::move(p->passage_id));
    if (texts.size() >= 256) flush();
  }
  if (!texts.empty()) flush();

  const auto& model = embedder.spec().model_name;
  std::unique_ptr<index::VectorIndex> idx;
  if (cfg.index.kind == index::IndexKind::hnsw) {
    idx = index::build_hnsw(std::move(matrix), cfg.index.hnsw, model);
  } else {
    idx = index::build_flat(std::move(matrix), model);
  }
  index::save_index(*idx, dir / kIndexFile);

  report.dim = embedder.dim();
  report.kind = idx->kind();
  report.model_name = model;

  ordered_json manifest;
  manifest["documents"] = report.documents;
  manifest["passages"] = report.passages;
  manifest["dim"] = report.dim;
  manifest["index_kind"] = index::to_string(report.kind);
  manifest["model_name"] = report.model_name;
  manifest["splitter"] = {{"chunk_len", cfg.splitter.chunk_len},
                          {"overlap", cfg.splitter.overlap},
                          {"unit", ingest::to_string(cfg.splitter.unit)}};
  manifest["skipped_files"] = ordered_json::array();
  for (const auto& f : report.failures) {
    manifest["skipped_files"].push_back({{"path", f.path}, {"reason", f.reason}});
  }
  fsutil::write_file_atomic(dir / kManifestFile, manifest.dump(2) + "\n");
  return report;
}

std::shared_ptr<const retrieval::KnowledgeBase> load_kb(
    const config::KbConfig& kb, const fs::path& dir,
    std::shared_ptr<const embed::Embedder> embedder) {
  auto store = dir / kPassageFile;
  auto index_path = dir / kIndexFile;
  if (!fs::exists(store) || !fs::exists(index_path)) {
    throw ConfigError("knowledge base '" + kb.id + "' is not built in " + dir.string() +
                      " (run prepare)");
  }
  auto passages = ingest::read_passage_store(store);
  std::shared_ptr<index::VectorIndex> idx =
      index::load_index(index_path, embedder->spec().model_name);
  std::vector<std::string> ids;
  ids.reserve(passages.size());
  for (const auto& p : passages) ids.push_back(p.passage_id);
  if (ids.size() == idx->size()) idx->attach_ids(std::move(ids));
  return retrieval::make_knowledge_base(kb.id, kb.name, kb.description, std::move(passages),
                                        std::move(idx), std::move(embedder));
}

std::shared_ptr<const State> build_state(config::ToolConfig cfg) {
  cfg.validate();
  auto state = std::make_shared<State>();
  state->embedder = embed::make_embedder(cfg.embedder);
  state->generator = llm::make_generator(cfg.llm);

  std::vector<std::pair<embed::EmbedderSpec, std::shared_ptr<const embed::Embedder>>> embedders;
  embedders.emplace_back(cfg.embedder, state->embedder);
  auto embedder_for = [&](const embed::EmbedderSpec& spec) {
    for (const auto& [s, e] : embedders) {
      if (s == spec) return e;
    }
    std::shared_ptr<const embed::Embedder> e = embed::make_embedder(spec);
    embedders.emplace_back(spec, e);
    return e;
  };
  for (const auto& kb : cfg.knowledge_bases) {
    auto e = embedder_for(cfg.embedder_for(kb));
    try {
      state->kbs.push_back(load_kb(kb, cfg.resolve(kb.dir), e));
    } catch (const index::IndexFileError& err) {
      throw ConfigError("knowledge base '" + kb.id + "': " + err.what());
    } catch (const IngestError& err) {
      throw ConfigError("knowledge base '" + kb.id + "': " + err.what());
    }
  }
  state->config = std::move(cfg);
  return state;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw RequestError(std::string("invalid field '") + key + "'");
  }
}

}  // namespace

ChatRequest default_chat_request(std::string query, const config::Defaults& d) {
  ChatRequest r;
  r.query = std::move(query);
  r.mode = d.mode;
  r.approach = d.approach;
  r.kb_id = d.kb_id;
  r.k = d.k;
  r.epw_weight = d.epw_weight;
  r.ef_search = d.ef_search;
  return r;
}

ChatRequest parse_chat_request(const json& j, const config::Defaults& defaults) {
  if (!j.is_object()) throw RequestError("request body must be a JSON object");
  static const std::set<std::string> known = {"query", "mode",      "approach", "kb_id",
                                              "k",     "epw_weight", "ef_search", "stream"};
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) throw RequestError("unknown field '" + key + "'");
  }
  ChatRequest r = default_chat_request("", defaults);
  read_field(j, "query", r.query);
  if (text::trim(r.query).empty()) throw RequestError("query must be non-empty");
  std::optional<std::string> mode;
  read_field(j, "mode", mode);
  if (mode) r.mode = retrieval::retrieval_mode_from_string(*mode);
  read_field(j, "approach", r.approach);
  read_field(j, "kb_id", r.kb_id);
  // Signed reads so that negative values are rejected rather than wrapped.
  long long k = static_cast<long long>(r.k);
  read_field(j, "k", k);
  if (k < 1) throw RequestError("k must be positive");
  r.k = static_cast<std::size_t>(k);
  read_field(j, "epw_weight", r.epw_weight);
  long long ef = static_cast<long long>(r.ef_search);
  read_field(j, "ef_search", ef);
  if (ef < 1) throw RequestError("ef_search must be positive");
  r.ef_search = static_cast<std::size_t>(ef);
  read_field(j, "stream", r.stream);

  retrieval::RetrievalConfig rc{r.mode, r.kb_id, r.k, r.epw_weight, r.ef_search};
  rc.validate();
  try {
    analysis::parse_approach(r.approach);
  } catch (const ConfigError& e) {
    throw RequestError(e.what());
  }
  return r;
}

ordered_json retrieval_summary(const TurnPlan& plan) {
  ordered_json j;
  j["mode"] = plan.retrieval_used ? retrieval::to_string(plan.request.mode) : "off";
  j["approach"] = plan.approach.tag;
  j["kb_id"] = plan.retrieved ? json(plan.retrieved->kb_id) : json(nullptr);
  j["hits"] = ordered_json::array();
  if (plan.retrieved) {
    for (const auto& h : plan.retrieved->hits) {
      j["hits"].push_back({{"passage_id", h.passage_id}, {"score", h.score}, {"rank", h.rank}});
    }
  }
  j["epw_weight"] = plan.approach.epw_weight;
  j["tokens_retrieved"] = plan.retrieved ? plan.retrieved->tokens_retrieved : 0;
  j["tokens_injected"] = plan.retrieved ? plan.retrieved->tokens_injected : 0;
  j["prompt_chars"] = plan.prompt.size();
  j["prompt_tokens_est"] = plan.prompt_tokens_est;
  j["retrieve_ms"] = plan.retrieve_ms;
  return j;
}

Engine::Engine(config::ToolConfig cfg, std::optional<fs::path> config_path)
    : config_path_(std::move(config_path)) {
  catalog_path_ = cfg.resolve(cfg.prompt_catalog);
  catalog_ = fs::exists(catalog_path_) ? prompt::load_catalog(catalog_path_)
                                       : prompt::PromptCatalog::builtin_defaults();
  std::optional<fs::path> log_file;
  if (!cfg.analysis_log.empty()) log_file = cfg.resolve(cfg.analysis_log);
  log_ = std::make_unique<analysis::AnalysisLog>(log_file);
  state_ = build_state(std::move(cfg));
}

std::shared_ptr<const State> Engine::state() const {
  std::lock_guard lock(state_mu_);
  return state_;
}

prompt::PromptCatalog Engine::catalog() const {
  std::shared_lock lock(catalog_mu_);
  return catalog_;
}

TurnPlan Engine::plan(const ChatRequest& req) const {
  TurnPlan plan;
  plan.request = req;
  plan.state = state();
  try {
    plan.approach = analysis::parse_approach(req.approach);
  } catch (const ConfigError& e) {
    throw RequestError(e.what());
  }
  // An explicit rcg-epw-N approach fixes the weight; otherwise the request's.
  if (!text::to_lower_ascii(req.approach).starts_with("rcg-epw-")) {
    plan.approach.epw_weight = req.epw_weight;
  }
  {
    std::shared_lock lock(catalog_mu_);
    plan.prompts = catalog_.at(plan.approach.prompt_set);
  }

  plan.retrieval_used = plan.approach.retrieval && req.mode != retrieval::RetrievalMode::off;
  auto t0 = std::chrono::steady_clock::now();
  if (plan.retrieval_used) {
    retrieval::RetrievalConfig rc{req.mode, req.kb_id, req.k, plan.approach.epw_weight,
                                  req.ef_search};
    rc.validate();
    const auto& kbs = plan.state->kbs;
    auto kb_id = retrieval::select_kb(req.query, kbs, rc);
    for (const auto& kb : kbs) {
      if (kb->kb_id == *kb_id) plan.kb = kb;
    }
    plan.retrieved = retrieval::retrieve(req.query, *plan.kb, rc);
    plan.prompt = prompt::assemble(plan.prompts, plan.retrieved->knowledge_text, req.query);
  } else {
    plan.prompt = prompt::assemble(plan.prompts, "", req.query);
  }
  plan.retrieve_ms = ms_since(t0);

  plan.prompt_tokens_est = llm::estimate_tokens(plan.prompt);
  const auto budget = plan.state->config.llm.context_budget;
  if (plan.prompt_tokens_est > budget) throw BudgetError(plan.prompt_tokens_est, budget);
  return plan;
}

TurnResult Engine::execute(const TurnPlan& plan, const llm::EventSink& sink, bool log_turn) {
  TurnResult result;
  auto& rec = result.record;
  rec.timestamp = analysis::utc_timestamp();
  rec.mode = plan.retrieval_used ? std::string(retrieval::to_string(plan.request.mode)) : "off";
  rec.approach = plan.approach.tag;
  rec.query = plan.request.query;
  rec.epw_weight = plan.approach.epw_weight;
  rec.prompt_chars = plan.prompt.size();
  if (plan.retrieved) {
    rec.kb_id = plan.retrieved->kb_id;
    rec.retrieved = plan.retrieved->hits;
    rec.tokens_injected = plan.retrieved->tokens_injected;
  }

  auto t0 = std::chrono::steady_clock::now();
  llm::GenerationRequest greq{plan.prompt, plan.prompts};
  plan.state->generator->generate_stream(greq, [&](const llm::GenerationEvent& ev) {
    if (const auto* t = std::get_if<llm::TokenChunk>(&ev)) {
      rec.response += t->text;
    } else if (const auto* d = std::get_if<llm::Done>(&ev)) {
      result.done = *d;
    } else {
      result.error = std::get<llm::GenerationError>(ev);
    }
    return sink(ev);
  });
  rec.latency.retrieve_ms = plan.retrieve_ms;
  rec.latency.generate_ms = ms_since(t0);
  rec.latency.total_ms = rec.latency.retrieve_ms + rec.latency.generate_ms;
  if (result.error) rec.error = result.error->code + ": " + result.error->message;

  if (log_turn) {
    if (plan.kb) {
      for (const auto& h : rec.retrieved) {
        double s = 0.0, t = 0.0;
        try {
          s = analysis::sentence_sim(rec.query, h.text, *plan.kb->embedder);
          t = analysis::token_sim(rec.query, h.text, *plan.kb->embedder);
        } catch (const Error&) {
          // Diagnostics only; the turn itself already completed.
        }
        rec.sentence_sim.push_back(s);
        rec.token_sim.push_back(t);
      }
    }
    log_->append(rec);
  }
  return result;
}

TurnResult Engine::chat(const ChatRequest& req, const llm::EventSink& sink) {
  return execute(plan(req), sink);
}

analysis::TurnOutcome Engine::eval_turn(const analysis::EvalPair& pair,
                                        const analysis::Approach& approach) const {
  auto st = state();
  auto req = default_chat_request(pair.query, st->config.defaults);
  req.approach = approach.tag;
  if (!approach.retrieval) req.mode = retrieval::RetrievalMode::off;
  req.epw_weight = approach.epw_weight;
  analysis::TurnOutcome out;
  try {
    auto p = plan(req);
    auto c = llm::generate(*p.state->generator, {p.prompt, p.prompts});
    out.response = std::move(c.text);
    if (c.error) out.error = c.error->code + ": " + c.error->message;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

void Engine::replace_catalog(prompt::PromptCatalog catalog) {
  std::lock_guard w(writer_mu_);
  prompt::save_catalog(catalog, catalog_path_);
  std::unique_lock lock(catalog_mu_);
  catalog_ = std::move(catalog);
}

void Engine::set_prompt(const std::string& name, prompt::PromptSet ps) {
  auto next = catalog();
  next.set(name, std::move(ps));
  replace_catalog(std::move(next));
}

void Engine::reset_prompts(const std::string& name) {
  auto next = catalog();
  if (name.empty()) {
    next.reset_all();
  } else if (!next.reset(name)) {
    throw RequestError("'" + name + "' is not a built-in prompt set");
  }
  replace_catalog(std::move(next));
}

void Engine::replace_config(config::ToolConfig cfg) {
  std::lock_guard w(writer_mu_);
  auto next = build_state(cfg);
  auto catalog_path = cfg.resolve(cfg.prompt_catalog);
  std::optional<prompt::PromptCatalog> catalog;
  if (catalog_path != catalog_path_) {
    catalog = fs::exists(catalog_path) ? prompt::load_catalog(catalog_path)
                                       : prompt::PromptCatalog::builtin_defaults();
  }
  if (config_path_) config::save_config(cfg, *config_path_);
  if (catalog) {
    std::unique_lock lock(catalog_mu_);
    catalog_ = std::move(*catalog);
    catalog_path_ = catalog_path;
  }
  std::lock_guard lock(state_mu_);
  state_ = std::move(next);
}

PrepareReport Engine::reindex(const std::string& kb_id) {
  std::lock_guard w(writer_mu_);
  auto current = state();
  const auto& cfg = current->config;
  const auto* kb = cfg.find_kb(kb_id);
  if (!kb) throw RequestError("unknown knowledge base: " + kb_id);
  if (kb->sources.empty()) {
    throw RequestError("knowledge base '" + kb_id + "' has no sources to reindex");
  }
  std::vector<fs::path> inputs;
  for (const auto& s : kb->sources) inputs.push_back(cfg.resolve(s));

  std::shared_ptr<const embed::Embedder> embedder;
  for (const auto& loaded : current->kbs) {
    if (loaded->kb_id == kb_id) embedder = loaded->embedder;
  }
  if (!embedder) embedder = embed::make_embedder(cfg.embedder_for(*kb));

  auto dir = cfg.resolve(kb->dir);
  auto report = prepare_kb(inputs, dir, *embedder, cfg);
  auto rebuilt = load_kb(*kb, dir, embedder);

  auto next = std::make_shared<State>(*current);
  for (auto& k : next->kbs) {
    if (k->kb_id == kb_id) k = rebuilt;
  }
  std::lock_guard lock(state_mu_);
  state_ = std::move(next);
  return report;
}

}  // namespace rcg::engine
