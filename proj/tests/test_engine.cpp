#include <gtest/gtest.h>

#include "rcg/engine.hpp"
#include "rcg/text.hpp"
#include "workspace.hpp"

using namespace rcg;
using namespace rcg::engine;
namespace fs = std::filesystem;

namespace {

std::string no_knowledge(const std::string& query) {
  std::string out = "NO-KNOWLEDGE:";
  int n = 0;
  for (auto t : text::split_whitespace(query)) {
    if (n++ == 8) break;
    out += " " + std::string(t);
  }
  return out;
}

const std::string kQuery = "When did Kioxia start operating its new fabrication facility Fab7?";

struct EngineFixture : ::testing::Test {
  TempDir tmp;
  fs::path cfg_path;
  std::unique_ptr<Engine> engine;

  void SetUp() override {
    cfg_path = make_workspace(tmp);
    engine = std::make_unique<Engine>(config::load_config(cfg_path), cfg_path);
  }

  ChatRequest req(const std::string& approach, const std::string& q = kQuery) {
    auto r = default_chat_request(q, engine->state()->config.defaults);
    r.approach = approach;
    return r;
  }

  TurnResult chat(const ChatRequest& r) {
    return engine->chat(r, [](const llm::GenerationEvent&) { return true; });
  }
};

}  // namespace

TEST(PrepareKb, ByteIdenticalRerun) {
  TempDir tmp;
  auto cfg_path = make_workspace(tmp);
  auto dir = tmp / "kb/kioxia";
  auto idx = slurp(dir / kIndexFile);
  auto passages = slurp(dir / kPassageFile);
  auto manifest = slurp(dir / kManifestFile);
  auto cfg = config::load_config(cfg_path);
  auto e = embed::make_embedder(cfg.embedder);
  auto report = prepare_kb({tmp / "corpus"}, dir, *e, cfg);
  EXPECT_EQ(report.documents, 3u);
  EXPECT_GE(report.passages, 3u);
  EXPECT_EQ(slurp(dir / kIndexFile), idx);
  EXPECT_EQ(slurp(dir / kPassageFile), passages);
  EXPECT_EQ(slurp(dir / kManifestFile), manifest);
}

TEST(LoadKb, MissingFilesAndWrongModel) {
  TempDir tmp;
  auto cfg_path = make_workspace(tmp, false);
  EXPECT_THROW(Engine(config::load_config(cfg_path), cfg_path), ConfigError);

  TempDir tmp2;
  auto j = workspace_config_json();
  auto path2 = make_workspace(tmp2, true, j);
  j["embedder"]["model_name"] = "another-model";
  write_file(path2, j.dump());
  EXPECT_THROW(Engine(config::load_config(path2), path2), ConfigError);
}

TEST_F(EngineFixture, ThreeApproachesDiffer) {
  auto rcg = chat(req("rcg"));
  auto rag = chat(req("rag"));
  auto rog = chat(req("rog"));
  ASSERT_FALSE(rcg.error);
  ASSERT_FALSE(rcg.record.retrieved.empty());
  const auto top = rcg.record.retrieved[0].text;
  EXPECT_EQ(rcg.record.response, llm::first_sentence(top));
  EXPECT_EQ(rag.record.response, llm::first_sentence(top) + " " + no_knowledge(kQuery));
  EXPECT_EQ(rog.record.response, no_knowledge(kQuery));
  EXPECT_TRUE(rog.record.retrieved.empty());
  EXPECT_EQ(rog.record.mode, "off");
  EXPECT_EQ(engine->log().size(), 3u);
  // Determinism.
  EXPECT_EQ(chat(req("rcg")).record.response, rcg.record.response);
}

TEST_F(EngineFixture, ModeOffUsesEmptyKnowledge) {
  auto r = req("rcg", "Q");
  r.mode = retrieval::RetrievalMode::off;
  auto plan = engine->plan(r);
  EXPECT_FALSE(plan.retrieval_used);
  EXPECT_EQ(plan.prompt, prompt::assemble(engine->catalog().at("rcg"), "", "Q"));
  EXPECT_EQ(chat(r).record.response, "NO-KNOWLEDGE: Q");
}

TEST_F(EngineFixture, EpwApproachOverridesWeight) {
  auto plan = engine->plan(req("rcg-epw-50"));
  ASSERT_TRUE(plan.retrieved);
  EXPECT_EQ(plan.approach.epw_weight, 50);
  EXPECT_EQ(plan.retrieved->tokens_injected, (plan.retrieved->tokens_retrieved + 1) / 2);
  auto full = engine->plan(req("rcg"));
  EXPECT_EQ(full.retrieved->tokens_injected, full.retrieved->tokens_retrieved);
  EXPECT_LT(plan.prompt.size(), full.prompt.size());
}

TEST_F(EngineFixture, ManualModeAndUnknownKb) {
  auto r = req("rcg");
  r.mode = retrieval::RetrievalMode::manual;
  r.kb_id = "kioxia";
  EXPECT_EQ(engine->plan(r).retrieved->kb_id, "kioxia");
  r.kb_id = "missing";
  EXPECT_THROW(engine->plan(r), RequestError);
  EXPECT_THROW(engine->plan(req("no-such-set")), RequestError);
}

TEST_F(EngineFixture, BudgetErrorBeforeGeneration) {
  auto cfg = engine->state()->config;
  cfg.llm.context_budget = 5;
  engine->replace_config(cfg);
  try {
    engine->plan(req("rcg"));
    FAIL();
  } catch (const BudgetError& e) {
    EXPECT_EQ(e.budget(), 5u);
    EXPECT_GT(e.estimate(), 5u);
  }
}

TEST_F(EngineFixture, ReplaceConfigRollsBack) {
  const auto before = slurp(cfg_path);
  const auto state_before = engine->state();
  auto cfg = state_before->config;
  embed::EmbedderSpec wrong = cfg.embedder;
  wrong.dim = 32;  // the prepared index is 64-d
  cfg.embedder = wrong;
  EXPECT_THROW(engine->replace_config(cfg), ConfigError);
  EXPECT_EQ(slurp(cfg_path), before);
  EXPECT_EQ(engine->state(), state_before);

  auto ok = state_before->config;
  ok.defaults.k = 2;
  engine->replace_config(ok);
  EXPECT_EQ(engine->state()->config.defaults.k, 2u);
  EXPECT_EQ(config::load_config(cfg_path).defaults.k, 2u);
}

TEST_F(EngineFixture, PromptEditsPersist) {
  auto catalog_file = tmp / "prompts.catalog";
  EXPECT_FALSE(fs::exists(catalog_file));
  prompt::PromptSet mine{"", "[", "]\nuse it.\n", "", "\nAI:"};
  engine->set_prompt("mine", mine);
  EXPECT_TRUE(fs::exists(catalog_file));
  EXPECT_EQ(prompt::load_catalog(catalog_file).at("mine"), mine);
  auto r = chat(req("mine"));
  EXPECT_EQ(r.record.approach, "mine");
  EXPECT_EQ(r.record.response, llm::first_sentence(r.record.retrieved[0].text));

  engine->set_prompt("rcg", mine);
  engine->reset_prompts("rcg");
  EXPECT_EQ(engine->catalog().at("rcg"), prompt::PromptCatalog::builtin_defaults().at("rcg"));
  engine->set_prompt("rag", mine);
  engine->reset_prompts("");
  auto after = engine->catalog();
  const auto defaults = prompt::PromptCatalog::builtin_defaults();
  for (const auto& [name, ps] : defaults.sets())
    EXPECT_EQ(after.at(name), ps) << name;
  EXPECT_EQ(after.at("mine"), mine);
}

TEST_F(EngineFixture, ReindexPicksUpNewDocuments) {
  write_file(tmp / "corpus/extra.txt",
             "Zanzibar zebra quokka platypus wombat. Marsupials are discussed here.");
  auto report = engine->reindex("kioxia");
  EXPECT_EQ(report.documents, 4u);
  auto r = chat(req("rcg", "Zanzibar zebra quokka platypus wombat"));
  EXPECT_EQ(r.record.response, "Zanzibar zebra quokka platypus wombat.");
  EXPECT_THROW(engine->reindex("nope"), RequestError);
}

TEST_F(EngineFixture, EvalTurnIsNotLogged) {
  auto out = engine->eval_turn({"Q", "label"}, analysis::parse_approach("rog"));
  EXPECT_EQ(out.response, "NO-KNOWLEDGE: Q");
  EXPECT_EQ(engine->log().size(), 0u);
}

TEST(ChatRequest, Parsing) {
  config::Defaults d;
  d.k = 3;
  auto r = parse_chat_request({{"query", "hi"}}, d);
  EXPECT_EQ(r.k, 3u);
  EXPECT_EQ(r.approach, "rcg");
  EXPECT_TRUE(r.stream);
  r = parse_chat_request({{"query", "hi"}, {"mode", "off"}, {"k", 2}, {"stream", false}}, d);
  EXPECT_EQ(r.mode, retrieval::RetrievalMode::off);
  EXPECT_FALSE(r.stream);
  EXPECT_THROW(parse_chat_request({{"query", ""}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", "x"}, {"k", -1}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", "x"}, {"extra", 1}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", "x"}, {"epw_weight", 101}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", "x"}, {"mode", "sideways"}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", "x"}, {"mode", "manual"}}, d), RequestError);
  EXPECT_THROW(parse_chat_request({{"query", 5}}, d), RequestError);
  EXPECT_THROW(parse_chat_request(nlohmann::json::array(), d), RequestError);
}
