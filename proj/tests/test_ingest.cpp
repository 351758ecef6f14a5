#include <gtest/gtest.h>

#include <random>

#include "rcg/errors.hpp"
#include "rcg/ingest.hpp"
#include "rcg/text.hpp"
#include "test_util.hpp"

using namespace rcg;
using namespace rcg::ingest;

namespace {

Document doc(std::string text, std::string id = "d") {
  Document d;
  d.doc_id = std::move(id);
  d.text = std::move(text);
  return d;
}

std::string random_text(std::mt19937& rng, int words) {
  static const char* vocab[] = {"alpha", "b", "c\xc3\xa9", "delta,", "e.", "\xe2\x82\xac", "fox"};
  static const char* gaps[] = {" ", "  ", "\n", "\t", " \n "};
  std::string s;
  if (rng() % 3 == 0) s += gaps[rng() % 5];
  for (int i = 0; i < words; ++i) {
    if (i) s += gaps[rng() % 5];
    s += vocab[rng() % 7];
  }
  if (rng() % 3 == 0) s += gaps[rng() % 5];
  return s;
}

// Independent count: 1 passage up to chunk_len units, then one per stride.
std::size_t expected_passages(std::size_t units, const SplitterConfig& cfg) {
  if (units == 0) return 0;
  if (units <= cfg.chunk_len) return 1;
  std::size_t stride = cfg.chunk_len - cfg.overlap;
  return 1 + (units - cfg.chunk_len + stride - 1) / stride;
}

}  // namespace

TEST(Discover, FiltersByExtensionAndSorts) {
  TempDir t;
  write_file(t / "dir/a.txt", "a");
  write_file(t / "dir/b.md", "b");
  write_file(t / "dir/c.bin", "c");
  auto files = discover({t / "dir"}, {"txt", "md"});
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].path.filename(), "a.txt");
  EXPECT_EQ(files[1].path.filename(), "b.md");
  EXPECT_EQ(files[0].doc_id, "a.txt");
}

TEST(Discover, EmptyInput) { EXPECT_TRUE(discover({}, {"txt"}).empty()); }

TEST(Discover, NestedDirectoriesInLexicographicOrder) {
  TempDir t;
  write_file(t / "root/z.txt", "1");
  write_file(t / "root/sub/b.txt", "2");
  write_file(t / "root/sub/deeper/a.TXT", "3");
  auto files = discover({t / "root"}, {".txt"});
  ASSERT_EQ(files.size(), 3u);
  // Enumerated by hand: generic paths sorted bytewise.
  EXPECT_EQ(files[0].doc_id, "sub__b.txt");
  EXPECT_EQ(files[1].doc_id, "sub__deeper__a.TXT");
  EXPECT_EQ(files[2].doc_id, "z.txt");
}

TEST(Discover, MissingPathNamesThePath) {
  try {
    discover({"/definitely/not/here"}, {"txt"});
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("/definitely/not/here"), std::string::npos);
  }
}

TEST(Discover, DuplicateDocIdIsAnError) {
  TempDir t;
  write_file(t / "x/same.txt", "1");
  write_file(t / "y/same.txt", "2");
  EXPECT_THROW(discover({t / "x/same.txt", t / "y/same.txt"}, {"txt"}), IngestError);
}

TEST(Loaders, PlainHtmlCsv) {
  EXPECT_EQ(strip_html("<p>Hi <b>there</b></p>"), "Hi there");
  EXPECT_EQ(strip_html("<p>a &amp; b</p><script>x=1</script><p>c&#33;</p>"), "a & b\nc!");
  EXPECT_EQ(join_csv_rows("a,b\r\nc,d\n"), "a,b\nc,d");
  EXPECT_EQ(join_csv_rows("a,b\nc,d"), "a,b\nc,d");
}

TEST(Loaders, StreamRecordsFailuresAndContinues) {
  TempDir t;
  write_file(t / "a.txt", "hello world");
  write_file(t / "b.txt", "bad \xff byte");
  std::vector<SourceFile> files = {{t / "a.txt", "a"}, {t / "missing.txt", "m"}, {t / "b.txt", "b"}};
  DocumentStream s(files, LoaderRegistry::with_builtins());
  auto d1 = s.next();
  ASSERT_TRUE(d1);
  EXPECT_EQ(d1->text, "hello world");
  auto d2 = s.next();
  ASSERT_TRUE(d2);
  EXPECT_EQ(d2->doc_id, "b");
  EXPECT_EQ(d2->replaced_bytes, 1u);
  EXPECT_EQ(d2->text, "bad \xef\xbf\xbd byte");
  EXPECT_FALSE(s.next());
  ASSERT_EQ(s.failures().size(), 1u);
  EXPECT_NE(s.failures()[0].path.find("missing.txt"), std::string::npos);
  EXPECT_EQ(s.replaced_bytes(), 1u);
}

TEST(Split, ConfigValidation) {
  EXPECT_THROW((SplitterConfig{4, 4, SplitUnit::word}.validate()), ConfigError);
  EXPECT_THROW((SplitterConfig{0, 0, SplitUnit::word}.validate()), ConfigError);
  EXPECT_NO_THROW((SplitterConfig{4, 3, SplitUnit::word}.validate()));
}

TEST(Split, WordModeHandExample) {
  // 5 words, chunk 2, overlap 1 -> stride 1 -> windows [0,2) [1,3) [2,4) [3,5).
  auto ps = split(doc("a b c d e"), {2, 1, SplitUnit::word});
  ASSERT_EQ(ps.size(), 4u);
  EXPECT_EQ(ps[0].text, "a b ");
  EXPECT_EQ(ps[1].text, "b c ");
  EXPECT_EQ(ps[3].text, "d e");
  EXPECT_EQ(ps[3].passage_id, "d#3");
}

TEST(Split, CharacterModeCountsCodePoints) {
  auto ps = split(doc("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9"), {2, 0, SplitUnit::character});
  ASSERT_EQ(ps.size(), 3u);
  EXPECT_EQ(ps[0].text, "\xc3\xa9\xc3\xa9");
  EXPECT_EQ(ps[2].char_start, 4u);
  EXPECT_EQ(ps[2].char_end, 5u);
}

TEST(Split, EmptyAndBlankDocuments) {
  EXPECT_TRUE(split(doc(""), {3, 1, SplitUnit::word}).empty());
  EXPECT_TRUE(split(doc("  \n "), {3, 1, SplitUnit::word}).empty());
}

// Invariants over random documents: offsets slice the text, ordinals are
// contiguous, counts match the closed form, overlap=0 passages tile.
TEST(SplitProperty, InvariantsHoldOnRandomDocuments) {
  std::mt19937 rng(20240611);
  for (int iter = 0; iter < 300; ++iter) {
    auto text = random_text(rng, static_cast<int>(rng() % 60));
    std::size_t chunk = 1 + rng() % 12;
    std::size_t overlap = rng() % chunk;
    auto unit = rng() % 2 ? SplitUnit::word : SplitUnit::character;
    SplitterConfig cfg{chunk, overlap, unit};
    auto ps = split(doc(text), cfg);

    std::size_t units = unit == SplitUnit::word ? text::count_whitespace_tokens(text)
                                                : text::codepoint_offsets(text).size() - 1;
    ASSERT_EQ(ps.size(), expected_passages(units, cfg)) << text;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      EXPECT_EQ(ps[i].ordinal, i);
      EXPECT_LT(ps[i].char_start, ps[i].char_end);
      EXPECT_EQ(ps[i].text, text::utf8_slice(text, ps[i].char_start, ps[i].char_end));
      if (unit == SplitUnit::word) {
        EXPECT_LE(text::count_whitespace_tokens(ps[i].text), chunk);
      }
    }
    if (overlap == 0 && !ps.empty()) {
      std::string joined;
      for (const auto& p : ps) joined += p.text;
      if (unit == SplitUnit::character) {
        EXPECT_EQ(joined, text);
      } else {
        // Leading whitespace belongs to the first passage, so words tile.
        EXPECT_EQ(joined, text.substr(0, joined.size()));
        EXPECT_EQ(text::split_whitespace(joined), text::split_whitespace(text));
      }
    }
  }
}

TEST(PassageStore, RoundTripAndAtomicity) {
  TempDir t;
  write_file(t / "in/a.txt", "one two three four five six");
  write_file(t / "in/b.md", "seven eight");
  auto files = discover({t / "in"}, {"txt", "md"});
  DocumentStream docs(files, LoaderRegistry::with_builtins());
  auto stats = build_passage_store(docs, {4, 1, SplitUnit::word}, t / "kb/passages.jsonl");
  EXPECT_EQ(stats.documents, 2u);
  // a: 6 words, chunk 4 stride 3 -> 2 passages; b: 1 passage.
  EXPECT_EQ(stats.passages, 3u);
  EXPECT_FALSE(std::filesystem::exists(t / "kb/passages.jsonl.partial"));
  auto back = read_passage_store(t / "kb/passages.jsonl");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].passage_id, "a.txt#0");
  EXPECT_EQ(back[2].text, "seven eight");

  // A document stream over the same files yields the same passages.
  DocumentStream again(files, LoaderRegistry::with_builtins());
  std::vector<Passage> direct;
  while (auto d = again.next()) {
    for (auto& p : split(*d, {4, 1, SplitUnit::word})) direct.push_back(p);
  }
  EXPECT_EQ(direct, back);
}

TEST(PassageStore, UnwritableTargetLeavesNoPartialFile) {
  TempDir t;
  write_file(t / "a.txt", "x y");
  write_file(t / "blocker", "");  // a file where a directory is needed
  DocumentStream docs({{t / "a.txt", "a"}}, LoaderRegistry::with_builtins());
  EXPECT_THROW(build_passage_store(docs, {4, 1, SplitUnit::word}, t / "blocker/p.jsonl"),
               IngestError);
}
