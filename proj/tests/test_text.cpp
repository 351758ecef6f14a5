#include <gtest/gtest.h>

#include <random>

#include "rcg/text.hpp"

using namespace rcg::text;

TEST(Text, SplitWhitespaceDropsEmptyTokens) {
  auto t = split_whitespace("  a\tbb\n\nccc  ");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], "a");
  EXPECT_EQ(t[1], "bb");
  EXPECT_EQ(t[2], "ccc");
  EXPECT_TRUE(split_whitespace("").empty());
  EXPECT_TRUE(split_whitespace(" \n ").empty());
}

TEST(Text, CountMatchesSplit) {
  std::mt19937 rng(7);
  const std::string alphabet = "ab \n\t.";
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (int n = rng() % 40; n > 0; --n) s += alphabet[rng() % alphabet.size()];
    EXPECT_EQ(count_whitespace_tokens(s), split_whitespace(s).size()) << s;
  }
}

TEST(Text, NormalizeToken) {
  EXPECT_EQ(normalize_token("Hello,"), "hello");
  EXPECT_EQ(normalize_token("\"(R&D)\""), "r&d");
  EXPECT_EQ(normalize_token("1,526.5"), "1,526.5");
  EXPECT_EQ(normalize_token("..."), "");
}

TEST(Text, Fnv1aPublishedVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Text, SanitizeKeepsValidUtf8) {
  std::string s = "caf\xc3\xa9 \xe2\x82\xac \xf0\x9f\x98\x80";
  auto r = sanitize_utf8(s);
  EXPECT_EQ(r.text, s);
  EXPECT_EQ(r.replaced, 0u);
}

TEST(Text, SanitizeReplacesEveryInvalidByte) {
  // Lone continuation byte, truncated 3-byte sequence, overlong encoding.
  auto r = sanitize_utf8(std::string("a\x80" "b\xe2\x82" "c\xc0\xaf", 8));
  EXPECT_EQ(r.replaced, 5u);
  EXPECT_EQ(r.text, "a\xef\xbf\xbd" "b\xef\xbf\xbd\xef\xbf\xbd" "c\xef\xbf\xbd\xef\xbf\xbd");
}

TEST(Text, CodepointOffsetsAndSlice) {
  std::string s = "a\xc3\xa9z";  // a, e-acute, z
  auto off = codepoint_offsets(s);
  ASSERT_EQ(off.size(), 4u);
  EXPECT_EQ(off[1], 1u);
  EXPECT_EQ(off[2], 3u);
  EXPECT_EQ(off[3], 4u);
  EXPECT_EQ(utf8_slice(s, 1, 2), "\xc3\xa9");
  EXPECT_EQ(utf8_slice(s, 0, 3), s);
}

TEST(Text, TrimAndJoin) {
  EXPECT_EQ(trim("  x y \n"), "x y");
  EXPECT_EQ(trim(" \t"), "");
  EXPECT_EQ(join({"a", "b", "c"}, ", "), "a, b, c");
  EXPECT_EQ(join({}, ","), "");
}
