#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Small text helpers shared by every module. All tokenization in the engine
// is whitespace tokenization over ASCII whitespace.
namespace rcg::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::vector<std::string_view> split_whitespace(std::string_view s);
std::size_t count_whitespace_tokens(std::string_view s);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

// Lower-cases ASCII letters and strips ASCII punctuation from both ends.
// May return an empty string for punctuation-only tokens.
std::string normalize_token(std::string_view token);

struct Utf8Repair {
  std::string text;
  std::size_t replaced = 0;  // invalid bytes replaced with U+FFFD
};

// Replaces every byte that does not start a well-formed UTF-8 sequence with
// U+FFFD. Well-formed input is returned unchanged.
Utf8Repair sanitize_utf8(std::string_view bytes);

// Byte offset of every code point in a valid UTF-8 string, followed by
// s.size(). Size is codepoint_count + 1.
std::vector<std::size_t> codepoint_offsets(std::string_view s);

// Substring of a valid UTF-8 string in code point coordinates [start, end).
std::string utf8_slice(std::string_view s, std::size_t start, std::size_t end);

// 64-bit FNV-1a. Stable across platforms; used for test-embedder buckets.
std::uint64_t fnv1a(std::string_view s,
                    std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace rcg::text
