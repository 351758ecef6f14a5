#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>

#include "rcg/ingest.hpp"
#include "rcg/text.hpp"

namespace rcg::ingest {
namespace {

constexpr std::array<std::string_view, 28> kBlockTags = {
    "address", "article", "aside", "blockquote", "br",    "dd",    "div",
    "dl",      "dt",      "footer", "h1",        "h2",    "h3",    "h4",
    "h5",      "h6",      "header", "hr",        "li",    "main",  "nav",
    "ol",      "p",       "pre",    "section",   "table", "tr",    "ul"};

bool is_block_tag(std::string_view name) {
  for (auto t : kBlockTags) {
    if (t == name) return true;
  }
  return false;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Decodes the entity starting at html[i] == '&'. Returns the number of bytes
// consumed, 0 if not a recognized entity.
std::size_t decode_entity(std::string_view html, std::size_t i,
                          std::string& out) {
  auto semi = html.find(';', i);
  if (semi == std::string_view::npos || semi - i > 10) return 0;
  auto name = html.substr(i + 1, semi - i - 1);
  if (name.empty()) return 0;
  if (name[0] == '#') {
    std::uint32_t cp = 0;
    bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
    auto digits = name.substr(hex ? 2 : 1);
    if (digits.empty()) return 0;
    for (char c : digits) {
      int v;
      if (c >= '0' && c <= '9') {
        v = c - '0';
      } else if (hex && c >= 'a' && c <= 'f') {
        v = c - 'a' + 10;
      } else if (hex && c >= 'A' && c <= 'F') {
        v = c - 'A' + 10;
      } else {
        return 0;
      }
      cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(v);
      if (cp > 0x10FFFF) return 0;
    }
    append_utf8(out, cp);
    return semi - i + 1;
  }
  static constexpr std::pair<std::string_view, std::string_view> kNamed[] = {
      {"amp", "&"},   {"lt", "<"},          {"gt", ">"},
      {"quot", "\""}, {"apos", "'"},        {"nbsp", " "},
      {"copy", "\xC2\xA9"}, {"reg", "\xC2\xAE"}, {"mdash", "\xE2\x80\x94"},
      {"ndash", "\xE2\x80\x93"}, {"hellip", "\xE2\x80\xA6"}};
  for (const auto& [n, v] : kNamed) {
    if (n == name) {
      out += v;
      return semi - i + 1;
    }
  }
  return 0;
}

std::string collapse_whitespace(std::string_view raw) {
  std::string out;
  std::string line;
  auto flush = [&] {
    auto t = text::trim(line);
    if (!t.empty()) {
      if (!out.empty()) out += '\n';
      out += t;
    }
    line.clear();
  };
  bool pending_space = false;
  for (char c : raw) {
    if (c == '\n') {
      flush();
      pending_space = false;
    } else if (text::is_space(c)) {
      pending_space = true;
    } else {
      if (pending_space && !line.empty()) line += ' ';
      pending_space = false;
      line += c;
    }
  }
  flush();
  return out;
}

}  // namespace

std::string strip_html(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  std::size_t i = 0;
  while (i < html.size()) {
    char c = html[i];
    if (c == '&') {
      std::size_t used = decode_entity(html, i, out);
      if (used == 0) {
        out += '&';
        ++i;
      } else {
        i += used;
      }
      continue;
    }
    if (c != '<') {
      out += c;
      ++i;
      continue;
    }
    if (html.substr(i, 4) == "<!--") {
      auto end = html.find("-->", i + 4);
      i = end == std::string_view::npos ? html.size() : end + 3;
      continue;
    }
    // Tag: read name, then skip to the closing '>' honoring quotes.
    std::size_t j = i + 1;
    bool closing = j < html.size() && html[j] == '/';
    if (closing) ++j;
    std::size_t name_start = j;
    while (j < html.size() &&
           (std::isalnum(static_cast<unsigned char>(html[j])) || html[j] == '-'))
      ++j;
    if (j == name_start && !closing && (j >= html.size() || html[j] != '!')) {
      out += '<';  // a bare '<' in text
      ++i;
      continue;
    }
    std::string name = text::to_lower_ascii(html.substr(name_start, j - name_start));
    char quote = 0;
    while (j < html.size()) {
      char d = html[j];
      if (quote) {
        if (d == quote) quote = 0;
      } else if (d == '"' || d == '\'') {
        quote = d;
      } else if (d == '>') {
        break;
      }
      ++j;
    }
    i = j < html.size() ? j + 1 : html.size();
    if (!closing && (name == "script" || name == "style")) {
      std::string close = "</" + name;
      std::size_t k = i;
      while (true) {
        k = html.find("</", k);
        if (k == std::string_view::npos) break;
        if (text::to_lower_ascii(html.substr(k, close.size())) == close) break;
        k += 2;
      }
      if (k == std::string_view::npos) {
        i = html.size();
      } else {
        auto gt = html.find('>', k);
        i = gt == std::string_view::npos ? html.size() : gt + 1;
      }
      continue;
    }
    if (is_block_tag(name)) out += '\n';
  }
  return collapse_whitespace(out);
}

}  // namespace rcg::ingest
