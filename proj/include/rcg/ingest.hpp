#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// Document loading and passage splitting. Documents are streamed one at a
// time so a corpus never has to fit in memory; only the current document
// and its passages are resident.
namespace rcg::ingest {

enum class SplitUnit { word, character };

struct SplitterConfig {
  std::size_t chunk_len = 128;  // split units per passage
  std::size_t overlap = 16;     // units shared by consecutive passages
  SplitUnit unit = SplitUnit::word;

  // Throws ConfigError unless chunk_len > 0 and overlap < chunk_len.
  void validate() const;
};

std::string_view to_string(SplitUnit unit);
SplitUnit split_unit_from_string(std::string_view s);

struct Document {
  std::string doc_id;
  std::string source_path;
  std::string text;
  std::size_t replaced_bytes = 0;  // invalid UTF-8 bytes replaced on load
};

// Offsets are code point offsets into Document::text, half-open.
struct Passage {
  std::string passage_id;
  std::string doc_id;
  std::size_t ordinal = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string text;

  bool operator==(const Passage&) const = default;
};

struct SourceFile {
  std::filesystem::path path;
  std::string doc_id;
};

// Expands files and directories (recursively) into the files whose extension
// is listed, sorted lexicographically by path. Extensions are matched
// case-insensitively, with or without a leading dot. doc_id is the path
// relative to the directory argument (or the file name for file arguments)
// with separators replaced by "__".
std::vector<SourceFile> discover(const std::vector<std::filesystem::path>& paths,
                                 const std::vector<std::string>& extensions);

// Converts raw (UTF-8 repaired) file contents to document text.
using Loader = std::function<std::string(std::string_view raw)>;

class LoaderRegistry {
 public:
  // Registry with txt/text, md/markdown, csv, html/htm.
  static LoaderRegistry with_builtins();

  void register_loader(std::string extension, Loader loader);
  const Loader* find(std::string_view extension) const;
  std::vector<std::string> extensions() const;

 private:
  std::map<std::string, Loader, std::less<>> loaders_;
};

// Tags removed, block-level tags become line breaks, entities decoded,
// script/style contents dropped, whitespace collapsed per line.
std::string strip_html(std::string_view html);

// CSV rows joined by "\n" (CRLF normalized, trailing newline dropped).
std::string join_csv_rows(std::string_view csv);

struct LoadFailure {
  std::string path;
  std::string reason;
};

// Yields documents one at a time. Unreadable files are recorded in
// failures() and skipped.
class DocumentStream {
 public:
  DocumentStream(std::vector<SourceFile> files, LoaderRegistry loaders);

  std::optional<Document> next();

  const std::vector<LoadFailure>& failures() const { return failures_; }
  std::size_t replaced_bytes() const { return replaced_bytes_; }

 private:
  std::vector<SourceFile> files_;
  LoaderRegistry loaders_;
  std::size_t cursor_ = 0;
  std::vector<LoadFailure> failures_;
  std::size_t replaced_bytes_ = 0;
};

// Splits into passages of chunk_len units with stride chunk_len - overlap.
// Passages never cross documents. In word mode the first passage starts at
// offset 0 and each passage extends up to the first word of the passage
// that would follow it, so whitespace is kept and overlap=0 passages tile
// the document exactly.
std::vector<Passage> split(const Document& doc, const SplitterConfig& cfg);

struct StoreStats {
  std::size_t documents = 0;
  std::size_t passages = 0;
  std::size_t max_resident_passages = 0;
};

// Writes one JSON line per passage in (document, ordinal) order. The file
// is written under "<out>.partial" and renamed on success; on failure the
// partial file is removed and IngestError is thrown.
StoreStats build_passage_store(DocumentStream& docs, const SplitterConfig& cfg,
                               const std::filesystem::path& out);

nlohmann::ordered_json to_json(const Passage& p);
Passage passage_from_json(const nlohmann::json& j);

// Streaming reader over a passage store file.
class PassageReader {
 public:
  explicit PassageReader(const std::filesystem::path& path);
  std::optional<Passage> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

std::vector<Passage> read_passage_store(const std::filesystem::path& path);

}  // namespace rcg::ingest
