#include "rcg/ingest.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <system_error>

#include "rcg/errors.hpp"
#include "rcg/text.hpp"

namespace fs = std::filesystem;

namespace rcg::ingest {

void SplitterConfig::validate() const {
  if (chunk_len == 0) throw ConfigError("chunk_len must be positive");
  if (overlap >= chunk_len) {
    throw ConfigError("overlap (" + std::to_string(overlap) +
                      ") must be smaller than chunk_len (" +
                      std::to_string(chunk_len) + ")");
  }
}

std::string_view to_string(SplitUnit unit) {
  return unit == SplitUnit::word ? "word" : "character";
}

SplitUnit split_unit_from_string(std::string_view s) {
  if (s == "word") return SplitUnit::word;
  if (s == "character" || s == "char") return SplitUnit::character;
  throw ConfigError("unknown split unit: " + std::string(s));
}

namespace {

std::string normalize_extension(std::string_view ext) {
  if (!ext.empty() && ext.front() == '.') ext.remove_prefix(1);
  return text::to_lower_ascii(ext);
}

std::string doc_id_for(const fs::path& relative) {
  std::string id = relative.generic_string();
  std::string out;
  out.reserve(id.size());
  for (char c : id) {
    if (c == '/') {
      out += "__";
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<SourceFile> discover(const std::vector<fs::path>& paths,
                                 const std::vector<std::string>& extensions) {
  std::set<std::string, std::less<>> wanted;
  for (const auto& e : extensions) wanted.insert(normalize_extension(e));
  auto accepted = [&](const fs::path& p) {
    return wanted.count(normalize_extension(p.extension().string())) > 0;
  };

  std::vector<SourceFile> found;
  for (const auto& root : paths) {
    std::error_code ec;
    auto status = fs::status(root, ec);
    if (ec || !fs::exists(status)) {
      throw IngestError("input path does not exist: " + root.string());
    }
    if (fs::is_directory(status)) {
      for (auto it = fs::recursive_directory_iterator(root, ec);
           it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) throw IngestError("cannot read directory " + root.string() +
                                  ": " + ec.message());
        if (!it->is_regular_file() || !accepted(it->path())) continue;
        found.push_back({it->path(), doc_id_for(it->path().lexically_relative(root))});
      }
    } else if (accepted(root)) {
      found.push_back({root, doc_id_for(root.filename())});
    }
  }

  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    return a.path.generic_string() < b.path.generic_string();
  });
  found.erase(std::unique(found.begin(), found.end(),
                          [](const auto& a, const auto& b) {
                            return a.path == b.path;
                          }),
              found.end());

  std::set<std::string, std::less<>> ids;
  for (const auto& f : found) {
    if (!ids.insert(f.doc_id).second) {
      throw IngestError("duplicate document id '" + f.doc_id + "' (from " +
                        f.path.string() + ")");
    }
  }
  return found;
}

std::string join_csv_rows(std::string_view csv) {
  std::vector<std::string> rows;
  std::size_t i = 0;
  while (i < csv.size()) {
    auto nl = csv.find('\n', i);
    auto end = nl == std::string_view::npos ? csv.size() : nl;
    auto row = csv.substr(i, end - i);
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    rows.emplace_back(row);
    i = nl == std::string_view::npos ? csv.size() : nl + 1;
  }
  return text::join(rows, "\n");
}

LoaderRegistry LoaderRegistry::with_builtins() {
  LoaderRegistry r;
  auto pass_through = [](std::string_view raw) { return std::string(raw); };
  r.register_loader("txt", pass_through);
  r.register_loader("text", pass_through);
  r.register_loader("md", pass_through);
  r.register_loader("markdown", pass_through);
  r.register_loader("csv", join_csv_rows);
  r.register_loader("html", strip_html);
  r.register_loader("htm", strip_html);
  return r;
}

void LoaderRegistry::register_loader(std::string extension, Loader loader) {
  loaders_[normalize_extension(extension)] = std::move(loader);
}

const Loader* LoaderRegistry::find(std::string_view extension) const {
  auto it = loaders_.find(normalize_extension(extension));
  return it == loaders_.end() ? nullptr : &it->second;
}

std::vector<std::string> LoaderRegistry::extensions() const {
  std::vector<std::string> out;
  for (const auto& [ext, _] : loaders_) out.push_back(ext);
  return out;
}

DocumentStream::DocumentStream(std::vector<SourceFile> files,
                               LoaderRegistry loaders)
    : files_(std::move(files)), loaders_(std::move(loaders)) {}

std::optional<Document> DocumentStream::next() {
  while (cursor_ < files_.size()) {
    const SourceFile& f = files_[cursor_++];
    const Loader* loader = loaders_.find(f.path.extension().string());
    if (!loader) {
      failures_.push_back({f.path.string(), "no loader for extension"});
      continue;
    }
    std::ifstream in(f.path, std::ios::binary);
    if (!in) {
      failures_.push_back({f.path.string(), "cannot open file"});
      continue;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
      failures_.push_back({f.path.string(), "read error"});
      continue;
    }
    auto repaired = text::sanitize_utf8(buf.str());
    Document doc;
    doc.doc_id = f.doc_id;
    doc.source_path = f.path.generic_string();
    doc.replaced_bytes = repaired.replaced;
    try {
      doc.text = (*loader)(repaired.text);
    } catch (const std::exception& e) {
      failures_.push_back({f.path.string(), e.what()});
      continue;
    }
    replaced_bytes_ += repaired.replaced;
    return doc;
  }
  return std::nullopt;
}

namespace {

Passage make_passage(const Document& doc, std::size_t ordinal,
                     const std::vector<std::size_t>& cp, std::size_t start,
                     std::size_t end) {
  Passage p;
  p.passage_id = doc.doc_id + "#" + std::to_string(ordinal);
  p.doc_id = doc.doc_id;
  p.ordinal = ordinal;
  p.char_start = start;
  p.char_end = end;
  p.text = doc.text.substr(cp[start], cp[end] - cp[start]);
  return p;
}

}  // namespace

std::vector<Passage> split(const Document& doc, const SplitterConfig& cfg) {
  cfg.validate();
  std::vector<Passage> out;
  if (doc.text.empty()) return out;

  const auto cp = text::codepoint_offsets(doc.text);
  const std::size_t total = cp.size() - 1;
  const std::size_t stride = cfg.chunk_len - cfg.overlap;

  if (cfg.unit == SplitUnit::character) {
    for (std::size_t start = 0;; start += stride) {
      std::size_t end = std::min(start + cfg.chunk_len, total);
      out.push_back(make_passage(doc, out.size(), cp, start, end));
      if (end == total) break;
    }
    return out;
  }

  // Code point index where each word starts.
  std::vector<std::size_t> word_starts;
  bool prev_space = true;
  for (std::size_t i = 0; i < total; ++i) {
    bool space = cp[i + 1] - cp[i] == 1 && text::is_space(doc.text[cp[i]]);
    if (!space && prev_space) word_starts.push_back(i);
    prev_space = space;
  }
  const std::size_t words = word_starts.size();
  if (words == 0) return out;

  for (std::size_t first = 0;; first += stride) {
    std::size_t last = first + cfg.chunk_len;  // exclusive word index
    std::size_t start = first == 0 ? 0 : word_starts[first];
    std::size_t end = last < words ? word_starts[last] : total;
    out.push_back(make_passage(doc, out.size(), cp, start, end));
    if (last >= words) break;
  }
  return out;
}

nlohmann::ordered_json to_json(const Passage& p) {
  nlohmann::ordered_json j;
  j["passage_id"] = p.passage_id;
  j["doc_id"] = p.doc_id;
  j["ordinal"] = p.ordinal;
  j["char_start"] = p.char_start;
  j["char_end"] = p.char_end;
  j["text"] = p.text;
  return j;
}

Passage passage_from_json(const nlohmann::json& j) {
  Passage p;
  p.passage_id = j.at("passage_id").get<std::string>();
  p.doc_id = j.at("doc_id").get<std::string>();
  p.ordinal = j.at("ordinal").get<std::size_t>();
  p.char_start = j.at("char_start").get<std::size_t>();
  p.char_end = j.at("char_end").get<std::size_t>();
  p.text = j.at("text").get<std::string>();
  return p;
}

StoreStats build_passage_store(DocumentStream& docs, const SplitterConfig& cfg,
                               const fs::path& out) {
  cfg.validate();
  fs::path partial = out;
  partial += ".partial";
  StoreStats stats;
  try {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream os(partial, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestError("cannot open " + partial.string());
    while (auto doc = docs.next()) {
      auto passages = split(*doc, cfg);
      stats.max_resident_passages =
          std::max(stats.max_resident_passages, passages.size());
      for (const auto& p : passages) {
        os << to_json(p).dump(-1, ' ', false,
                              nlohmann::json::error_handler_t::replace)
           << '\n';
      }
      if (!os) throw IngestError("write failed: " + partial.string());
      ++stats.documents;
      stats.passages += passages.size();
    }
    os.close();
    if (!os) throw IngestError("write failed: " + partial.string());
    fs::rename(partial, out);
  } catch (...) {
    std::error_code ec;
    fs::remove(partial, ec);
    try {
      throw;
    } catch (const fs::filesystem_error& e) {
      throw IngestError(std::string("passage store: ") + e.what());
    }
  }
  return stats;
}

PassageReader::PassageReader(const fs::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IngestError("cannot open passage store " + path.string());
}

std::optional<Passage> PassageReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    try {
      return passage_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(path_.string() + ":" + std::to_string(line_no_) +
                        ": malformed passage record: " + e.what());
    }
  }
  return std::nullopt;
}

std::vector<Passage> read_passage_store(const fs::path& path) {
  PassageReader reader(path);
  std::vector<Passage> out;
  while (auto p = reader.next()) out.push_back(std::move(*p));
  return out;
}

}  // namespace rcg::ingest
