#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rcg/index.hpp"

static_assert(std::endian::native == std::endian::little,
              "index files are written in native little-endian order");

namespace rcg::index {
namespace {

constexpr char kMagic[4] = {'R', 'C', 'G', 'X'};

// Upper bounds that keep a corrupted header from triggering huge allocations
// before the truncation check can fire.
constexpr std::uint32_t kMaxParamsLen = 1 << 16;
constexpr std::uint32_t kMaxNameLen = 1 << 16;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_bytes(std::ostream& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    T v;
    read(reinterpret_cast<char*>(&v), sizeof(T), what);
    return v;
  }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw IndexFileError(IndexErrc::truncated,
                           std::string("index file truncated while reading ") + what);
    }
  }

 private:
  std::istream& in_;
};

std::string hnsw_params_blob(const HnswIndex& h) {
  std::ostringstream os(std::ios::binary);
  put<std::uint32_t>(os, h.params().M);
  put<std::uint32_t>(os, h.max_degree(0));
  put<std::uint32_t>(os, h.params().ef_construction);
  put<std::uint32_t>(os, h.params().ef_search);
  put<double>(os, h.level_mult());
  put<std::uint64_t>(os, h.params().seed);
  put<std::int32_t>(os, h.max_level());
  put<std::uint64_t>(os, h.entry_point());
  return os.str();
}

}  // namespace

void write_index(const VectorIndex& index, std::ostream& out) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kIndexFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(index.kind()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(index.dim()));
  put<std::uint64_t>(out, index.size());

  const auto* hnsw = dynamic_cast<const HnswIndex*>(&index);
  put_bytes(out, hnsw ? hnsw_params_blob(*hnsw) : std::string());
  put_bytes(out, index.model_name());

  const auto& data = index.matrix().data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));

  if (hnsw) {
    for (std::uint32_t node = 0; node < index.size(); ++node) {
      int levels = hnsw->node_level(node) + 1;
      put<std::uint32_t>(out, static_cast<std::uint32_t>(levels));
      for (int l = 0; l < levels; ++l) {
        const auto& nbrs = hnsw->neighbors(node, l);
        put<std::uint64_t>(out, nbrs.size());
        for (auto id : nbrs) put<std::uint64_t>(out, id);
      }
    }
  }
}

std::unique_ptr<VectorIndex> read_index(std::istream& in,
                                        std::optional<std::string_view> expected_model) {
  Reader r(in);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IndexFileError(IndexErrc::format, "not an index file (bad magic)");
  }
  auto version = r.get<std::uint32_t>("version");
  if (version != kIndexFormatVersion) {
    throw IndexFileError(IndexErrc::version,
                         "unsupported index format version " + std::to_string(version) +
                             " (expected " + std::to_string(kIndexFormatVersion) + ")");
  }
  auto kind = static_cast<IndexKind>(r.get<std::uint8_t>("kind"));
  if (kind != IndexKind::flat && kind != IndexKind::hnsw) {
    throw IndexFileError(IndexErrc::format,
                         "unsupported index kind tag " +
                             std::to_string(static_cast<int>(kind)));
  }
  auto dim = r.get<std::uint32_t>("dim");
  auto count = r.get<std::uint64_t>("count");
  if (dim == 0) throw IndexFileError(IndexErrc::format, "index dim is zero");

  auto params_len = r.get<std::uint32_t>("params length");
  if (params_len > kMaxParamsLen) {
    throw IndexFileError(IndexErrc::format, "index params block too large");
  }
  std::string params(params_len, '\0');
  r.read(params.data(), params_len, "params");

  auto name_len = r.get<std::uint32_t>("model name length");
  if (name_len > kMaxNameLen) {
    throw IndexFileError(IndexErrc::format, "index model name too long");
  }
  std::string model(name_len, '\0');
  r.read(model.data(), name_len, "model name");
  if (expected_model && *expected_model != model) {
    throw IndexFileError(IndexErrc::fingerprint,
                         "index was built with embedder '" + model +
                             "' but the configured embedder is '" +
                             std::string(*expected_model) + "'");
  }

  embed::EmbeddingMatrix matrix(dim);
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    r.read(reinterpret_cast<char*>(row.data()), dim * sizeof(float), "vectors");
    matrix.append(row);
  }

  if (kind == IndexKind::flat) {
    if (params_len != 0) {
      throw IndexFileError(IndexErrc::format, "flat index carries hnsw params");
    }
    return std::make_unique<FlatIndex>(std::move(matrix), std::move(model));
  }

  std::istringstream ps(params, std::ios::binary);
  Reader pr(ps);
  HnswParams hp;
  HnswIndex::Graph graph;
  try {
    hp.M = pr.get<std::uint32_t>("M");
    auto m0 = pr.get<std::uint32_t>("M0");
    hp.ef_construction = pr.get<std::uint32_t>("ef_construction");
    hp.ef_search = pr.get<std::uint32_t>("ef_search");
    pr.get<double>("level_mult");
    hp.seed = pr.get<std::uint64_t>("seed");
    graph.max_level = pr.get<std::int32_t>("max_level");
    auto entry = pr.get<std::uint64_t>("entry_point");
    hp.validate();
    if (m0 != 2 * hp.M) throw IndexFileError(IndexErrc::format, "hnsw M0 != 2M");
    if ((count == 0) != (graph.max_level < 0) || (count > 0 && entry >= count)) {
      throw IndexFileError(IndexErrc::format, "hnsw entry point out of range");
    }
    graph.entry = static_cast<std::uint32_t>(entry);
  } catch (const IndexFileError& e) {
    if (e.code() == IndexErrc::truncated) {
      throw IndexFileError(IndexErrc::format, "hnsw params block too short");
    }
    throw;
  } catch (const ConfigError& e) {
    throw IndexFileError(IndexErrc::format, std::string("bad hnsw params: ") + e.what());
  }

  graph.links.resize(count);
  for (std::uint64_t node = 0; node < count; ++node) {
    auto levels = r.get<std::uint32_t>("level count");
    if (levels == 0 || static_cast<int>(levels) - 1 > graph.max_level) {
      throw IndexFileError(IndexErrc::format, "hnsw node level out of range");
    }
    graph.links[node].resize(levels);
    for (std::uint32_t l = 0; l < levels; ++l) {
      auto len = r.get<std::uint64_t>("adjacency length");
      std::uint64_t cap = l == 0 ? 2ULL * hp.M : hp.M;
      if (len > cap) throw IndexFileError(IndexErrc::format, "hnsw degree exceeds bound");
      auto& nbrs = graph.links[node][l];
      nbrs.reserve(len);
      for (std::uint64_t j = 0; j < len; ++j) {
        auto id = r.get<std::uint64_t>("adjacency");
        if (id >= count) throw IndexFileError(IndexErrc::format, "hnsw edge out of range");
        nbrs.push_back(static_cast<std::uint32_t>(id));
      }
    }
  }
  if (count > 0 && static_cast<int>(graph.links[graph.entry].size()) - 1 != graph.max_level) {
    throw IndexFileError(IndexErrc::format, "hnsw entry point is not on the top level");
  }
  return std::make_unique<HnswIndex>(std::move(matrix), hp, std::move(model),
                                     std::move(graph));
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw IndexFileError(IndexErrc::io, "cannot open " + partial.string());
    write_index(index, out);
    out.close();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(partial, ec);
      throw IndexFileError(IndexErrc::io, "write failed: " + partial.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(partial, path, ec);
  if (ec) throw IndexFileError(IndexErrc::io, "cannot rename to " + path.string());
}

std::unique_ptr<VectorIndex> load_index(const std::filesystem::path& path,
                                        std::optional<std::string_view> expected_model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IndexFileError(IndexErrc::io, "cannot open index " + path.string());
  return read_index(in, expected_model);
}

}  // namespace rcg::index
