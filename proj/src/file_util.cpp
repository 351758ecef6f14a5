#include "rcg/file_util.hpp"

#include <fstream>
#include <sstream>

#include "rcg/errors.hpp"

namespace rcg::fsutil {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error("read failed: " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto partial = path;
  partial += ".partial";
  std::error_code ec;
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (out) out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (out) out.close();
    if (!out) {
      std::filesystem::remove(partial, ec);
      throw Error("cannot write " + partial.string());
    }
  }
  std::filesystem::rename(partial, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(partial, ignored);
    throw Error("cannot replace " + path.string() + ": " + ec.message());
  }
}

}  // namespace rcg::fsutil
