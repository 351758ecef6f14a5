#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace rcg::fsutil {

// Throws Error when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

// Writes "<path>.partial" and renames it over path. On failure the partial
// file is removed, path is untouched, and Error is thrown.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace rcg::fsutil
