#pragma once

#include <filesystem>
#include <string>

namespace c2bm {

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames it over `path`, so readers
/// never observe a half-written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace c2bm
