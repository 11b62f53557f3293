#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace banforge {

// Atomic whole-file write: writes <path>.tmp then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t len);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

} // namespace banforge
