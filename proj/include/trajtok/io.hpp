#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace trajtok {

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string_view> split_view(std::string_view s, char sep);

}  // namespace trajtok
