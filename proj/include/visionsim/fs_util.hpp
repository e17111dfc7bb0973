#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace visionsim {

/// True when `name` can be used as a single directory or file name.
bool is_valid_path_component(std::string_view name);

/// Creates `parent/stem`, or `parent/stem_N` with the smallest free N >= 1.
std::filesystem::path create_unique_directory(const std::filesystem::path& parent,
                                              const std::string& stem);

/// Exclusively creates an empty `dir/stem.ext` (or `stem_N.ext`) and returns
/// its path. Existing files are never touched.
std::filesystem::path reserve_unique_file(const std::filesystem::path& dir, const std::string& stem,
                                          const std::string& extension);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value);

/// UTC, ISO 8601 with milliseconds.
std::string iso_timestamp_now();

}  // namespace visionsim
