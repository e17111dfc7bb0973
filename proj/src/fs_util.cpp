#include "visionsim/fs_util.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "visionsim/error.hpp"

namespace visionsim {

namespace fs = std::filesystem;

bool is_valid_path_component(std::string_view name) {
  if (name.empty() || name == "." || name == "..") return false;
  for (char c : name) {
    if (c == '/' || c == '\\' || c == '\0' || c == ':' || static_cast<unsigned char>(c) < 0x20) {
      return false;
    }
  }
  return true;
}

fs::path create_unique_directory(const fs::path& parent, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
  for (std::size_t n = 0;; ++n) {
    const fs::path candidate = parent / (n == 0 ? stem : stem + "_" + std::to_string(n));
    if (fs::create_directory(candidate, ec)) return candidate;
    if (ec) throw IoError("cannot create " + candidate.string() + ": " + ec.message());
  }
}

fs::path reserve_unique_file(const fs::path& dir, const std::string& stem,
                             const std::string& extension) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t n = 0;; ++n) {
    const fs::path candidate =
        dir / ((n == 0 ? stem : stem + "_" + std::to_string(n)) + extension);
    if (std::FILE* f = std::fopen(candidate.c_str(), "wx")) {
      std::fclose(f);
      return candidate;
    }
    if (!fs::exists(candidate)) throw IoError("cannot create " + candidate.string());
  }
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    if (!fs::exists(path)) throw NotFoundError("file not found: " + path.string(), path.string());
    throw IoError("cannot open " + path.string());
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("invalid JSON in " + path.string() + ": " + e.what(), {path.string()});
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& value) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << value.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace visionsim
