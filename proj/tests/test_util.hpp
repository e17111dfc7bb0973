#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <sys/wait.h>

#include "visionsim/error.hpp"

namespace testutil {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "visionsim-XXXXXX").string();
    if (mkdtemp(pattern.data()) == nullptr) throw visionsim::IoError("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return VISIONSIM_DATA_DIR; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

#ifdef VISIONSIM_CLI
struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI with `args` (already shell-quoted) inside `cwd`.
inline CliResult run_cli(const std::string& args, const std::filesystem::path& cwd,
                         const std::string& env = {}) {
  const auto out = cwd / "cli.out";
  const auto err = cwd / "cli.err";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + (env.empty() ? "" : " ") + "'" +
                          VISIONSIM_CLI + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int raw = std::system(cmd.c_str());
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}
#endif

}  // namespace testutil
