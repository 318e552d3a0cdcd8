#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace testutil {

// Fresh temp directory per test binary run, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / ("embed2text-" + tag + "-XXXXXX");
    std::string tmpl = base.string();
    char* created = mkdtemp(tmpl.data());
    if (created == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return path_ + "/" + name; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace testutil
