#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "mitoclass/dataset.hpp"

namespace mitoclass::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mitoclass_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline DomainMeta test_domain(const std::string& tumor = "lymphoma", Species sp = Species::canine) {
  return {tumor, sp, "Aperio_CS2", "VMU"};
}

constexpr ClassLabel A = ClassLabel::AMF;
constexpr ClassLabel N = ClassLabel::NMF;

}  // namespace mitoclass::testing
