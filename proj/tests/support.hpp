#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "pathsyn/types.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("pathsyn_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
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

// Image of 8-bit representable random intensities.
inline pathsyn::GrayImage random_image(std::mt19937_64& rng, int h, int w, std::string id = "img") {
  std::uniform_int_distribution<int> level(0, 255);
  pathsyn::GrayImage img(std::move(id), h, w);
  for (auto& v : img.pixels()) v = level(rng) / 255.0;
  return img;
}

}  // namespace testing
