#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "hbkmr/data.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hbkmr_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::string write_file(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Standardized-looking random dataset with n rows, m exposures and p numeric covariates.
inline hbkmr::Dataset random_dataset(int n, int m, int p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  hbkmr::Dataset d;
  d.y.resize(n);
  d.Z.resize(n, m);
  d.X.resize(n, p);
  for (int i = 0; i < n; ++i) {
    d.y(i) = normal(rng);
    for (int k = 0; k < m; ++k) d.Z(i, k) = normal(rng);
    for (int k = 0; k < p; ++k) d.X(i, k) = normal(rng);
  }
  for (int k = 0; k < m; ++k) d.z_names.push_back("z" + std::to_string(k + 1));
  for (int k = 0; k < p; ++k) d.x_names.push_back("x" + std::to_string(k + 1));
  d.outcome_name = "y";
  return d;
}

}  // namespace testutil
