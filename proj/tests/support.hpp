#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "inrn/autodiff.hpp"
#include "inrn/random.hpp"

namespace testing {

inline std::filesystem::path data_dir() {
  const char* env = std::getenv("INRN_DATA");
  return env ? std::filesystem::path(env) : std::filesystem::path(INRN_SOURCE_DIR) / "data";
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("inrn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline inrn::Tensor uniform(const inrn::Shape& shape, inrn::Rng& rng, double lo = -2.0, double hi = 2.0) {
  inrn::Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const inrn::Tensor& a, const inrn::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testing
