#pragma once

// Shared fixtures for the unit suites.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "csst/dataset.hpp"
#include "csst/model.hpp"
#include "csst/rng.hpp"

namespace csst::testing {

inline BenchmarkConfig small_config(std::uint64_t seed = 0, std::size_t n_train = 200, std::size_t n_test = 100) {
  BenchmarkConfig c;
  c.n_train = n_train;
  c.n_test = n_test;
  c.seed = seed;
  return c;
}

// Fresh directory under the system temp dir, removed first if present.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("csst_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Model sized for a generated benchmark.
inline ModelParams model_for(const Benchmark& b, std::uint64_t seed, FusionMode fusion = FusionMode::kNone,
                             std::size_t hidden = 16, std::size_t embed = 8) {
  const ModelDims dims =
      dims_for(b.vocab, b.train.front().objects.front().vector.size(), b.train.front().question_tokens.size(),
               hidden, embed);
  return ModelParams::init(dims, fusion, seed);
}

}  // namespace csst::testing
