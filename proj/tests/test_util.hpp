#pragma once

#include "infoplane/datasets.hpp"
#include "infoplane/matrix.hpp"
#include "infoplane/rng.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace infoplane::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  const char* base = std::getenv("INFOPLANE_TEST_TMP");
  std::filesystem::path dir = base ? base : std::filesystem::temp_directory_path() / "infoplane_tests";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Small random directed graph with every class in the training mask.
inline GraphDataset random_graph_dataset(std::uint64_t seed, std::int64_t n = 12, std::int64_t d = 5,
                                         std::int32_t classes = 3, double p_edge = 0.25) {
  Rng rng(seed);
  GraphDataset ds;
  ds.name = "random";
  ds.num_classes = classes;
  ds.features = random_matrix(rng, n, d);
  for (std::int64_t i = 0; i < n; ++i) ds.labels.push_back(std::int32_t(i % classes));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      if (i != j && rng.bernoulli(p_edge)) ds.add_edge(i, j);
  ds.train_mask.assign(std::size_t(n), 1);
  ds.val_mask.assign(std::size_t(n), 0);
  ds.test_mask.assign(std::size_t(n), 0);
  return ds;
}

}  // namespace infoplane::testing
