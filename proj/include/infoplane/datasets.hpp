#pragma once

// Node-classification datasets: Cora-format loader, a generic CSV triple
// loader, a planted-partition generator, and stratified split masks.

#include "infoplane/matrix.hpp"
#include "infoplane/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace infoplane {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  std::int64_t src = 0;
  std::int64_t dst = 0;
  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

using Mask = std::vector<std::uint8_t>;

inline std::size_t mask_count(const Mask& m) { return std::size_t(std::count(m.begin(), m.end(), 1)); }

struct GraphDataset {
  std::string name;
  Matrix features;                   // N x D
  std::vector<std::int32_t> labels;  // length N, in [0, num_classes)
  std::int32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<Edge> edges;           // directed (src, dst)
  std::vector<double> edge_weights;  // parallel to edges
  Mask train_mask, val_mask, test_mask;
  std::vector<std::string> warnings;

  std::int64_t num_nodes() const { return features.rows(); }
  std::int64_t feature_dim() const { return features.cols(); }

  void add_edge(std::int64_t src, std::int64_t dst, double weight = 1.0) {
    edges.push_back({src, dst});
    edge_weights.push_back(weight);
  }
};

inline std::vector<std::string> dataset_findings(const GraphDataset& ds) {
  std::vector<std::string> out;
  const auto n = ds.num_nodes();
  if (std::int64_t(ds.labels.size()) != n) out.emplace_back("labels length != N");
  for (auto y : ds.labels)
    if (y < 0 || y >= ds.num_classes) {
      out.emplace_back("label out of range");
      break;
    }
  if (ds.edge_weights.size() != ds.edges.size()) out.emplace_back("edge_weights length != edge count");
  for (const auto& e : ds.edges)
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      out.push_back("edge endpoint out of range (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ")");
      break;
    }
  const Mask* masks[] = {&ds.train_mask, &ds.val_mask, &ds.test_mask};
  for (const auto* m : masks)
    if (!m->empty() && std::int64_t(m->size()) != n) out.emplace_back("mask length != N");
  if (ds.train_mask.size() == std::size_t(n) && ds.val_mask.size() == std::size_t(n) &&
      ds.test_mask.size() == std::size_t(n)) {
    for (std::int64_t i = 0; i < n; ++i)
      if (ds.train_mask[i] + ds.val_mask[i] + ds.test_mask[i] > 1) {
        out.emplace_back("masks overlap");
        break;
      }
  }
  return out;
}

inline nlohmann::ordered_json dataset_summary(const GraphDataset& ds) {
  nlohmann::ordered_json j;
  j["name"] = ds.name;
  j["N"] = ds.num_nodes();
  j["D"] = ds.feature_dim();
  j["C"] = ds.num_classes;
  j["E"] = ds.edges.size();
  j["train"] = mask_count(ds.train_mask);
  j["val"] = mask_count(ds.val_mask);
  j["test"] = mask_count(ds.test_mask);
  if (!ds.warnings.empty()) j["warnings"] = ds.warnings;
  return j;
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  if (sep == ' ') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw DatasetError("empty file: " + path.string());
  return lines;
}

inline double parse_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  }
}

inline bool looks_numeric(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

// Cora's two-file format. content: "<id> <D feature values> <class name>" per
// row; cites: "<id> <id>" per row, kept as the directed edge (first, second).
// Ids and class names are mapped to integers by first appearance.
inline GraphDataset load_edgelist_dataset(const std::filesystem::path& content_path,
                                          const std::filesystem::path& cites_path) {
  GraphDataset ds;
  ds.name = content_path.stem().string();
  const auto content = detail::read_lines(content_path);
  std::unordered_map<std::string, std::int64_t> node_index;
  std::unordered_map<std::string, std::int32_t> class_index;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  for (std::size_t li = 0; li < content.size(); ++li) {
    auto f = detail::split_fields(content[li], ' ');
    if (f.size() < 3) throw DatasetError(content_path.string() + ":" + std::to_string(li + 1) + ": too few fields");
    const std::size_t d = f.size() - 2;
    if (width == 0) width = d;
    if (d != width)
      throw DatasetError(content_path.string() + ":" + std::to_string(li + 1) + ": inconsistent feature width " +
                         std::to_string(d) + " (expected " + std::to_string(width) + ")");
    if (!node_index.emplace(f.front(), std::int64_t(rows.size())).second)
      throw DatasetError("duplicate node id " + f.front());
    std::vector<double> row(d);
    for (std::size_t k = 0; k < d; ++k) row[k] = detail::parse_double(f[k + 1], content_path, li + 1);
    rows.push_back(std::move(row));
    auto [it, inserted] = class_index.emplace(f.back(), std::int32_t(ds.class_names.size()));
    if (inserted) ds.class_names.push_back(f.back());
    ds.labels.push_back(it->second);
  }
  ds.num_classes = std::int32_t(ds.class_names.size());
  ds.features.resize(std::int64_t(rows.size()), std::int64_t(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < width; ++k) ds.features(std::int64_t(i), std::int64_t(k)) = rows[i][k];

  const auto cites = detail::read_lines(cites_path);
  for (std::size_t li = 0; li < cites.size(); ++li) {
    auto f = detail::split_fields(cites[li], ' ');
    if (f.size() != 2) throw DatasetError(cites_path.string() + ":" + std::to_string(li + 1) + ": expected 2 ids");
    std::int64_t ends[2];
    for (int k = 0; k < 2; ++k) {
      auto it = node_index.find(f[k]);
      if (it == node_index.end())
        throw DatasetError(cites_path.string() + ":" + std::to_string(li + 1) + ": unknown node id " + f[k]);
      ends[k] = it->second;
    }
    ds.add_edge(ends[0], ends[1]);
  }
  return ds;
}

// Generic triple: features.csv (N rows of D numbers), labels.csv (one integer
// per row), edges.csv ("src,dst" or "src,dst,weight", 0-based). A leading
// non-numeric row in any file is treated as a column header.
inline GraphDataset load_csv_dataset(const std::filesystem::path& dir) {
  GraphDataset ds;
  ds.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  auto body = [](const std::filesystem::path& p) {
    auto lines = detail::read_lines(p);
    auto first = detail::split_fields(lines.front(), ',');
    if (!detail::looks_numeric(first.front())) lines.erase(lines.begin());
    return lines;
  };
  const auto fpath = dir / "features.csv";
  const auto feat = body(fpath);
  std::size_t width = 0;
  std::vector<std::vector<double>> rows;
  for (std::size_t li = 0; li < feat.size(); ++li) {
    auto f = detail::split_fields(feat[li], ',');
    if (width == 0) width = f.size();
    if (f.size() != width) throw DatasetError(fpath.string() + ": inconsistent feature width at row " + std::to_string(li));
    std::vector<double> row;
    for (const auto& s : f) row.push_back(detail::parse_double(s, fpath, li + 1));
    rows.push_back(std::move(row));
  }
  const auto n = std::int64_t(rows.size());
  ds.features.resize(n, std::int64_t(width));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < width; ++k) ds.features(i, std::int64_t(k)) = rows[std::size_t(i)][k];

  const auto lpath = dir / "labels.csv";
  for (const auto& line : body(lpath)) {
    const double v = detail::parse_double(detail::split_fields(line, ',').front(), lpath, 0);
    if (v < 0 || v != std::floor(v)) throw DatasetError(lpath.string() + ": labels must be non-negative integers");
    ds.labels.push_back(std::int32_t(v));
  }
  if (std::int64_t(ds.labels.size()) != n)
    throw DatasetError("labels.csv has " + std::to_string(ds.labels.size()) + " rows, features.csv has " + std::to_string(n));
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  for (std::int32_t c = 0; c < ds.num_classes; ++c) ds.class_names.push_back(std::to_string(c));

  const auto epath = dir / "edges.csv";
  for (const auto& line : body(epath)) {
    auto f = detail::split_fields(line, ',');
    if (f.size() < 2) throw DatasetError(epath.string() + ": expected src,dst[,weight]");
    const auto src = std::int64_t(detail::parse_double(f[0], epath, 0));
    const auto dst = std::int64_t(detail::parse_double(f[1], epath, 0));
    if (src < 0 || src >= n) throw DatasetError(epath.string() + ": unknown node id " + f[0]);
    if (dst < 0 || dst >= n) throw DatasetError(epath.string() + ": unknown node id " + f[1]);
    ds.add_edge(src, dst, f.size() > 2 ? detail::parse_double(f[2], epath, 0) : 1.0);
  }
  return ds;
}

// Stratified split. Training nodes are drawn round-robin over classes from a
// seeded shuffle, so every class is represented and per-class counts differ
// by at most one where class sizes allow. Validation and test take the next
// nodes of the shuffled remainder.
inline GraphDataset make_split_masks(GraphDataset ds, std::int64_t n_train, std::int64_t n_val,
                                     std::int64_t n_test, std::uint64_t seed) {
  const auto n = ds.num_nodes();
  if (n_train < 0 || n_val < 0 || n_test < 0 || n_train + n_val + n_test > n)
    throw DatasetError("infeasible split sizes " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                       std::to_string(n_test) + " for N=" + std::to_string(n));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[std::size_t(i)] = i;
  Rng rng(seed);
  rng.shuffle(std::span(order));

  std::vector<std::vector<std::int64_t>> per_class(std::size_t(ds.num_classes));
  for (auto i : order) per_class[std::size_t(ds.labels[std::size_t(i)])].push_back(i);
  std::int64_t present = 0;
  for (const auto& v : per_class) present += !v.empty();
  if (n_train > 0 && n_train < present)
    throw DatasetError("infeasible split: n_train=" + std::to_string(n_train) + " cannot cover " +
                       std::to_string(present) + " classes");

  ds.train_mask.assign(std::size_t(n), 0);
  ds.val_mask.assign(std::size_t(n), 0);
  ds.test_mask.assign(std::size_t(n), 0);
  std::vector<std::size_t> cursor(per_class.size(), 0);
  std::int64_t taken = 0;
  while (taken < n_train) {
    for (std::size_t c = 0; c < per_class.size() && taken < n_train; ++c) {
      if (cursor[c] < per_class[c].size()) {
        ds.train_mask[std::size_t(per_class[c][cursor[c]++])] = 1;
        ++taken;
      }
    }
  }
  std::int64_t val = 0, test = 0;
  for (auto i : order) {
    if (ds.train_mask[std::size_t(i)]) continue;
    if (val < n_val) {
      ds.val_mask[std::size_t(i)] = 1;
      ++val;
    } else if (test < n_test) {
      ds.test_mask[std::size_t(i)] = 1;
      ++test;
    }
  }
  ds.warnings.erase(std::remove_if(ds.warnings.begin(), ds.warnings.end(),
                                   [](const std::string& w) { return w.rfind("split:", 0) == 0; }),
                    ds.warnings.end());
  if (n_val == 0) ds.warnings.emplace_back("split: validation mask is empty");
  if (n_test == 0) ds.warnings.emplace_back("split: test mask is empty");
  return ds;
}

struct PlantedPartitionParams {
  std::int64_t n_per_class = 50;
  std::int32_t num_classes = 2;
  std::int64_t dim = 4;
  double p_intra = 0.2;
  double p_inter = 0.01;
  double feature_noise = 0.5;
  std::uint64_t seed = 0;
};

// Node i has class i / n_per_class. Features are the class indicator e_c plus
// N(0, feature_noise^2) per coordinate; every ordered pair i != j gets a
// directed edge with probability p_intra (same class) or p_inter.
inline GraphDataset synth_planted_partition(const PlantedPartitionParams& p) {
  if (!(0.0 <= p.p_inter && p.p_inter <= p.p_intra && p.p_intra <= 1.0))
    throw DatasetError("invalid probabilities: require 0 <= p_inter <= p_intra <= 1");
  if (p.num_classes < 1 || p.n_per_class < 1) throw DatasetError("need at least one class and one node per class");
  if (p.dim < p.num_classes) throw DatasetError("feature dimension must be >= number of classes");
  if (!(p.feature_noise >= 0.0)) throw DatasetError("feature_noise must be >= 0");

  GraphDataset ds;
  ds.name = "planted_partition";
  ds.num_classes = p.num_classes;
  for (std::int32_t c = 0; c < p.num_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  const std::int64_t n = p.n_per_class * p.num_classes;
  Rng rng(p.seed);
  ds.features = Matrix::Zero(n, p.dim);
  ds.labels.resize(std::size_t(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto c = std::int32_t(i / p.n_per_class);
    ds.labels[std::size_t(i)] = c;
    for (std::int64_t k = 0; k < p.dim; ++k)
      ds.features(i, k) = (k == c ? 1.0 : 0.0) + (p.feature_noise > 0 ? p.feature_noise * rng.normal() : 0.0);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double prob = ds.labels[std::size_t(i)] == ds.labels[std::size_t(j)] ? p.p_intra : p.p_inter;
      if (prob > 0 && rng.bernoulli(prob)) ds.add_edge(i, j);
    }
  }
  return ds;
}

// Adds the reverse of every edge whose reverse is not already present.
inline GraphDataset symmetrize(GraphDataset ds) {
  std::vector<Edge> sorted = ds.edges;
  std::sort(sorted.begin(), sorted.end());
  const auto m = ds.edges.size();
  for (std::size_t k = 0; k < m; ++k) {
    const Edge rev{ds.edges[k].dst, ds.edges[k].src};
    if (rev.src != rev.dst && !std::binary_search(sorted.begin(), sorted.end(), rev))
      ds.add_edge(rev.src, rev.dst, ds.edge_weights[k]);
  }
  return ds;
}

inline GraphDataset row_normalize(GraphDataset ds) {
  for (std::int64_t i = 0; i < ds.features.rows(); ++i) {
    const double s = ds.features.row(i).sum();
    if (s != 0.0) ds.features.row(i) /= s;
  }
  return ds;
}

}  // namespace infoplane
